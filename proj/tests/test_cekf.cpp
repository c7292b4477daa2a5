#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "modal/cekf.hpp"
#include "test_support.hpp"

using namespace modal;
using std::numbers::pi;

namespace {

// Textbook update with an explicit inverse, kept independent of the library path.
void naive_update(Eigen::VectorXd& x, Eigen::MatrixXd& P, const Eigen::VectorXd& y, const Eigen::MatrixXd& H,
                  const Eigen::MatrixXd& R) {
    const Eigen::MatrixXd S = H * P * H.transpose() + R;
    const Eigen::MatrixXd K = P * H.transpose() * S.inverse();
    x = x + K * (y - H * x);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(P.rows(), P.cols());
    P = (I - K * H) * P;
}

Eigen::MatrixXd random_spd(std::mt19937_64& rng, Eigen::Index n) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd A(n, n);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = g(rng);
    return A * A.transpose() / static_cast<double>(n) + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

}  // namespace

TEST(MeasurementUpdate, ZeroObservationGivesZeroGain) {
    std::mt19937_64 rng(1);
    Eigen::VectorXd x = test_support::random_state(rng, 2, 1);
    Eigen::MatrixXd P = random_spd(rng, x.size());
    const Eigen::VectorXd x0 = x;
    const Eigen::MatrixXd P0 = P;
    const Eigen::MatrixXd H = Eigen::MatrixXd::Zero(2, x.size());
    detail::measurement_update(x, P, Eigen::VectorXd::Constant(2, 5.0), H, Eigen::MatrixXd::Identity(2, 2), 0);
    EXPECT_EQ(x, x0);
    EXPECT_EQ(P, P0);
}

TEST(MeasurementUpdate, ScalarToyGain) {
    // M = 1, L = 1: H = [1 1 0 0], P = diag(p1, p2, p3, p4).
    const double p1 = 0.3, p2 = 0.7, R = 0.5;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
    x << 0.1, 0.2, 4.0, 0.01;
    Eigen::MatrixXd P = Eigen::Vector4d(p1, p2, 2.0, 3.0).asDiagonal();
    const Eigen::MatrixXd H = observation_matrix(1, 1);
    const double y = 1.3;
    const double s = R + p1 + p2;
    Eigen::VectorXd K(4);
    K << p1 / s, p2 / s, 0.0, 0.0;
    const Eigen::VectorXd expected = x + K * (y - 0.3);

    detail::measurement_update(x, P, Eigen::VectorXd::Constant(1, y), H, Eigen::MatrixXd::Constant(1, 1, R), 0);
    EXPECT_LT((x - expected).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(P(0, 0), p1 - p1 * p1 / s, 1e-15);
    EXPECT_NEAR(P(0, 1), -p1 * p2 / s, 1e-15);
    EXPECT_EQ(P(2, 2), 2.0);
    EXPECT_EQ(P(3, 3), 3.0);
}

TEST(MeasurementUpdate, MatchesNaiveFormula) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::VectorXd x0 = test_support::random_state(rng, 3, 2);
        const Eigen::MatrixXd P0 = random_spd(rng, x0.size());
        const Eigen::MatrixXd H = observation_matrix(3, 2);
        const Eigen::VectorXd y = Eigen::VectorXd::Random(3);
        const Eigen::MatrixXd R = Eigen::Vector3d(0.1, 0.2, 0.05).asDiagonal();
        Eigen::VectorXd xa = x0, xb = x0;
        Eigen::MatrixXd Pa = P0, Pb = P0;
        detail::measurement_update(xa, Pa, y, H, R, 0);
        naive_update(xb, Pb, y, H, R);
        EXPECT_LT((xa - xb).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((Pa - Pb).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(MeasurementUpdate, BatchEqualsSequentialForDiagonalR) {
    std::mt19937_64 rng(3);
    for (std::size_t M = 2; M <= 5; ++M) {
        const Eigen::VectorXd x0 = test_support::random_state(rng, M, 2);
        const Eigen::MatrixXd P0 = random_spd(rng, x0.size());
        const Eigen::MatrixXd H = observation_matrix(M, 2);
        const Eigen::VectorXd y = Eigen::VectorXd::Random(static_cast<Eigen::Index>(M));
        Eigen::VectorXd r(static_cast<Eigen::Index>(M));
        for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = 0.01 * static_cast<double>(i + 1);

        Eigen::VectorXd xb = x0;
        Eigen::MatrixXd Pb = P0;
        detail::measurement_update(xb, Pb, y, H, r.asDiagonal(), 0);

        Eigen::VectorXd xs = x0;
        Eigen::MatrixXd Ps = P0;
        for (Eigen::Index j = 0; j < r.size(); ++j)
            naive_update(xs, Ps, y.segment(j, 1), H.row(j), Eigen::MatrixXd::Constant(1, 1, r[j]));
        EXPECT_LT((xb - xs).cwiseAbs().maxCoeff(), 1e-10) << "M=" << M;
        EXPECT_LT((Pb - Ps).cwiseAbs().maxCoeff(), 1e-10) << "M=" << M;
    }
}

TEST(MeasurementUpdate, SingularInnovationIsDivergence) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(4, 4);
    // Two identical rows and negligible R: S has rank one.
    Eigen::MatrixXd H(2, 4);
    H << 1, 1, 0, 0, 1, 1, 0, 0;
    P(0, 0) = 1.0;
    Eigen::MatrixXd R = Eigen::MatrixXd::Identity(2, 2) * 1e-300;
    try {
        detail::measurement_update(x, P, Eigen::VectorXd::Zero(2), H, R, 17, 3);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.step(), 17u);
        EXPECT_EQ(e.node(), 3u);
    }
}

TEST(CekfStep, PredictedCovarianceIsFPFtPlusQ) {
    std::mt19937_64 rng(4);
    const StateLayout layout{2, 1};
    const Eigen::VectorXd x0 = test_support::random_state(rng, 2, 1);
    const Eigen::MatrixXd P0 = random_spd(rng, x0.size());
    const FilterConfig cfg = FilterConfig::uniform(2, 1);
    const Eigen::MatrixXd H = observation_matrix(2, 1);
    const Eigen::VectorXd y = Eigen::Vector2d(0.3, -0.1);
    const StepResult r = cekf_step(x0, P0, y, H, cfg, layout, 30.0);

    Eigen::VectorXd xb = x0;
    Eigen::MatrixXd Pb = P0;
    naive_update(xb, Pb, y, H, cfg.measurement_noise());
    const Eigen::MatrixXd F = test_support::finite_difference_jacobian(xb, layout, 30.0);
    const Eigen::MatrixXd expected = F * Pb * F.transpose() + cfg.process_noise(layout);
    EXPECT_LT((r.posterior_state - xb).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((r.predicted_P - expected).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LT((r.predicted_state - propagate(xb, layout, 30.0)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(CekfStep, RejectsInconsistentDimensions) {
    const StateLayout layout{2, 1};
    const FilterConfig cfg = FilterConfig::uniform(2, 1);
    EXPECT_THROW(cekf_step(Eigen::VectorXd::Zero(5), Eigen::MatrixXd::Identity(6, 6), Eigen::VectorXd::Zero(2),
                           observation_matrix(2, 1), cfg, layout, 30.0),
                 ValidationError);
}

TEST(FilterConfig, ValidationAndQStructure) {
    const StateLayout layout{3, 2};
    FilterConfig cfg = FilterConfig::uniform(3, 2);
    EXPECT_NO_THROW(cfg.validate(layout));
    const Eigen::MatrixXd Q = cfg.process_noise(layout);
    const auto amp = static_cast<Eigen::Index>(layout.amplitude_dim());
    EXPECT_TRUE(Q.topLeftCorner(amp, amp).isZero(0.0));
    EXPECT_EQ(Q.bottomRightCorner(4, 4), Eigen::MatrixXd::Identity(4, 4) * 1e-9);
    cfg.r_diag[1] = 0.0;
    EXPECT_THROW(cfg.validate(layout), ValidationError);
    cfg = FilterConfig::uniform(3, 2);
    cfg.q_mode_diag[0] = -1.0;
    EXPECT_THROW(cfg.validate(layout), ValidationError);
    cfg = FilterConfig::uniform(3, 2);
    cfg.p0_diag.pop_back();
    EXPECT_THROW(cfg.validate(layout), ValidationError);
}

TEST(CekfRun, CovarianceStaysSymmetricPsd) {
    std::mt19937_64 rng(5);
    const auto syn = test_support::random_scenario(rng, 3, 2, 30.0, 300, NoiseSnr{30.0});
    const EstimateTrace t = cekf_run(syn.window, syn.truth, FilterConfig::uniform(3, 2));
    EXPECT_EQ(t.final_P, t.final_P.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t.final_P);
    EXPECT_GT(es.eigenvalues().minCoeff(), -1e-12);
    EXPECT_EQ(t.length(), 300u);
    EXPECT_EQ(t.innovation_norms.size(), 300u);
}

TEST(CekfRun, NoiselessTruthIsAFixedPoint) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        const auto syn = test_support::random_scenario(rng, 4, 2, 30.0, 300, NoiseOff{});
        const EstimateTrace t = cekf_run(syn.window, syn.truth, FilterConfig::uniform(4, 2));
        for (std::size_t l = 0; l < 2; ++l) {
            EXPECT_NEAR(t.modes[l].omega, syn.truth.modes[l].omega, 1e-9 * syn.truth.modes[l].omega);
            EXPECT_NEAR(t.modes[l].sigma, syn.truth.modes[l].sigma, 1e-9);
        }
        for (double e : t.innovation_norms) EXPECT_LT(e, 1e-9);
    }
}

TEST(CekfRun, ConvergesFromOffsetFrequency) {
    const ModeSet truth({Mode::from_hz(0.5, 0.05), Mode::from_hz(1.2, 0.1)});
    std::vector<ChannelSpec> channels{{1.0, {0.1, 0.9}}, {0.8, {-0.4, 2.0}}, {1.3, {1.2, -1.0}}};
    const auto syn = synthesize_window(truth, channels, 30.0, 600, NoiseOff{}, 1);
    Eigen::VectorXd init = syn.truth.vectorize();
    const StateLayout layout = syn.truth.layout();
    for (std::size_t l = 0; l < 2; ++l) init[static_cast<Eigen::Index>(layout.omega_index(l))] *= 1.1;
    FilterConfig::Defaults d;
    d.p0_omega = 1.0;
    const EstimateTrace t = cekf_run(syn.window, init, FilterConfig::uniform(3, 2, d), 2);
    for (std::size_t l = 0; l < 2; ++l)
        EXPECT_LT(test_support::rel_err(t.modes[l].omega, truth[l].omega), 1e-3) << "mode " << l;
}

TEST(CekfRun, SingleChannel) {
    const ModeSet truth({Mode{4 * pi, 0.0126}});
    const auto syn = synthesize_window(truth, {ChannelSpec{1.0, {0.0}}}, 30.0, 300, NoiseOff{}, 1);
    const EstimateTrace t = cekf_run(syn.window, syn.truth, FilterConfig::uniform(1, 1));
    EXPECT_NEAR(t.modes[0].freq_hz, 2.0, 1e-9);
    EXPECT_NEAR(damping_ratio(t.modes[0].sigma, t.modes[0].omega), 0.001, 1e-5);
}

TEST(CekfRun, RejectsMismatchedInit) {
    const ModeSet truth({Mode{4 * pi, 0.0126}});
    const auto syn = synthesize_window(truth, {ChannelSpec{1.0, {0.0}}}, 30.0, 30, NoiseOff{}, 1);
    EXPECT_THROW(cekf_run(syn.window, Eigen::VectorXd::Zero(6), FilterConfig::uniform(1, 1), 1), ValidationError);
}

TEST(ExtractModes, RoundTripAndOrdering) {
    SystemState s{{ChannelAmplitude{{state_from_polar(1.5, 0.3), state_from_polar(0.5, -1.0)}}},
                  ModeSet::unchecked({Mode{5.0, 0.2}, Mode{2.0, 0.1}})};
    const auto est = extract_modes(s);
    ASSERT_EQ(est.size(), 2u);
    EXPECT_EQ(est[0].omega, 2.0);
    EXPECT_NEAR(est[0].channels[0].amplitude, 0.5, 1e-14);
    EXPECT_NEAR(est[0].channels[0].phase, -1.0, 1e-14);
    EXPECT_NEAR(est[1].channels[0].amplitude, 1.5, 1e-14);
    EXPECT_NEAR(est[1].freq_hz, 5.0 / (2 * pi), 1e-15);
    const ModeSet back = to_mode_set(est);
    EXPECT_EQ(back[0].sigma, 0.1);
    EXPECT_EQ(back[1].sigma, 0.2);
}

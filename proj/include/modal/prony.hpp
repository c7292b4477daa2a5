#pragma once

// Prony-type baselines: multi-channel linear prediction with shared poles,
// its coordinator-based consensus ADMM variant, and a residue fit that
// recovers per-channel amplitudes for given modes.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "modal/errors.hpp"
#include "modal/signal_model.hpp"

namespace modal {

struct PronyModel {
    std::size_t order = 0;
    Eigen::VectorXd coeffs;  ///< z^p + c1 z^(p-1) + ... + cp
    std::vector<std::complex<double>> poles;
    ModeSet modes;
};

/// Linear-prediction order. Zero selects the default overmodeled order.
struct PronyOptions {
    std::size_t order = 0;
};

inline constexpr std::size_t extra_prediction_order = 14;

/// 2L + 14, capped at a third of the window but never below 2L.
inline std::size_t default_prediction_order(std::size_t modes, std::size_t samples) {
    return std::max(2 * modes, std::min(2 * modes + extra_prediction_order, samples / 3));
}

namespace detail {

/// Rows y[n-1..n-p] -> target y[n] for n = p..N-1 on one channel.
inline void prediction_system(const Eigen::Ref<const Eigen::RowVectorXd>& y, std::size_t order, Eigen::MatrixXd& A,
                              Eigen::VectorXd& b) {
    const auto N = y.size();
    const auto p = static_cast<Eigen::Index>(order);
    const Eigen::Index rows = N - p;
    A.resize(rows, p);
    b.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index n = r + p;
        for (Eigen::Index i = 0; i < p; ++i) A(r, i) = -y[n - 1 - i];
        b[r] = y[n];
    }
}

inline std::vector<std::complex<double>> polynomial_roots(const Eigen::VectorXd& coeffs) {
    const auto p = coeffs.size();
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(p, p);
    companion.row(0) = -coeffs.transpose();
    for (Eigen::Index i = 1; i < p; ++i) companion(i, i - 1) = 1.0;
    const Eigen::EigenSolver<Eigen::MatrixXd> es(companion, false);
    if (es.info() != Eigen::Success) throw DegenerateSignalError("characteristic polynomial root finding failed");
    std::vector<std::complex<double>> roots(es.eigenvalues().begin(), es.eigenvalues().end());
    return roots;
}

inline constexpr double pure_decay_imag = 1e-9;

/// z -> lambda = fs ln z, upper half plane only.
inline std::vector<Mode> oscillatory_poles(const std::vector<std::complex<double>>& poles, double fs) {
    std::vector<Mode> modes;
    for (const auto& z : poles) {
        if (z == 0.0) continue;
        const std::complex<double> lambda = fs * std::log(z);
        if (!(lambda.imag() > pure_decay_imag)) continue;  // conjugate twin or pure decay
        modes.push_back(Mode{lambda.imag(), -lambda.real()});
    }
    return modes;
}

/// Energy of every channel projected onto the damped cos/sin pair of one mode.
inline double projected_energy(const MeasurementWindow& window, const Mode& mode) {
    const auto N = static_cast<Eigen::Index>(window.length());
    Eigen::MatrixXd basis(N, 2);
    for (Eigen::Index k = 0; k < N; ++k) {
        const double t = static_cast<double>(k) / window.fs;
        const double env = std::exp(-mode.sigma * t);
        basis(k, 0) = env * std::cos(mode.omega * t);
        basis(k, 1) = env * std::sin(mode.omega * t);
    }
    if (!basis.allFinite()) return 0.0;
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
    const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(N, 2);
    return (window.samples * Q).squaredNorm();
}

/// The `count` oscillatory poles carrying the most signal energy, sorted by omega.
inline ModeSet select_modes(const std::vector<std::complex<double>>& poles, const MeasurementWindow& window,
                            std::size_t count) {
    std::vector<Mode> candidates = oscillatory_poles(poles, window.fs);
    if (candidates.size() < count) throw DegenerateSignalError("fewer oscillatory poles than requested modes");
    if (candidates.size() > count) {
        std::vector<std::pair<double, Mode>> ranked;
        for (const Mode& m : candidates) ranked.emplace_back(projected_energy(window, m), m);
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        candidates.clear();
        for (std::size_t i = 0; i < count; ++i) candidates.push_back(ranked[i].second);
    }
    std::sort(candidates.begin(), candidates.end(), [](const Mode& a, const Mode& b) { return a.omega < b.omega; });
    return ModeSet::unchecked(std::move(candidates));
}

inline std::size_t resolve_order(const MeasurementWindow& window, std::size_t modes, const PronyOptions& opts) {
    window.validate();
    if (modes < 1) throw ValidationError("need at least one mode");
    if (window.length() <= 4 * modes + 2) throw ValidationError("window too short for the requested model order");
    const std::size_t order = opts.order == 0 ? default_prediction_order(modes, window.length()) : opts.order;
    if (order < 2 * modes) throw ValidationError("prediction order must be at least 2L");
    if (window.length() < order + 2) throw ValidationError("window too short for the prediction order");
    return order;
}

/// Relative singular-value cutoff separating signal from round-off in noiseless data.
inline constexpr double rank_threshold = 1e-9;

/// Minimum-norm solution; rank below 2L means there is nothing to fit.
inline Eigen::VectorXd min_norm_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, std::size_t modes) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
    cod.setThreshold(rank_threshold);
    cod.compute(A);
    if (cod.rank() < static_cast<Eigen::Index>(2 * modes))
        throw DegenerateSignalError("prediction matrix is rank deficient");
    return cod.solve(b);
}

}  // namespace detail

/// Least-squares Prony with prediction coefficients shared by every channel.
/// Above order 2L the extra roots absorb noise; the L poles with the most
/// projected signal energy are reported.
inline PronyModel prony_model(const MeasurementWindow& window, std::size_t modes, const PronyOptions& opts = {}) {
    const std::size_t order = detail::resolve_order(window, modes, opts);
    const auto rows_per = static_cast<Eigen::Index>(window.length() - order);
    const auto M = static_cast<Eigen::Index>(window.channels());
    Eigen::MatrixXd A(rows_per * M, static_cast<Eigen::Index>(order));
    Eigen::VectorXd b(rows_per * M);
    Eigen::MatrixXd Ac;
    Eigen::VectorXd bc;
    for (Eigen::Index c = 0; c < M; ++c) {
        detail::prediction_system(window.samples.row(c), order, Ac, bc);
        A.middleRows(c * rows_per, rows_per) = Ac;
        b.segment(c * rows_per, rows_per) = bc;
    }

    PronyModel model;
    model.order = order;
    model.coeffs = detail::min_norm_solve(A, b, modes);
    model.poles = detail::polynomial_roots(model.coeffs);
    model.modes = detail::select_modes(model.poles, window, modes);
    return model;
}

inline ModeSet prony_fit(const MeasurementWindow& window, std::size_t modes, const PronyOptions& opts = {}) {
    return prony_model(window, modes, opts).modes;
}

struct AdmmOptions {
    double rho = 0.01;
    double tol = 0.01;
    std::size_t max_iters = 500;
    std::size_t order = 0;  ///< as PronyOptions::order
};

struct AdmmResult {
    ModeSet modes;
    std::size_t iterations = 0;
    Eigen::VectorXd consensus;              ///< final z
    std::vector<Eigen::VectorXd> locals;    ///< final b_m
    double primal_residual = 0.0;           ///< max_m ||b_m - z||_inf
};

/// Consensus ADMM on the shared prediction coefficients. Each node holds one
/// channel; a coordinator averages b_m + u_m and broadcasts the result.
inline AdmmResult admm_prony(const MeasurementWindow& window, std::size_t modes, const AdmmOptions& opts = {}) {
    const std::size_t order = detail::resolve_order(window, modes, PronyOptions{opts.order});
    if (!(opts.rho > 0.0)) throw ValidationError("rho must be positive");
    if (!(opts.tol > 0.0)) throw ValidationError("tol must be positive");
    const auto p = static_cast<Eigen::Index>(order);
    const std::size_t M = window.channels();

    // Per-node normal equations, factored once for the regularized solve.
    std::vector<Eigen::LLT<Eigen::MatrixXd>> solvers;
    std::vector<Eigen::VectorXd> Atb(M);
    std::vector<Eigen::VectorXd> b(M);
    std::vector<Eigen::VectorXd> u(M, Eigen::VectorXd::Zero(p));
    Eigen::MatrixXd A;
    Eigen::VectorXd y;
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(p, p);
    for (std::size_t m = 0; m < M; ++m) {
        detail::prediction_system(window.samples.row(static_cast<Eigen::Index>(m)), order, A, y);
        b[m] = detail::min_norm_solve(A, y, modes);  // local linear estimate
        Atb[m] = A.transpose() * y;
        solvers.emplace_back(A.transpose() * A + 0.5 * opts.rho * I);
    }

    auto average = [&] {
        Eigen::VectorXd z = Eigen::VectorXd::Zero(p);
        for (std::size_t m = 0; m < M; ++m) z += b[m] + u[m];
        return Eigen::VectorXd(z / static_cast<double>(M));
    };

    Eigen::VectorXd z = average();
    AdmmResult out;
    for (std::size_t it = 1; it <= opts.max_iters; ++it) {
        for (std::size_t m = 0; m < M; ++m) b[m] = solvers[m].solve(Atb[m] + 0.5 * opts.rho * (z - u[m]));
        const Eigen::VectorXd z_next = average();
        for (std::size_t m = 0; m < M; ++m) u[m] += b[m] - z_next;
        const double change = (z_next - z).lpNorm<Eigen::Infinity>();
        z = z_next;
        if (!z.allFinite()) throw DegenerateSignalError("ADMM iterate became non-finite");
        double primal = 0.0;
        for (const auto& bm : b) primal = std::max(primal, (bm - z).lpNorm<Eigen::Infinity>());
        if (change < opts.tol && primal < 10.0 * opts.tol) {
            out.iterations = it;
            out.consensus = z;
            out.locals = b;
            out.primal_residual = primal;
            out.modes = detail::select_modes(detail::polynomial_roots(z), window, modes);
            return out;
        }
    }
    throw NonConvergenceError<Eigen::VectorXd>("ADMM did not converge within max_iters", z);
}

/// Per-channel polar amplitudes for each mode, referenced to sample 0.
struct ResidueFit {
    std::vector<std::vector<Polar>> channels;  ///< [channel][mode]
    Eigen::MatrixXd fitted;                     ///< same shape as the window
    std::vector<double> residual_norms;         ///< per channel

    /// State at sample 0 reproducing `fitted` under the block-sum observation.
    SystemState initial_state(const ModeSet& modes) const {
        SystemState s;
        s.modes = modes;
        for (const auto& ch : channels) {
            ChannelAmplitude a;
            for (const Polar& p : ch) a.components.push_back(state_from_polar(p.amplitude, p.phase));
            s.amplitudes.push_back(std::move(a));
        }
        return s;
    }
};

inline constexpr double max_basis_condition = 1e10;

/// Least squares of each channel on the damped cos/sin basis of `modes`.
inline ResidueFit residue_fit(const MeasurementWindow& window, const ModeSet& modes) {
    window.validate();
    if (modes.empty()) throw ValidationError("need at least one mode");
    const auto N = static_cast<Eigen::Index>(window.length());
    const auto L = static_cast<Eigen::Index>(modes.size());
    Eigen::MatrixXd basis(N, 2 * L);
    for (Eigen::Index k = 0; k < N; ++k) {
        const double t = static_cast<double>(k) / window.fs;
        for (Eigen::Index l = 0; l < L; ++l) {
            const Mode& m = modes[static_cast<std::size_t>(l)];
            const double env = std::exp(-m.sigma * t);
            basis(k, 2 * l) = env * std::cos(m.omega * t);
            basis(k, 2 * l + 1) = env * std::sin(m.omega * t);
        }
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(basis, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || !(sv[sv.size() - 1] > 0.0) || sv[0] / sv[sv.size() - 1] > max_basis_condition)
        throw ValidationError("residue basis is ill-conditioned (near-duplicate modes?)");

    ResidueFit out;
    out.fitted.resize(window.samples.rows(), N);
    for (Eigen::Index c = 0; c < window.samples.rows(); ++c) {
        const Eigen::VectorXd y = window.samples.row(c).transpose();
        const Eigen::VectorXd coef = svd.solve(y);
        std::vector<Polar> polar(static_cast<std::size_t>(L));
        for (Eigen::Index l = 0; l < L; ++l) {
            // C cos + S sin = a cos(theta + phi) with C = a cos phi, S = -a sin phi.
            const double C = coef[2 * l];
            const double S = coef[2 * l + 1];
            polar[static_cast<std::size_t>(l)] = Polar{std::hypot(C, S), std::atan2(-S, C)};
        }
        out.channels.push_back(std::move(polar));
        const Eigen::VectorXd fit = basis * coef;
        out.fitted.row(c) = fit.transpose();
        out.residual_norms.push_back((y - fit).norm());
    }
    return out;
}

}  // namespace modal

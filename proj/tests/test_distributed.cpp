#include <algorithm>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "modal/distributed.hpp"
#include "test_support.hpp"

using namespace modal;
using std::numbers::pi;

namespace {

std::vector<FilterConfig> full_configs(std::size_t M, std::size_t L, const FilterConfig::Defaults& d = {}) {
    return std::vector<FilterConfig>(M, FilterConfig::uniform(M, L, d));
}

std::vector<FilterConfig> local_configs(const Topology& topo, std::size_t L, const FilterConfig::Defaults& d = {}) {
    std::vector<FilterConfig> out;
    for (std::size_t m = 0; m < topo.size(); ++m) out.push_back(FilterConfig::uniform(topo.degree(m), L, d));
    return out;
}

Synthesis scenario(std::size_t M, std::size_t L, std::uint64_t seed, const NoiseSpec& noise, std::size_t n = 300) {
    std::mt19937_64 rng(seed);
    return test_support::random_scenario(rng, M, L, 30.0, n, noise);
}

Eigen::VectorXd offset_init(const SystemState& truth, double factor) {
    Eigen::VectorXd x = truth.vectorize();
    const StateLayout layout = truth.layout();
    for (std::size_t l = 0; l < layout.modes; ++l) x[static_cast<Eigen::Index>(layout.omega_index(l))] *= factor;
    return x;
}

// Truth state propagated to the last sample of the window.
Eigen::VectorXd fitted_state_at_end(const Synthesis& syn) {
    Eigen::VectorXd x = syn.truth.vectorize();
    for (std::size_t k = 1; k < syn.window.length(); ++k) x = propagate(x, syn.truth.layout(), syn.window.fs);
    return x;
}

}  // namespace

TEST(Topology, RingAndCompleteNeighbourCounts) {
    const Topology ring = Topology::ring(5);
    for (std::size_t m = 0; m < 5; ++m) EXPECT_EQ(ring.degree(m), 3u);
    EXPECT_EQ(ring.neighbors(0), (std::vector<std::size_t>{0, 1, 4}));
    EXPECT_EQ(ring.edges().size(), 5u);
    const Topology full = Topology::complete(4);
    for (std::size_t m = 0; m < 4; ++m) EXPECT_EQ(full.degree(m), 4u);
    EXPECT_EQ(Topology::ring(2).degree(0), 2u);
    EXPECT_EQ(Topology::complete(1).degree(0), 1u);
}

TEST(Topology, RejectsDisconnectedAndMalformed) {
    EXPECT_THROW(Topology(4, {{0, 1}, {2, 3}}), ValidationError);
    EXPECT_THROW(Topology(3, {{0, 5}}), ValidationError);
    EXPECT_THROW(Topology::ring(1), ValidationError);
    EXPECT_THROW(Topology::parse_spec("ring:x"), ValidationError);
    EXPECT_THROW(Topology::parse_spec("/nonexistent/edges.txt"), ValidationError);
    std::istringstream bad("0 1 2\n");
    EXPECT_THROW(Topology::parse_edge_list(bad), ValidationError);
}

TEST(Topology, ParsesEdgeListAndSpecs) {
    std::istringstream in("# star\n0 1\n0 2  # hub\n\n0 3\n");
    const Topology star = Topology::parse_edge_list(in);
    EXPECT_EQ(star.size(), 4u);
    EXPECT_EQ(star.degree(0), 4u);
    EXPECT_EQ(star.degree(3), 2u);
    EXPECT_EQ(star.common_neighbors(1, 2), (std::vector<std::size_t>{0}));
    EXPECT_EQ(Topology::parse_spec("ring:6").size(), 6u);
    EXPECT_EQ(Topology::parse_spec("complete:3").degree(2), 3u);
}

TEST(Weights, UniformRingValues) {
    const Topology ring = Topology::ring(5);
    const DiffusionWeights c = uniform_weights(ring);
    const ReducedDiffusionWeights d = uniform_reduced_weights(ring);
    for (std::size_t m = 0; m < 5; ++m) {
        double sum = 0.0;
        for (double w : c.c[m]) {
            EXPECT_DOUBLE_EQ(w, 1.0 / 3.0);
            sum += w;
        }
        EXPECT_NEAR(sum, 1.0, 1e-15);
        const auto& nbrs = ring.neighbors(m);
        for (std::size_t a = 0; a < nbrs.size(); ++a) {
            const double expected = nbrs[a] == m ? 1.0 / 3.0 : 0.5;
            for (double w : d.d[m][a]) EXPECT_DOUBLE_EQ(w, expected);
        }
    }
}

TEST(Weights, ValidationRejectsBadRows) {
    const Topology ring = Topology::ring(4);
    DiffusionWeights c = uniform_weights(ring);
    c.c[2][0] += 0.1;
    EXPECT_THROW(c.validate(ring), ValidationError);
    Eigen::MatrixXd w = Eigen::MatrixXd::Constant(4, 4, 0.25);
    EXPECT_THROW(DiffusionWeights::from_matrix(ring, w), ValidationError);  // mass on non-neighbours
    EXPECT_NO_THROW(DiffusionWeights::from_matrix(Topology::complete(4), w));
    ReducedDiffusionWeights d = uniform_reduced_weights(ring);
    d.d[0][1].push_back(0.0);
    EXPECT_THROW(d.validate(ring), ValidationError);
}

TEST(Mailbox, NonNeighbourReadThrows) {
    const Topology ring = Topology::ring(5);
    AccessLog log;
    Mailbox<int> box(ring, &log);
    for (std::size_t m = 0; m < 5; ++m) box.post(m, static_cast<int>(m));
    EXPECT_EQ(box.read(0, 4), 4);
    EXPECT_THROW(box.read(0, 2), InvariantViolation);
    box.clear();
    EXPECT_THROW(box.read(0, 1), InvariantViolation);
    EXPECT_EQ(log.size(), 1u);
}

TEST(ReducedIndex, RingOffsets) {
    const Topology ring = Topology::ring(5);
    const std::size_t L = 2;
    const ReducedIndex index(ring, L);
    // Node 0 = {0,1,4}. Neighbour slot 1 is j = 1, contributors N_0 & N_1 = {0, 1}.
    ASSERT_EQ(index.sources[0][1].size(), 2u);
    EXPECT_EQ(index.sources[0][1][0].contributor, 0u);
    EXPECT_EQ(index.sources[0][1][0].offset, 2 * L);  // slot of 1 in {0,1,4}
    EXPECT_EQ(index.sources[0][1][1].contributor, 1u);
    EXPECT_EQ(index.sources[0][1][1].offset, 2 * L);  // slot of 1 in {0,1,2}
    // Neighbour slot 2 is j = 4, contributors {0, 4}; 4 sits last in both {0,1,4} and {0,3,4}.
    EXPECT_EQ(index.sources[0][2][0].offset, 4 * L);
    EXPECT_EQ(index.sources[0][2][1].contributor, 4u);
    EXPECT_EQ(index.sources[0][2][1].offset, 4 * L);
    // Node 2's own block: contributors {1,2,3}; 2 is slot 2 in {0,1,2}, slot 1 in {1,2,3}, slot 0 in {2,3,4}.
    const auto& own = index.sources[2][1];
    ASSERT_EQ(own.size(), 3u);
    EXPECT_EQ(own[0].offset, 4 * L);
    EXPECT_EQ(own[1].offset, 2 * L);
    EXPECT_EQ(own[2].offset, 0u);
}

TEST(Dekf, CompleteGraphMatchesCentralized) {
    const auto syn = scenario(5, 2, 31, NoiseSnr{30.0});
    const Topology topo = Topology::complete(5);
    FilterConfig::Defaults d;
    d.p0_omega = 1.0;
    const Eigen::VectorXd init = offset_init(syn.truth, 1.05);
    const EstimateTrace central = cekf_run(syn.window, init, FilterConfig::uniform(5, 2, d), 2);
    const auto nodes = dekf_run(syn.window, topo, uniform_weights(topo), std::vector<Eigen::VectorXd>(5, init),
                                full_configs(5, 2, d), 2);
    for (const EstimateTrace& t : nodes)
        EXPECT_LT((t.posteriors - central.posteriors).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Dekf, SingleNodeMatchesCentralized) {
    const auto syn = scenario(1, 1, 32, NoiseSnr{40.0});
    const Topology topo = Topology::complete(1);
    const Eigen::VectorXd init = offset_init(syn.truth, 0.97);
    const EstimateTrace central = cekf_run(syn.window, init, FilterConfig::uniform(1, 1), 1);
    const auto nodes = dekf_run(syn.window, topo, uniform_weights(topo), {init}, full_configs(1, 1), 1);
    EXPECT_LT((nodes[0].posteriors - central.posteriors).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(DekfR, CompleteGraphMatchesDekf) {
    const auto syn = scenario(4, 2, 33, NoiseSnr{30.0});
    const Topology topo = Topology::complete(4);
    const Eigen::VectorXd init = offset_init(syn.truth, 1.03);
    const auto full = dekf_run(syn.window, topo, uniform_weights(topo), std::vector<Eigen::VectorXd>(4, init),
                               full_configs(4, 2), 2);
    const auto reduced = dekfr_run(syn.window, topo, uniform_weights(topo), uniform_reduced_weights(topo),
                                   std::vector<Eigen::VectorXd>(4, init), local_configs(topo, 2), 2);
    for (std::size_t m = 0; m < 4; ++m)
        EXPECT_LT((full[m].posteriors - reduced[m].posteriors).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Dekf, NoiselessRingFixedPoint) {
    const auto syn = scenario(5, 2, 34, NoiseOff{});
    const Topology topo = Topology::ring(5);
    const auto nodes = dekf_run(syn.window, topo, uniform_weights(topo),
                                std::vector<Eigen::VectorXd>(5, syn.truth.vectorize()), full_configs(5, 2), 2);
    for (const EstimateTrace& t : nodes) {
        for (std::size_t l = 0; l < 2; ++l) {
            EXPECT_NEAR(t.modes[l].omega, syn.truth.modes[l].omega, 1e-9);
            EXPECT_NEAR(t.modes[l].sigma, syn.truth.modes[l].sigma, 1e-9);
        }
    }
}

TEST(DekfR, NoiselessRingFixedPoint) {
    const auto syn = scenario(5, 2, 35, NoiseOff{});
    const Topology topo = Topology::ring(5);
    const auto nodes = dekfr_run(syn.window, topo, uniform_weights(topo), uniform_reduced_weights(topo),
                                 restrict_to_neighborhoods(syn.truth, topo), local_configs(topo, 2), 2);
    for (std::size_t m = 0; m < 5; ++m) {
        const ReducedState expected = ReducedState::restrict(
            SystemState::devectorize(fitted_state_at_end(syn), 5, 2), m, topo.neighbors(m));
        EXPECT_LT((nodes[m].final_state - expected.vectorize()).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(Diffusion, NodeOrderDoesNotMatter) {
    const auto syn = scenario(5, 1, 36, NoiseSnr{30.0});
    const Topology topo = Topology::ring(5);
    const Eigen::VectorXd init = offset_init(syn.truth, 1.1);
    DiffusionOptions shuffled;
    shuffled.node_order = {3, 0, 4, 2, 1};

    const auto a = dekf_run(syn.window, topo, uniform_weights(topo), std::vector<Eigen::VectorXd>(5, init),
                            full_configs(5, 1), 1);
    const auto b = dekf_run(syn.window, topo, uniform_weights(topo), std::vector<Eigen::VectorXd>(5, init),
                            full_configs(5, 1), 1, shuffled);
    const auto locals = restrict_to_neighborhoods(SystemState::devectorize(init, 5, 1), topo);
    const auto c = dekfr_run(syn.window, topo, uniform_weights(topo), uniform_reduced_weights(topo), locals,
                             local_configs(topo, 1), 1);
    const auto d = dekfr_run(syn.window, topo, uniform_weights(topo), uniform_reduced_weights(topo), locals,
                             local_configs(topo, 1), 1, shuffled);
    for (std::size_t m = 0; m < 5; ++m) {
        EXPECT_EQ(a[m].posteriors, b[m].posteriors);
        EXPECT_EQ(c[m].posteriors, d[m].posteriors);
    }
    shuffled.node_order = {0, 0, 1, 2, 3};
    EXPECT_THROW(dekf_run(syn.window, topo, uniform_weights(topo), std::vector<Eigen::VectorXd>(5, init),
                          full_configs(5, 1), 1, shuffled),
                 ValidationError);
}

TEST(Diffusion, OnlyNeighboursAreRead) {
    const auto syn = scenario(6, 1, 37, NoiseSnr{30.0}, 60);
    const Topology topo = Topology::ring(6);
    AccessLog meas, est;
    DiffusionOptions spy;
    spy.measurement_log = &meas;
    spy.estimate_log = &est;
    dekfr_run(syn.window, topo, uniform_weights(topo), uniform_reduced_weights(topo),
              restrict_to_neighborhoods(syn.truth, topo), local_configs(topo, 1), 1, spy);
    ASSERT_FALSE(meas.empty());
    ASSERT_FALSE(est.empty());
    for (auto [reader, sender] : meas) EXPECT_TRUE(topo.adjacent(reader, sender));
    for (auto [reader, sender] : est) EXPECT_TRUE(topo.adjacent(reader, sender));
    // Every node reads each neighbour's measurement once per step.
    EXPECT_EQ(meas.size(), 60u * 18u);

    meas.clear();
    est.clear();
    dekf_run(syn.window, topo, uniform_weights(topo), std::vector<Eigen::VectorXd>(6, syn.truth.vectorize()),
             full_configs(6, 1), 1, spy);
    for (auto [reader, sender] : meas) EXPECT_TRUE(topo.adjacent(reader, sender));
    for (auto [reader, sender] : est) EXPECT_TRUE(topo.adjacent(reader, sender));
}

TEST(Diffusion, RejectsMismatchedInputs) {
    const auto syn = scenario(5, 1, 38, NoiseOff{}, 30);
    const Topology ring4 = Topology::ring(4);
    EXPECT_THROW(dekf_run(syn.window, ring4, uniform_weights(ring4), std::vector<Eigen::VectorXd>(4),
                          full_configs(4, 1), 1),
                 ValidationError);
    const Topology ring5 = Topology::ring(5);
    EXPECT_THROW(dekfr_run(syn.window, ring5, uniform_weights(ring5), uniform_reduced_weights(ring5),
                           std::vector<Eigen::VectorXd>(5, syn.truth.vectorize()), local_configs(ring5, 1), 1),
                 ValidationError);
}

TEST(Consensus, SpreadAndMean) {
    auto node = [](double omega, double sigma) {
        EstimateTrace t;
        t.modes.push_back(ModeEstimate{omega / (2 * pi), omega, sigma, {}});
        return t;
    };
    const std::vector<EstimateTrace> nodes{node(10.0, 0.1), node(11.0, 0.1), node(12.0, 0.4)};
    const ConsensusSpread s = consensus_spread(nodes);
    EXPECT_NEAR(s.freq_rel, 2.0 / 11.0, 1e-15);
    EXPECT_NEAR(s.sigma_rel, 0.3 / 0.2, 1e-12);
    const ModeSet mean = mean_modes(nodes);
    EXPECT_NEAR(mean[0].omega, 11.0, 1e-14);
    EXPECT_NEAR(mean[0].sigma, 0.2, 1e-15);
    EXPECT_THROW(consensus_spread({node(1.0, 0.1)}), ValidationError);
    const std::vector<EstimateTrace> same{node(3.0, 0.0), node(3.0, 0.0)};
    EXPECT_EQ(consensus_spread(same).freq_rel, 0.0);
    EXPECT_EQ(consensus_spread(same).sigma_rel, 0.0);
}

TEST(Dekf, RingConvergesToConsensusNearTruth) {
    const ModeSet truth({Mode{4 * pi, 0.0126}});
    std::vector<ChannelSpec> channels;
    for (int c = 0; c < 5; ++c) channels.push_back(ChannelSpec{1.0 + 0.2 * c, {0.3 * c}});
    const auto syn = synthesize_window(truth, channels, 30.0, 300, NoiseSnr{50.0}, 7);
    const Topology topo = Topology::ring(5);
    FilterConfig::Defaults d;
    d.r = 1e-4;
    d.q_mode = 1e-8;
    d.p0_omega = 1.0;
    const Eigen::VectorXd init = offset_init(syn.truth, 1.05);
    const auto nodes = dekfr_run(syn.window, topo, uniform_weights(topo), uniform_reduced_weights(topo),
                                 restrict_to_neighborhoods(SystemState::devectorize(init, 5, 1), topo),
                                 local_configs(topo, 1, d), 1);
    for (const EstimateTrace& t : nodes) EXPECT_LT(test_support::rel_err(t.modes[0].omega, 4 * pi), 1e-3);
    EXPECT_LT(consensus_spread(nodes).freq_rel, 1e-3);
}

#pragma once

// Diffusion extended Kalman filters over a PMU graph.
//
// Every round runs in two phases separated by a barrier. In the incremental
// phase each node folds its neighbours' measurements into a pre-estimate with
// sequential scalar updates. In the diffusion phase each node replaces its
// estimate with a convex combination of its neighbours' pre-estimates. The
// error matrices P are not touched by diffusion. All cross-node traffic goes
// through Mailbox, which rejects reads from non-neighbours.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "modal/cekf.hpp"
#include "modal/errors.hpp"
#include "modal/signal_model.hpp"
#include "modal/topology.hpp"

namespace modal {

struct DiffusionOptions {
    /// Order in which nodes are visited within each phase. Empty means ascending.
    std::vector<std::size_t> node_order;
    AccessLog* measurement_log = nullptr;
    AccessLog* estimate_log = nullptr;
};

namespace detail {

inline std::vector<std::size_t> visit_order(const DiffusionOptions& opts, std::size_t nodes) {
    if (opts.node_order.empty()) {
        std::vector<std::size_t> order(nodes);
        std::iota(order.begin(), order.end(), std::size_t{0});
        return order;
    }
    std::vector<std::size_t> sorted = opts.node_order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i] != i || sorted.size() != nodes)
            throw ValidationError("node order must be a permutation of all nodes");
    }
    return opts.node_order;
}

inline void check_window_topology(const MeasurementWindow& window, const Topology& topo) {
    window.validate();
    if (window.channels() != topo.size()) throw ValidationError("topology node count must equal channel count");
}

inline void finish_traces(std::vector<EstimateTrace>& traces, const std::vector<Eigen::MatrixXd>& P) {
    for (std::size_t m = 0; m < traces.size(); ++m) {
        EstimateTrace& t = traces[m];
        t.final_P = P[m];
        const auto amplitudes = unstack_amplitudes(t.final_state, t.layout);
        t.modes = extract_modes(amplitudes, unstack_modes(t.final_state, t.layout));
    }
}

}  // namespace detail

/// Full-state diffusion EKF. Node configs use the full layout (r_diag has M entries).
inline std::vector<EstimateTrace> dekf_run(const MeasurementWindow& window, const Topology& topo,
                                           const DiffusionWeights& weights,
                                           const std::vector<Eigen::VectorXd>& inits,
                                           const std::vector<FilterConfig>& configs, std::size_t modes,
                                           const DiffusionOptions& opts = {}) {
    detail::check_window_topology(window, topo);
    weights.validate(topo);
    const std::size_t M = topo.size();
    const StateLayout layout{M, modes};
    if (inits.size() != M || configs.size() != M) throw ValidationError("one init and one config per node required");
    for (std::size_t m = 0; m < M; ++m) {
        if (static_cast<std::size_t>(inits[m].size()) != layout.dim())
            throw ValidationError("node init dimension must be 2ML + 2L");
        configs[m].validate(layout);
    }
    const auto order = detail::visit_order(opts, M);
    const Eigen::MatrixXd H = observation_matrix(M, modes);

    std::vector<Eigen::VectorXd> x = inits;
    std::vector<Eigen::MatrixXd> P(M);
    std::vector<Eigen::MatrixXd> Q(M);
    for (std::size_t m = 0; m < M; ++m) {
        P[m] = configs[m].initial_covariance();
        Q[m] = configs[m].process_noise(layout);
    }

    std::vector<EstimateTrace> traces(M);
    for (auto& t : traces) {
        t.layout = layout;
        t.posteriors.resize(static_cast<Eigen::Index>(layout.dim()), static_cast<Eigen::Index>(window.length()));
    }

    Mailbox<double> measurements(topo, opts.measurement_log);
    Mailbox<Eigen::VectorXd> pre_estimates(topo, opts.estimate_log);
    std::vector<Eigen::VectorXd> phi(M);
    Eigen::MatrixXd Rj(1, 1);
    Eigen::VectorXd yj(1);

    for (std::size_t k = 0; k < window.length(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        measurements.clear();
        pre_estimates.clear();
        for (std::size_t m = 0; m < M; ++m) measurements.post(m, window.samples(static_cast<Eigen::Index>(m), kk));

        // Incremental update.
        for (std::size_t m : order) {
            phi[m] = x[m];
            double innov_sq = 0.0;
            for (std::size_t j : topo.neighbors(m)) {
                yj[0] = measurements.read(m, j);
                Rj(0, 0) = configs[m].r_diag[j];
                const Eigen::VectorXd e = detail::measurement_update(
                    phi[m], P[m], yj, H.row(static_cast<Eigen::Index>(j)), Rj, k, m);
                innov_sq += e.squaredNorm();
            }
            traces[m].innovation_norms.push_back(std::sqrt(innov_sq));
        }
        for (std::size_t m = 0; m < M; ++m) pre_estimates.post(m, phi[m]);

        // Diffusion update, accumulated in ascending neighbour id.
        for (std::size_t m : order) {
            const auto& nbrs = topo.neighbors(m);
            Eigen::VectorXd combined = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.dim()));
            for (std::size_t i = 0; i < nbrs.size(); ++i)
                combined += weights.c[m][i] * pre_estimates.read(m, nbrs[i]);
            x[m] = std::move(combined);
            detail::symmetrize(P[m]);
            detail::check_finite(x[m], P[m], k, m);
            traces[m].posteriors.col(kk) = x[m];
            traces[m].final_state = x[m];
        }

        if (k + 1 < window.length()) {
            for (std::size_t m : order) {
                detail::time_update(x[m], P[m], layout, window.fs, Q[m]);
                detail::check_finite(x[m], P[m], k, m);
            }
        }
    }
    detail::finish_traces(traces, P);
    return traces;
}

/// For node m, neighbour slot a (j = N_m[a]) and contributor slot b
/// (i = (N_m & N_j)[b]): where j's amplitude block sits inside i's local state.
struct ReducedIndex {
    struct Source {
        std::size_t contributor = 0;
        std::size_t offset = 0;
    };
    std::vector<std::vector<std::vector<Source>>> sources;

    ReducedIndex(const Topology& topo, std::size_t modes) : sources(topo.size()) {
        for (std::size_t m = 0; m < topo.size(); ++m) {
            for (std::size_t j : topo.neighbors(m)) {
                std::vector<Source> row;
                for (std::size_t i : topo.common_neighbors(m, j)) {
                    const auto& ni = topo.neighbors(i);
                    auto it = std::lower_bound(ni.begin(), ni.end(), j);
                    if (it == ni.end() || *it != j)
                        throw InvariantViolation("contributor " + std::to_string(i) + " has no block for node " +
                                                 std::to_string(j));
                    const StateLayout li{ni.size(), modes};
                    row.push_back(Source{i, li.block_offset(static_cast<std::size_t>(it - ni.begin()))});
                }
                sources[m].push_back(std::move(row));
            }
        }
    }
};

/// Reduced-state diffusion EKF. Node m's config uses the local layout
/// (r_diag aligned with topo.neighbors(m)).
inline std::vector<EstimateTrace> dekfr_run(const MeasurementWindow& window, const Topology& topo,
                                            const DiffusionWeights& c, const ReducedDiffusionWeights& d,
                                            const std::vector<Eigen::VectorXd>& inits,
                                            const std::vector<FilterConfig>& configs, std::size_t modes,
                                            const DiffusionOptions& opts = {}) {
    detail::check_window_topology(window, topo);
    c.validate(topo);
    d.validate(topo);
    const std::size_t M = topo.size();
    if (inits.size() != M || configs.size() != M) throw ValidationError("one init and one config per node required");

    std::vector<StateLayout> layouts(M);
    std::vector<Eigen::MatrixXd> H(M);
    std::vector<Eigen::MatrixXd> P(M);
    std::vector<Eigen::MatrixXd> Q(M);
    for (std::size_t m = 0; m < M; ++m) {
        layouts[m] = StateLayout{topo.degree(m), modes};
        if (static_cast<std::size_t>(inits[m].size()) != layouts[m].dim())
            throw ValidationError("node init dimension must be 2|N_m|L + 2L");
        configs[m].validate(layouts[m]);
        H[m] = reduced_observation_matrix(topo.neighbors(m), modes);
        P[m] = configs[m].initial_covariance();
        Q[m] = configs[m].process_noise(layouts[m]);
    }
    const ReducedIndex index(topo, modes);
    const auto order = detail::visit_order(opts, M);
    const auto block = static_cast<Eigen::Index>(2 * modes);

    std::vector<Eigen::VectorXd> x = inits;
    std::vector<EstimateTrace> traces(M);
    for (std::size_t m = 0; m < M; ++m) {
        traces[m].layout = layouts[m];
        traces[m].posteriors.resize(static_cast<Eigen::Index>(layouts[m].dim()),
                                    static_cast<Eigen::Index>(window.length()));
    }

    Mailbox<double> measurements(topo, opts.measurement_log);
    Mailbox<Eigen::VectorXd> pre_estimates(topo, opts.estimate_log);
    std::vector<Eigen::VectorXd> phi(M);
    Eigen::MatrixXd Rj(1, 1);
    Eigen::VectorXd yj(1);

    for (std::size_t k = 0; k < window.length(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        measurements.clear();
        pre_estimates.clear();
        for (std::size_t m = 0; m < M; ++m) measurements.post(m, window.samples(static_cast<Eigen::Index>(m), kk));

        for (std::size_t m : order) {
            phi[m] = x[m];
            double innov_sq = 0.0;
            const auto& nbrs = topo.neighbors(m);
            for (std::size_t a = 0; a < nbrs.size(); ++a) {
                yj[0] = measurements.read(m, nbrs[a]);
                Rj(0, 0) = configs[m].r_diag[a];
                const Eigen::VectorXd e = detail::measurement_update(
                    phi[m], P[m], yj, H[m].row(static_cast<Eigen::Index>(a)), Rj, k, m);
                innov_sq += e.squaredNorm();
            }
            traces[m].innovation_norms.push_back(std::sqrt(innov_sq));
        }
        for (std::size_t m = 0; m < M; ++m) pre_estimates.post(m, phi[m]);

        for (std::size_t m : order) {
            const auto& nbrs = topo.neighbors(m);
            const StateLayout& lm = layouts[m];
            Eigen::VectorXd next = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lm.dim()));
            for (std::size_t a = 0; a < nbrs.size(); ++a) {
                const auto& row = index.sources[m][a];
                auto target = next.segment(static_cast<Eigen::Index>(lm.block_offset(a)), block);
                for (std::size_t b = 0; b < row.size(); ++b) {
                    const Eigen::VectorXd& contrib = pre_estimates.read(m, row[b].contributor);
                    target += d.d[m][a][b] * contrib.segment(static_cast<Eigen::Index>(row[b].offset), block);
                }
            }
            auto mode_part = next.tail(block);
            for (std::size_t a = 0; a < nbrs.size(); ++a)
                mode_part += c.c[m][a] * pre_estimates.read(m, nbrs[a]).tail(block);
            x[m] = std::move(next);
            detail::symmetrize(P[m]);
            detail::check_finite(x[m], P[m], k, m);
            traces[m].posteriors.col(kk) = x[m];
            traces[m].final_state = x[m];
        }

        if (k + 1 < window.length()) {
            for (std::size_t m : order) {
                detail::time_update(x[m], P[m], layouts[m], window.fs, Q[m]);
                detail::check_finite(x[m], P[m], k, m);
            }
        }
    }
    detail::finish_traces(traces, P);
    return traces;
}

/// Local initial states cut from a full state, one per node.
inline std::vector<Eigen::VectorXd> restrict_to_neighborhoods(const SystemState& full, const Topology& topo) {
    std::vector<Eigen::VectorXd> out;
    for (std::size_t m = 0; m < topo.size(); ++m)
        out.push_back(ReducedState::restrict(full, m, topo.neighbors(m)).vectorize());
    return out;
}

struct ConsensusSpread {
    double freq_rel = 0.0;
    double sigma_rel = 0.0;
};

/// Largest (max - min) / |mean| across nodes of the final estimates, per mode.
inline ConsensusSpread consensus_spread(const std::vector<EstimateTrace>& nodes) {
    if (nodes.size() < 2) throw ValidationError("consensus spread needs at least two nodes");
    const std::size_t L = nodes.front().modes.size();
    auto rel = [](double lo, double hi, double mean) {
        if (hi == lo) return 0.0;
        return (hi - lo) / std::abs(mean);
    };
    ConsensusSpread out;
    for (std::size_t l = 0; l < L; ++l) {
        double wmin = std::numeric_limits<double>::infinity(), wmax = -wmin, wsum = 0.0;
        double smin = wmin, smax = -wmin, ssum = 0.0;
        for (const EstimateTrace& t : nodes) {
            if (t.modes.size() != L) throw ValidationError("nodes disagree on mode count");
            const ModeEstimate& e = t.modes[l];
            wmin = std::min(wmin, e.omega);
            wmax = std::max(wmax, e.omega);
            wsum += e.omega;
            smin = std::min(smin, e.sigma);
            smax = std::max(smax, e.sigma);
            ssum += e.sigma;
        }
        const auto n = static_cast<double>(nodes.size());
        out.freq_rel = std::max(out.freq_rel, rel(wmin, wmax, wsum / n));
        out.sigma_rel = std::max(out.sigma_rel, rel(smin, smax, ssum / n));
    }
    return out;
}

/// Across-node mean of (omega, sigma) per mode.
inline ModeSet mean_modes(const std::vector<EstimateTrace>& nodes) {
    if (nodes.empty()) throw ValidationError("no nodes");
    const std::size_t L = nodes.front().modes.size();
    std::vector<Mode> out(L);
    for (const EstimateTrace& t : nodes) {
        for (std::size_t l = 0; l < L; ++l) {
            out[l].omega += t.modes.at(l).omega / static_cast<double>(nodes.size());
            out[l].sigma += t.modes.at(l).sigma / static_cast<double>(nodes.size());
        }
    }
    return ModeSet::unchecked(std::move(out));
}

}  // namespace modal

#pragma once

// Centralized extended Kalman filter over all channels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "modal/errors.hpp"
#include "modal/signal_model.hpp"

namespace modal {

/// Noise and initial-covariance tuning. Amplitude entries of Q are always zero.
struct FilterConfig {
    std::vector<double> r_diag;       ///< one per observed channel
    std::vector<double> q_mode_diag;  ///< 2L entries, (omega, sigma) interleaved
    std::vector<double> p0_diag;      ///< full state dimension

    struct Defaults {
        double r = 1e-3;
        double q_mode = 1e-9;
        double p0_amplitude = 1e-2;
        double p0_omega = 1.0;
        double p0_sigma = 1e-2;
    };

    static FilterConfig uniform(std::size_t blocks, std::size_t modes, const Defaults& d) {
        const StateLayout layout{blocks, modes};
        FilterConfig cfg;
        cfg.r_diag.assign(blocks, d.r);
        cfg.q_mode_diag.assign(2 * modes, d.q_mode);
        cfg.p0_diag.assign(layout.dim(), d.p0_amplitude);
        for (std::size_t l = 0; l < modes; ++l) {
            cfg.p0_diag[layout.omega_index(l)] = d.p0_omega;
            cfg.p0_diag[layout.sigma_index(l)] = d.p0_sigma;
        }
        return cfg;
    }

    static FilterConfig uniform(std::size_t blocks, std::size_t modes) { return uniform(blocks, modes, Defaults{}); }

    void validate(const StateLayout& layout) const {
        if (r_diag.size() != layout.blocks) throw ValidationError("r_diag needs one entry per observed channel");
        if (q_mode_diag.size() != 2 * layout.modes) throw ValidationError("q_mode_diag needs 2L entries");
        if (p0_diag.size() != layout.dim()) throw ValidationError("p0_diag must match the state dimension");
        for (double r : r_diag) {
            if (!(r > 0.0) || !std::isfinite(r)) throw ValidationError("measurement noise must be strictly positive");
        }
        for (double q : q_mode_diag) {
            if (!(q >= 0.0) || !std::isfinite(q)) throw ValidationError("process noise must be non-negative");
        }
        for (double p : p0_diag) {
            if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("initial covariance must be non-negative");
        }
    }

    Eigen::MatrixXd process_noise(const StateLayout& layout) const {
        const auto n = static_cast<Eigen::Index>(layout.dim());
        Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n);
        for (std::size_t i = 0; i < q_mode_diag.size(); ++i) {
            const auto idx = static_cast<Eigen::Index>(layout.amplitude_dim() + i);
            Q(idx, idx) = q_mode_diag[i];
        }
        return Q;
    }

    Eigen::MatrixXd measurement_noise() const {
        return Eigen::Map<const Eigen::VectorXd>(r_diag.data(), static_cast<Eigen::Index>(r_diag.size()))
            .asDiagonal();
    }

    Eigen::MatrixXd initial_covariance() const {
        return Eigen::Map<const Eigen::VectorXd>(p0_diag.data(), static_cast<Eigen::Index>(p0_diag.size()))
            .asDiagonal();
    }
};

/// Innovation covariance above this condition number is treated as divergence.
inline constexpr double max_innovation_condition = 1e12;

struct StepResult {
    Eigen::VectorXd posterior_state;
    Eigen::MatrixXd posterior_P;
    Eigen::VectorXd predicted_state;
    Eigen::MatrixXd predicted_P;
    Eigen::VectorXd innovation;
};

namespace detail {

inline void symmetrize(Eigen::MatrixXd& P) { P = 0.5 * (P + P.transpose()).eval(); }

/// x += K (y - H x), P -= K H P with S = R + H P H^T. Throws on an ill-conditioned S.
inline Eigen::VectorXd measurement_update(Eigen::VectorXd& x, Eigen::MatrixXd& P, const Eigen::VectorXd& y,
                                          const Eigen::MatrixXd& H, const Eigen::MatrixXd& R, std::size_t step,
                                          std::size_t node = DivergenceError::no_node) {
    const Eigen::MatrixXd PHt = P * H.transpose();
    const Eigen::MatrixXd S = R + H * PHt;
    const Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success || !(llt.rcond() >= 1.0 / max_innovation_condition))
        throw DivergenceError("innovation covariance is singular", step, node);
    // K = P H^T S^-1, computed as (S^-1 H P)^T.
    const Eigen::MatrixXd K = llt.solve(PHt.transpose()).transpose();
    const Eigen::VectorXd innovation = y - H * x;
    x += K * innovation;
    P -= K * PHt.transpose();
    return innovation;
}

inline void time_update(Eigen::VectorXd& x, Eigen::MatrixXd& P, const StateLayout& layout, double fs,
                        const Eigen::MatrixXd& Q) {
    const Eigen::MatrixXd F = jacobian(x, layout, fs);
    x = propagate(x, layout, fs);
    P = F * P * F.transpose() + Q;
    symmetrize(P);
}

inline void check_finite(const Eigen::VectorXd& x, const Eigen::MatrixXd& P, std::size_t step,
                         std::size_t node = DivergenceError::no_node) {
    if (!x.allFinite() || !P.allFinite()) throw DivergenceError("non-finite filter state", step, node);
}

}  // namespace detail

/// One measurement update followed by one prediction.
inline StepResult cekf_step(const Eigen::VectorXd& prior_state, const Eigen::MatrixXd& prior_P,
                            const Eigen::VectorXd& y, const Eigen::MatrixXd& H, const FilterConfig& config,
                            const StateLayout& layout, double fs, std::size_t step = 0) {
    const auto n = static_cast<Eigen::Index>(layout.dim());
    if (prior_state.size() != n || prior_P.rows() != n || prior_P.cols() != n || H.cols() != n ||
        H.rows() != y.size() || static_cast<std::size_t>(y.size()) != config.r_diag.size())
        throw ValidationError("cekf_step: inconsistent dimensions");

    StepResult out;
    out.posterior_state = prior_state;
    out.posterior_P = prior_P;
    out.innovation =
        detail::measurement_update(out.posterior_state, out.posterior_P, y, H, config.measurement_noise(), step);
    detail::symmetrize(out.posterior_P);
    out.predicted_state = out.posterior_state;
    out.predicted_P = out.posterior_P;
    detail::time_update(out.predicted_state, out.predicted_P, layout, fs, config.process_noise(layout));
    detail::check_finite(out.predicted_state, out.predicted_P, step);
    return out;
}

/// Per-mode report: frequency in Hz, damping in 1/s, and polar amplitude per channel.
struct ModeEstimate {
    double freq_hz = 0.0;
    double omega = 0.0;
    double sigma = 0.0;
    std::vector<Polar> channels;
};

/// Sorted by frequency. Amplitudes refer to the state's own time instant.
inline std::vector<ModeEstimate> extract_modes(const std::vector<ChannelAmplitude>& amplitudes, const ModeSet& modes) {
    std::vector<ModeEstimate> out(modes.size());
    for (std::size_t l = 0; l < modes.size(); ++l) {
        out[l].omega = modes[l].omega;
        out[l].freq_hz = modes[l].freq_hz();
        out[l].sigma = modes[l].sigma;
        for (const ChannelAmplitude& a : amplitudes) out[l].channels.push_back(polar_from_state(a.components.at(l)));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ModeEstimate& a, const ModeEstimate& b) { return a.omega < b.omega; });
    return out;
}

inline std::vector<ModeEstimate> extract_modes(const SystemState& state) {
    return extract_modes(state.amplitudes, state.modes);
}

/// Canonically ordered mode set from estimates (duplicates collapse to an unchecked set).
inline ModeSet to_mode_set(const std::vector<ModeEstimate>& estimates) {
    std::vector<Mode> modes;
    for (const ModeEstimate& e : estimates) modes.push_back(Mode{e.omega, e.sigma});
    return ModeSet::unchecked(std::move(modes));
}

struct EstimateTrace {
    StateLayout layout;
    Eigen::MatrixXd posteriors;  ///< dim x N, column k is x[k|k]
    Eigen::VectorXd final_state;
    Eigen::MatrixXd final_P;
    std::vector<double> innovation_norms;
    std::vector<ModeEstimate> modes;

    std::size_t length() const { return static_cast<std::size_t>(posteriors.cols()); }
};

inline EstimateTrace cekf_run(const MeasurementWindow& window, const Eigen::VectorXd& init_state,
                              const FilterConfig& config, std::size_t modes) {
    window.validate();
    const StateLayout layout{window.channels(), modes};
    if (static_cast<std::size_t>(init_state.size()) != layout.dim())
        throw ValidationError("initial state does not match (channels, modes) of the window");
    config.validate(layout);

    const Eigen::MatrixXd H = observation_matrix(layout.blocks, layout.modes);
    const Eigen::MatrixXd R = config.measurement_noise();
    const Eigen::MatrixXd Q = config.process_noise(layout);

    EstimateTrace trace;
    trace.layout = layout;
    trace.posteriors.resize(static_cast<Eigen::Index>(layout.dim()), static_cast<Eigen::Index>(window.length()));
    trace.innovation_norms.reserve(window.length());

    Eigen::VectorXd x = init_state;
    Eigen::MatrixXd P = config.initial_covariance();
    for (std::size_t k = 0; k < window.length(); ++k) {
        const Eigen::VectorXd y = window.samples.col(static_cast<Eigen::Index>(k));
        const Eigen::VectorXd innovation = detail::measurement_update(x, P, y, H, R, k);
        detail::symmetrize(P);
        detail::check_finite(x, P, k);
        trace.posteriors.col(static_cast<Eigen::Index>(k)) = x;
        trace.innovation_norms.push_back(innovation.norm());
        trace.final_state = x;
        trace.final_P = P;
        if (k + 1 < window.length()) {
            detail::time_update(x, P, layout, window.fs, Q);
            detail::check_finite(x, P, k);
        }
    }
    const SystemState final = SystemState::devectorize(trace.final_state, layout.blocks, layout.modes);
    trace.modes = extract_modes(final);
    return trace;
}

inline EstimateTrace cekf_run(const MeasurementWindow& window, const SystemState& init_state,
                              const FilterConfig& config) {
    return cekf_run(window, init_state.vectorize(), config, init_state.modes.size());
}

}  // namespace modal

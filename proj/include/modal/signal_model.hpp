#pragma once

// Damped-sinusoid state-space model shared by every estimator.
//
// A state vector stacks one amplitude block per observed channel followed by
// the shared mode parameters:
//
//   [ xc(1,1) xs(1,1) ... xc(L,1) xs(L,1) | ... | xc(L,B) xs(L,B) | w1 s1 ... wL sL ]
//
// where B is the number of amplitude blocks (all M channels for the full
// state, the neighbourhood for a reduced state). Each (xc, xs) pair rotates
// by w/fs and decays by exp(-s/fs) per sample. A channel is observed as the
// sum of every entry in its block.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "modal/errors.hpp"

namespace modal {

struct Mode {
    double omega = 0.0;  ///< rad/s
    double sigma = 0.0;  ///< 1/s, positive means decaying

    double freq_hz() const { return omega / (2.0 * std::numbers::pi); }

    static Mode from_hz(double freq_hz, double sigma) {
        return Mode{2.0 * std::numbers::pi * freq_hz, sigma};
    }
};

/// Ordered set of modes, strictly increasing in omega.
class ModeSet {
public:
    ModeSet() = default;

    explicit ModeSet(std::vector<Mode> modes) : modes_(std::move(modes)) {
        if (modes_.empty()) throw ValidationError("mode set must contain at least one mode");
        for (const Mode& m : modes_) {
            if (!std::isfinite(m.omega) || !std::isfinite(m.sigma))
                throw ValidationError("mode parameters must be finite");
        }
        for (std::size_t i = 1; i < modes_.size(); ++i) {
            if (!(modes_[i].omega > modes_[i - 1].omega))
                throw ValidationError("mode frequencies must be strictly increasing");
        }
    }

    /// Filter estimates may drift out of canonical order; keep them as-is.
    static ModeSet unchecked(std::vector<Mode> modes) {
        ModeSet out;
        out.modes_ = std::move(modes);
        return out;
    }

    /// Sorts by omega, then validates.
    static ModeSet sorted(std::vector<Mode> modes) {
        std::sort(modes.begin(), modes.end(),
                  [](const Mode& a, const Mode& b) { return a.omega < b.omega; });
        return ModeSet(std::move(modes));
    }

    std::size_t size() const { return modes_.size(); }
    bool empty() const { return modes_.empty(); }
    const Mode& operator[](std::size_t i) const { return modes_[i]; }
    Mode& operator[](std::size_t i) { return modes_[i]; }
    auto begin() const { return modes_.begin(); }
    auto end() const { return modes_.end(); }
    const std::vector<Mode>& modes() const { return modes_; }

private:
    std::vector<Mode> modes_;
};

/// Cosine/sine pair for one mode on one channel.
struct Quadrature {
    double xc = 0.0;
    double xs = 0.0;
};

/// Polar form of a channel's contribution from one mode: a*cos(theta + phase).
struct Polar {
    double amplitude = 0.0;
    double phase = 0.0;
};

struct ChannelAmplitude {
    std::vector<Quadrature> components;  ///< one per mode
};

/// Index arithmetic for a stacked state with `blocks` amplitude blocks and `modes` modes.
struct StateLayout {
    std::size_t blocks = 0;
    std::size_t modes = 0;

    std::size_t amplitude_dim() const { return 2 * blocks * modes; }
    std::size_t dim() const { return amplitude_dim() + 2 * modes; }
    std::size_t xc_index(std::size_t block, std::size_t mode) const { return 2 * (block * modes + mode); }
    std::size_t xs_index(std::size_t block, std::size_t mode) const { return xc_index(block, mode) + 1; }
    std::size_t block_offset(std::size_t block) const { return 2 * block * modes; }
    std::size_t block_size() const { return 2 * modes; }
    std::size_t omega_index(std::size_t mode) const { return amplitude_dim() + 2 * mode; }
    std::size_t sigma_index(std::size_t mode) const { return omega_index(mode) + 1; }
};

namespace detail {

inline void check_blocks(const std::vector<ChannelAmplitude>& amplitudes, std::size_t modes) {
    for (const ChannelAmplitude& a : amplitudes) {
        if (a.components.size() != modes)
            throw ValidationError("channel amplitude length does not match the number of modes");
    }
}

inline Eigen::VectorXd stack(const std::vector<ChannelAmplitude>& amplitudes, const ModeSet& modes) {
    check_blocks(amplitudes, modes.size());
    const StateLayout layout{amplitudes.size(), modes.size()};
    Eigen::VectorXd x(layout.dim());
    for (std::size_t b = 0; b < amplitudes.size(); ++b) {
        for (std::size_t l = 0; l < modes.size(); ++l) {
            x[layout.xc_index(b, l)] = amplitudes[b].components[l].xc;
            x[layout.xs_index(b, l)] = amplitudes[b].components[l].xs;
        }
    }
    for (std::size_t l = 0; l < modes.size(); ++l) {
        x[layout.omega_index(l)] = modes[l].omega;
        x[layout.sigma_index(l)] = modes[l].sigma;
    }
    return x;
}

inline std::vector<ChannelAmplitude> unstack_amplitudes(const Eigen::VectorXd& x, const StateLayout& layout) {
    std::vector<ChannelAmplitude> out(layout.blocks);
    for (std::size_t b = 0; b < layout.blocks; ++b) {
        out[b].components.resize(layout.modes);
        for (std::size_t l = 0; l < layout.modes; ++l)
            out[b].components[l] = Quadrature{x[layout.xc_index(b, l)], x[layout.xs_index(b, l)]};
    }
    return out;
}

inline ModeSet unstack_modes(const Eigen::VectorXd& x, const StateLayout& layout) {
    std::vector<Mode> modes(layout.modes);
    for (std::size_t l = 0; l < layout.modes; ++l)
        modes[l] = Mode{x[layout.omega_index(l)], x[layout.sigma_index(l)]};
    return ModeSet::unchecked(std::move(modes));
}

}  // namespace detail

/// Centralized state: one amplitude block per channel plus the shared modes.
struct SystemState {
    std::vector<ChannelAmplitude> amplitudes;
    ModeSet modes;

    std::size_t channels() const { return amplitudes.size(); }
    StateLayout layout() const { return StateLayout{amplitudes.size(), modes.size()}; }

    Eigen::VectorXd vectorize() const { return detail::stack(amplitudes, modes); }

    static SystemState devectorize(const Eigen::VectorXd& x, std::size_t channels, std::size_t modes) {
        const StateLayout layout{channels, modes};
        if (static_cast<std::size_t>(x.size()) != layout.dim())
            throw ValidationError("state vector has wrong dimension");
        return SystemState{detail::unstack_amplitudes(x, layout), detail::unstack_modes(x, layout)};
    }
};

/// Node-local state holding only the owner's neighbourhood amplitudes.
struct ReducedState {
    std::size_t owner = 0;
    std::vector<std::size_t> neighbor_ids;  ///< sorted, contains owner
    std::vector<ChannelAmplitude> amplitudes;
    ModeSet modes;

    StateLayout layout() const { return StateLayout{neighbor_ids.size(), modes.size()}; }

    void validate() const {
        if (neighbor_ids.empty()) throw ValidationError("reduced state needs at least one neighbour");
        if (!std::is_sorted(neighbor_ids.begin(), neighbor_ids.end()) ||
            std::adjacent_find(neighbor_ids.begin(), neighbor_ids.end()) != neighbor_ids.end())
            throw ValidationError("neighbour ids must be strictly ascending");
        if (!std::binary_search(neighbor_ids.begin(), neighbor_ids.end(), owner))
            throw ValidationError("owner must be in its own neighbour set");
        if (amplitudes.size() != neighbor_ids.size())
            throw ValidationError("one amplitude block per neighbour required");
    }

    /// Position of neighbour `id` within the local block order.
    std::size_t local_index(std::size_t id) const {
        auto it = std::lower_bound(neighbor_ids.begin(), neighbor_ids.end(), id);
        if (it == neighbor_ids.end() || *it != id)
            throw ValidationError("node " + std::to_string(id) + " is not a neighbour of " + std::to_string(owner));
        return static_cast<std::size_t>(it - neighbor_ids.begin());
    }

    Eigen::VectorXd vectorize() const {
        validate();
        return detail::stack(amplitudes, modes);
    }

    static ReducedState devectorize(const Eigen::VectorXd& x, std::size_t owner,
                                    std::vector<std::size_t> neighbor_ids, std::size_t modes) {
        const StateLayout layout{neighbor_ids.size(), modes};
        if (static_cast<std::size_t>(x.size()) != layout.dim())
            throw ValidationError("reduced state vector has wrong dimension");
        ReducedState out{owner, std::move(neighbor_ids), detail::unstack_amplitudes(x, layout),
                         detail::unstack_modes(x, layout)};
        out.validate();
        return out;
    }

    /// Restriction of a full state to this node's neighbourhood.
    static ReducedState restrict(const SystemState& full, std::size_t owner, std::vector<std::size_t> neighbor_ids) {
        ReducedState out;
        out.owner = owner;
        out.modes = full.modes;
        for (std::size_t id : neighbor_ids) {
            if (id >= full.channels()) throw ValidationError("neighbour id out of range");
            out.amplitudes.push_back(full.amplitudes[id]);
        }
        out.neighbor_ids = std::move(neighbor_ids);
        out.validate();
        return out;
    }
};

/// M x N block of synchronized samples. Row m is channel m.
struct MeasurementWindow {
    Eigen::MatrixXd samples;
    double fs = 0.0;  ///< Hz
    double t0 = 0.0;  ///< s

    std::size_t channels() const { return static_cast<std::size_t>(samples.rows()); }
    std::size_t length() const { return static_cast<std::size_t>(samples.cols()); }

    void validate() const {
        if (samples.rows() < 1 || samples.cols() < 1) throw ValidationError("measurement window is empty");
        if (!(fs > 0.0) || !std::isfinite(fs)) throw ValidationError("sample rate must be positive");
        if (!samples.allFinite()) throw ValidationError("measurement window contains missing or non-finite samples");
    }
};

// ---------------------------------------------------------------------------
// Scalar helpers
// ---------------------------------------------------------------------------

/// zeta = sigma / sqrt(sigma^2 + omega^2). Sign follows sigma.
inline double damping_ratio(double sigma, double omega) {
    if (sigma == 0.0 && omega == 0.0) throw DomainError("damping ratio undefined for sigma = omega = 0");
    return sigma / std::hypot(sigma, omega);
}

/// Quadrature pair whose block sum reproduces a*exp(-sigma t)*cos(omega t + phase).
/// xc + xs = sqrt(2) r cos(theta - pi/4), so r = a/sqrt(2) and theta = phase + pi/4.
inline Quadrature state_from_polar(double amplitude, double phase) {
    if (!(amplitude >= 0.0)) throw ValidationError("amplitude must be non-negative");
    const double r = amplitude / std::numbers::sqrt2;
    const double theta = phase + std::numbers::pi / 4.0;
    return Quadrature{r * std::cos(theta), r * std::sin(theta)};
}

/// Inverse of state_from_polar. Phase is wrapped to (-pi, pi].
inline Polar polar_from_state(const Quadrature& q) {
    const double r = std::hypot(q.xc, q.xs);
    if (r == 0.0) return Polar{};
    double phase = std::atan2(q.xs, q.xc) - std::numbers::pi / 4.0;
    if (phase <= -std::numbers::pi) phase += 2.0 * std::numbers::pi;
    return Polar{r * std::numbers::sqrt2, phase};
}

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

inline void check_fs(double fs) {
    if (!(fs > 0.0)) throw ValidationError("sample rate must be positive");
}

/// One-sample prediction f(x).
inline Eigen::VectorXd propagate(const Eigen::VectorXd& x, const StateLayout& layout, double fs) {
    check_fs(fs);
    if (static_cast<std::size_t>(x.size()) != layout.dim()) throw ValidationError("state dimension mismatch");
    Eigen::VectorXd out = x;
    for (std::size_t l = 0; l < layout.modes; ++l) {
        const double omega = x[layout.omega_index(l)];
        const double sigma = x[layout.sigma_index(l)];
        const double decay = std::exp(-sigma / fs);
        const double c = decay * std::cos(omega / fs);
        const double s = decay * std::sin(omega / fs);
        for (std::size_t b = 0; b < layout.blocks; ++b) {
            const double xc = x[layout.xc_index(b, l)];
            const double xs = x[layout.xs_index(b, l)];
            out[layout.xc_index(b, l)] = xc * c - xs * s;
            out[layout.xs_index(b, l)] = xc * s + xs * c;
        }
    }
    return out;
}

/// Analytic Jacobian of propagate at x.
inline Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, const StateLayout& layout, double fs) {
    check_fs(fs);
    if (static_cast<std::size_t>(x.size()) != layout.dim()) throw ValidationError("state dimension mismatch");
    const auto n = static_cast<Eigen::Index>(layout.dim());
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t l = 0; l < layout.modes; ++l) {
        const auto wi = static_cast<Eigen::Index>(layout.omega_index(l));
        const auto si = static_cast<Eigen::Index>(layout.sigma_index(l));
        const double decay = std::exp(-x[si] / fs);
        const double c = decay * std::cos(x[wi] / fs);
        const double s = decay * std::sin(x[wi] / fs);
        for (std::size_t b = 0; b < layout.blocks; ++b) {
            const auto ci = static_cast<Eigen::Index>(layout.xc_index(b, l));
            const auto ti = ci + 1;
            const double xc = x[ci];
            const double xs = x[ti];
            const double next_c = xc * c - xs * s;
            const double next_s = xc * s + xs * c;
            F(ci, ci) = c;
            F(ci, ti) = -s;
            F(ti, ci) = s;
            F(ti, ti) = c;
            // d/d omega rotates by a quarter turn, d/d sigma scales by -1; both carry 1/fs.
            F(ci, wi) = -next_s / fs;
            F(ti, wi) = next_c / fs;
            F(ci, si) = -next_c / fs;
            F(ti, si) = -next_s / fs;
        }
        F(wi, wi) = 1.0;
        F(si, si) = 1.0;
    }
    return F;
}

inline SystemState propagate(const SystemState& state, double fs) {
    const StateLayout layout = state.layout();
    return SystemState::devectorize(propagate(state.vectorize(), layout, fs), layout.blocks, layout.modes);
}

inline Eigen::MatrixXd jacobian(const SystemState& state, double fs) {
    return jacobian(state.vectorize(), state.layout(), fs);
}

// ---------------------------------------------------------------------------
// Observation
// ---------------------------------------------------------------------------

/// Row m has ones over channel m's 2L amplitude entries.
inline Eigen::MatrixXd observation_matrix(std::size_t channels, std::size_t modes) {
    if (channels < 1 || modes < 1) throw ValidationError("observation matrix needs at least one channel and mode");
    const StateLayout layout{channels, modes};
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(layout.dim()));
    for (std::size_t m = 0; m < channels; ++m)
        H.block(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(layout.block_offset(m)), 1,
                static_cast<Eigen::Index>(layout.block_size()))
            .setOnes();
    return H;
}

/// Same pattern for a node's local state; row i observes neighbour neighbor_ids[i].
inline Eigen::MatrixXd reduced_observation_matrix(std::span<const std::size_t> neighbor_ids, std::size_t modes) {
    if (neighbor_ids.empty()) throw ValidationError("reduced observation matrix needs a neighbour");
    if (!std::is_sorted(neighbor_ids.begin(), neighbor_ids.end()))
        throw ValidationError("neighbour ids must be sorted");
    return observation_matrix(neighbor_ids.size(), modes);
}

inline Eigen::VectorXd observe(const Eigen::VectorXd& x, const Eigen::MatrixXd& H) {
    if (H.cols() != x.size()) throw ValidationError("observation matrix does not match state dimension");
    return H * x;
}

/// M x n matrix of model output for samples 0..n-1 starting at `initial`.
inline Eigen::MatrixXd fitted_curve(const SystemState& initial, double fs, std::size_t n) {
    const StateLayout layout = initial.layout();
    const Eigen::MatrixXd H = observation_matrix(layout.blocks, layout.modes);
    Eigen::MatrixXd curve(static_cast<Eigen::Index>(layout.blocks), static_cast<Eigen::Index>(n));
    Eigen::VectorXd x = initial.vectorize();
    for (std::size_t k = 0; k < n; ++k) {
        curve.col(static_cast<Eigen::Index>(k)) = observe(x, H);
        if (k + 1 < n) x = propagate(x, layout, fs);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

/// Per-channel scale and one phase per mode.
struct ChannelSpec {
    double scale = 1.0;
    std::vector<double> phases;
};

struct NoiseOff {};
struct NoiseSnr {
    double snr_db = 50.0;
};
struct NoiseStd {
    double std_dev = 0.0;  ///< inside the scale bracket
};
using NoiseSpec = std::variant<NoiseOff, NoiseSnr, NoiseStd>;

struct Synthesis {
    MeasurementWindow window;
    SystemState truth;      ///< state at sample 0
    Eigen::MatrixXd clean;  ///< noiseless samples, same shape as window.samples
    Eigen::MatrixXd noise;  ///< emitted noise, samples = clean + noise
};

/// sample(c, k) = scale_c * [ sum_l exp(-sigma_l k/fs) cos(omega_l k/fs + phase_lc) + eps_c[k] ]
inline Synthesis synthesize_window(const ModeSet& modes, const std::vector<ChannelSpec>& channels, double fs,
                                   std::size_t n, const NoiseSpec& noise, std::uint64_t seed) {
    check_fs(fs);
    if (n < 1) throw ValidationError("sample count must be at least 1");
    if (channels.empty()) throw ValidationError("need at least one channel");
    if (modes.empty()) throw ValidationError("need at least one mode");
    for (const Mode& m : modes) {
        if (!(m.omega > 0.0)) throw ValidationError("synthesized modes need positive omega");
    }
    for (const ChannelSpec& ch : channels) {
        if (!(ch.scale > 0.0) || !std::isfinite(ch.scale)) throw ValidationError("channel scale must be positive");
        if (ch.phases.size() != modes.size()) throw ValidationError("one phase per mode per channel required");
        for (double p : ch.phases) {
            if (!std::isfinite(p)) throw ValidationError("phases must be finite");
        }
    }

    const auto rows = static_cast<Eigen::Index>(channels.size());
    const auto cols = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd bracket = Eigen::MatrixXd::Zero(rows, cols);
    for (Eigen::Index c = 0; c < rows; ++c) {
        for (Eigen::Index k = 0; k < cols; ++k) {
            const double t = static_cast<double>(k) / fs;
            double v = 0.0;
            for (std::size_t l = 0; l < modes.size(); ++l)
                v += std::exp(-modes[l].sigma * t) * std::cos(modes[l].omega * t + channels[c].phases[l]);
            bracket(c, k) = v;
        }
    }

    Eigen::MatrixXd eps = Eigen::MatrixXd::Zero(rows, cols);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Eigen::Index c = 0; c < rows; ++c) {
        double std_dev = 0.0;
        if (const auto* snr = std::get_if<NoiseSnr>(&noise)) {
            if (!std::isfinite(snr->snr_db)) throw ValidationError("SNR must be finite");
            const double power = bracket.row(c).squaredNorm() / static_cast<double>(n);
            std_dev = std::sqrt(power / std::pow(10.0, snr->snr_db / 10.0));
        } else if (const auto* sd = std::get_if<NoiseStd>(&noise)) {
            if (!(sd->std_dev >= 0.0) || !std::isfinite(sd->std_dev)) throw ValidationError("noise std must be >= 0");
            std_dev = sd->std_dev;
        }
        if (std_dev > 0.0) {
            for (Eigen::Index k = 0; k < cols; ++k) eps(c, k) = std_dev * gauss(rng);
        }
    }

    Synthesis out;
    out.window.fs = fs;
    out.window.t0 = 0.0;
    out.clean.resize(rows, cols);
    out.noise.resize(rows, cols);
    for (Eigen::Index c = 0; c < rows; ++c) {
        out.clean.row(c) = channels[c].scale * bracket.row(c);
        out.noise.row(c) = channels[c].scale * eps.row(c);
    }
    out.window.samples = out.clean + out.noise;

    out.truth.modes = modes;
    out.truth.amplitudes.resize(channels.size());
    for (std::size_t c = 0; c < channels.size(); ++c) {
        for (std::size_t l = 0; l < modes.size(); ++l)
            out.truth.amplitudes[c].components.push_back(state_from_polar(channels[c].scale, channels[c].phases[l]));
    }
    return out;
}

}  // namespace modal

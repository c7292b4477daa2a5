#pragma once

// Preprocessing and FFT-based mode detection used to seed the EKF family.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "modal/errors.hpp"
#include "modal/prony.hpp"
#include "modal/signal_model.hpp"
#include "modal/topology.hpp"

namespace modal {

/// A normalized window plus the per-channel affine map back to raw units:
/// raw = normalized * scale + offset.
struct Preprocessed {
    MeasurementWindow window;
    std::vector<double> offsets;
    std::vector<double> scales;

    Eigen::MatrixXd denormalize(const Eigen::MatrixXd& normalized) const {
        if (static_cast<std::size_t>(normalized.rows()) != scales.size())
            throw ValidationError("denormalize: channel count mismatch");
        Eigen::MatrixXd out = normalized;
        for (Eigen::Index c = 0; c < out.rows(); ++c)
            out.row(c) = (out.row(c).array() * scales[c] + offsets[c]).matrix();
        return out;
    }
};

/// Per channel: remove the mean, then divide by the largest absolute deviation.
inline Preprocessed preprocess(const MeasurementWindow& raw) {
    raw.validate();
    if (raw.length() < 2) throw ValidationError("preprocess needs at least two samples");
    Preprocessed out;
    out.window = raw;
    for (Eigen::Index c = 0; c < raw.samples.rows(); ++c) {
        const double mean = raw.samples.row(c).mean();
        auto row = out.window.samples.row(c);
        row.array() -= mean;
        const double peak = row.cwiseAbs().maxCoeff();
        if (!(peak > 0.0)) throw ValidationError("channel " + std::to_string(c) + " is constant");
        row /= peak;
        out.offsets.push_back(mean);
        out.scales.push_back(peak);
    }
    return out;
}

/// Bins below this fraction of the spectral maximum are round-off, never peaks.
inline constexpr double spectral_floor = 1e-10;

struct SpectralPeak {
    double freq_hz = 0.0;
    double magnitude = 0.0;
    double prominence = 0.0;  ///< magnitude / median magnitude
};

struct ScanOptions {
    std::size_t max_modes = 3;
    double prominence_threshold = 5.0;
    std::optional<std::size_t> channel;  ///< analyse a single channel instead of the average
};

/// Hann-windowed magnitude spectrum averaged over normalized channels, bins 0..N/2.
inline Eigen::VectorXd averaged_spectrum(const MeasurementWindow& window, std::optional<std::size_t> channel) {
    const Preprocessed pre = preprocess(window);
    const std::size_t N = window.length();
    std::vector<double> hann(N);
    for (std::size_t k = 0; k < N; ++k)
        hann[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(N)));

    Eigen::FFT<double> fft;
    const std::size_t bins = N / 2 + 1;
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bins));
    std::vector<std::size_t> use;
    if (channel) {
        if (*channel >= window.channels()) throw ValidationError("scan channel out of range");
        use.push_back(*channel);
    } else {
        for (std::size_t c = 0; c < window.channels(); ++c) use.push_back(c);
    }
    std::vector<double> frame(N);
    std::vector<std::complex<double>> spec;
    for (std::size_t c : use) {
        for (std::size_t k = 0; k < N; ++k)
            frame[k] = pre.window.samples(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k)) * hann[k];
        fft.fwd(spec, frame);
        for (std::size_t k = 0; k < bins; ++k) avg[static_cast<Eigen::Index>(k)] += std::abs(spec[k]);
    }
    return avg / static_cast<double>(use.size());
}

/// Local spectral maxima standing out from the median by `prominence_threshold`.
/// Returns at most max_modes peaks sorted by frequency; empty when nothing oscillates.
inline std::vector<SpectralPeak> fft_mode_scan(const MeasurementWindow& window, const ScanOptions& opts = {}) {
    window.validate();
    if (window.length() < 32) throw ValidationError("FFT scan needs at least 32 samples");
    const Eigen::VectorXd mag = averaged_spectrum(window, opts.channel);
    const auto N = static_cast<double>(window.length());
    const Eigen::Index last = mag.size() - 1;

    std::vector<double> inner(mag.data() + 1, mag.data() + last);
    std::nth_element(inner.begin(), inner.begin() + static_cast<std::ptrdiff_t>(inner.size() / 2), inner.end());
    const double median = inner[inner.size() / 2];
    const double floor = spectral_floor * mag.maxCoeff();
    if (!(mag.maxCoeff() > 0.0)) return {};

    std::vector<SpectralPeak> peaks;
    for (Eigen::Index k = 1; k < last; ++k) {
        if (!(mag[k] > mag[k - 1] && mag[k] >= mag[k + 1])) continue;
        if (mag[k] < opts.prominence_threshold * median || mag[k] < floor) continue;
        // Parabola through the log magnitudes of the three bins around the maximum.
        const double a = std::log(mag[k - 1]);
        const double b = std::log(mag[k]);
        const double c = std::log(mag[k + 1]);
        const double denom = a - 2.0 * b + c;
        const double delta = denom != 0.0 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;
        const double freq = (static_cast<double>(k) + delta) * window.fs / N;
        if (!(freq > 0.0 && freq < window.fs / 2.0)) continue;
        peaks.push_back(SpectralPeak{freq, mag[k], median > 0.0 ? mag[k] / median : std::numeric_limits<double>::infinity()});
    }
    std::sort(peaks.begin(), peaks.end(),
              [](const SpectralPeak& x, const SpectralPeak& y) { return x.magnitude > y.magnitude; });
    if (peaks.size() > opts.max_modes) peaks.resize(opts.max_modes);
    std::sort(peaks.begin(), peaks.end(),
              [](const SpectralPeak& x, const SpectralPeak& y) { return x.freq_hz < y.freq_hz; });
    return peaks;
}

struct InitialGuess {
    SystemState state;
    bool used_fallback = false;
    std::string warning;
};

inline constexpr double amplitude_fit_seconds = 2.0;

/// omega from the peaks, sigma = 0, amplitudes from a residue fit over the
/// first two seconds. Falls back to per-channel RMS with zero phase.
inline InitialGuess build_initial_state(const std::vector<SpectralPeak>& peaks, const MeasurementWindow& window) {
    if (peaks.empty()) throw ValidationError("no spectral peaks to initialize from");
    window.validate();
    std::vector<Mode> modes;
    for (const SpectralPeak& p : peaks) modes.push_back(Mode::from_hz(p.freq_hz, 0.0));
    const ModeSet mode_set = ModeSet::sorted(std::move(modes));

    InitialGuess out;
    const auto head = static_cast<Eigen::Index>(
        std::min<double>(static_cast<double>(window.length()), std::round(amplitude_fit_seconds * window.fs)));
    MeasurementWindow start{window.samples.leftCols(head), window.fs, window.t0};
    try {
        if (static_cast<std::size_t>(head) < 2 * mode_set.size())
            throw ValidationError("too few samples for the amplitude fit");
        out.state = residue_fit(start, mode_set).initial_state(mode_set);
    } catch (const std::exception& e) {
        out.used_fallback = true;
        out.warning = std::string("residue fit failed, using RMS amplitudes: ") + e.what();
        out.state.modes = mode_set;
        out.state.amplitudes.clear();
        for (Eigen::Index c = 0; c < window.samples.rows(); ++c) {
            const double rms = std::sqrt(window.samples.row(c).squaredNorm() / static_cast<double>(window.length()));
            ChannelAmplitude a;
            for (std::size_t l = 0; l < mode_set.size(); ++l) a.components.push_back(state_from_polar(rms, 0.0));
            out.state.amplitudes.push_back(std::move(a));
        }
    }
    return out;
}

/// Reduced-layout variant: the full guess cut to each node's neighbourhood.
inline std::vector<ReducedState> build_initial_reduced_states(const std::vector<SpectralPeak>& peaks,
                                                              const MeasurementWindow& window, const Topology& topo) {
    if (topo.size() != window.channels()) throw ValidationError("topology node count must equal channel count");
    const InitialGuess full = build_initial_state(peaks, window);
    std::vector<ReducedState> out;
    for (std::size_t m = 0; m < topo.size(); ++m) out.push_back(ReducedState::restrict(full.state, m, topo.neighbors(m)));
    return out;
}

}  // namespace modal

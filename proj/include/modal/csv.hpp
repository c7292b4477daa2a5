#pragma once

// Measurement CSV: header "t,ch0,ch1,...", one row per sample, time in seconds.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "modal/errors.hpp"
#include "modal/signal_model.hpp"

namespace modal {

/// Largest allowed deviation of a time step from the median step.
inline constexpr double max_timestamp_jitter = 1e-6;

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

inline double parse_double(std::string_view field, std::size_t lineno) {
    field = trim(field);
    if (!field.empty() && field.front() == '+') field.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
        throw ValidationError("line " + std::to_string(lineno) + ": cannot parse '" + std::string(field) + "'");
    if (!std::isfinite(v)) throw ValidationError("line " + std::to_string(lineno) + ": non-finite value");
    return v;
}

}  // namespace detail

/// Reads the CSV, checks uniform spacing and infers fs from the median step.
inline MeasurementWindow read_measurement_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty CSV");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 2 || detail::trim(header[0]) != "t")
        throw ValidationError("CSV header must be 't,ch0,ch1,...'");
    const std::size_t channels = header.size() - 1;

    std::vector<double> times;
    std::vector<double> values;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty() || detail::trim(line) == "\r") continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw ValidationError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                                  " fields");
        times.push_back(detail::parse_double(fields[0], lineno));
        for (std::size_t c = 0; c < channels; ++c) values.push_back(detail::parse_double(fields[c + 1], lineno));
    }
    if (times.size() < 2) throw ValidationError("CSV needs at least two samples");

    std::vector<double> steps;
    for (std::size_t k = 1; k < times.size(); ++k) steps.push_back(times[k] - times[k - 1]);
    std::vector<double> sorted = steps;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
    const double dt = sorted[sorted.size() / 2];
    if (!(dt > 0.0)) throw ValidationError("timestamps must increase");
    for (std::size_t k = 0; k < steps.size(); ++k) {
        if (std::abs(steps[k] - dt) > max_timestamp_jitter)
            throw ValidationError("non-uniform sample spacing at row " + std::to_string(k + 2));
    }

    MeasurementWindow w;
    w.fs = 1.0 / dt;
    w.t0 = times.front();
    w.samples.resize(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(times.size()));
    for (std::size_t k = 0; k < times.size(); ++k)
        for (std::size_t c = 0; c < channels; ++c)
            w.samples(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k)) = values[k * channels + c];
    w.validate();
    return w;
}

/// Round-trip precision output; t[k] = t0 + k / fs.
inline void write_measurement_csv(std::ostream& out, const Eigen::MatrixXd& samples, double fs, double t0 = 0.0) {
    check_fs(fs);
    out << 't';
    for (Eigen::Index c = 0; c < samples.rows(); ++c) out << ",ch" << c;
    out << '\n';
    char buf[32];
    auto put = [&](double v) {
        const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
        out.write(buf, ptr - buf);
    };
    for (Eigen::Index k = 0; k < samples.cols(); ++k) {
        put(t0 + static_cast<double>(k) / fs);
        for (Eigen::Index c = 0; c < samples.rows(); ++c) {
            out << ',';
            put(samples(c, k));
        }
        out << '\n';
    }
}

}  // namespace modal

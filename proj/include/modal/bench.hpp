#pragma once

// Monte Carlo comparison of every estimator on noisy single-mode ringdowns.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "modal/cekf.hpp"
#include "modal/distributed.hpp"
#include "modal/errors.hpp"
#include "modal/prony.hpp"
#include "modal/signal_model.hpp"
#include "modal/topology.hpp"

namespace modal {

enum class Estimator { prony, admm, cekf, dekf, dekfr };

inline const std::vector<Estimator>& all_estimators() {
    static const std::vector<Estimator> all{Estimator::prony, Estimator::admm, Estimator::cekf, Estimator::dekf,
                                            Estimator::dekfr};
    return all;
}

inline std::string to_string(Estimator e) {
    switch (e) {
        case Estimator::prony: return "prony";
        case Estimator::admm: return "admm";
        case Estimator::cekf: return "cekf";
        case Estimator::dekf: return "dekf";
        case Estimator::dekfr: return "dekfr";
    }
    return "?";
}

inline std::string display_name(Estimator e) {
    switch (e) {
        case Estimator::prony: return "PRONY";
        case Estimator::admm: return "ADMM";
        case Estimator::cekf: return "EKF";
        case Estimator::dekf: return "DEKF";
        case Estimator::dekfr: return "DEKF-R";
    }
    return "?";
}

inline Estimator parse_estimator(const std::string& s) {
    for (Estimator e : all_estimators()) {
        if (s == to_string(e)) return e;
    }
    throw ValidationError("unknown estimator '" + s + "'");
}

NLOHMANN_JSON_SERIALIZE_ENUM(Estimator, {{Estimator::prony, "prony"},
                                         {Estimator::admm, "admm"},
                                         {Estimator::cekf, "cekf"},
                                         {Estimator::dekf, "dekf"},
                                         {Estimator::dekfr, "dekfr"}})

// ---------------------------------------------------------------------------
// Error metrics
// ---------------------------------------------------------------------------

struct ModeError {
    double freq_err_pct = 0.0;
    double damp_err_pct = 0.0;
};

/// Frequency mismatch beyond which a truth mode counts as not found.
inline constexpr double max_match_offset = 0.5;

/// Pairs each truth mode with the nearest unused estimate (closest pairs first).
/// Returns nullopt when some truth mode has no estimate within 50% in frequency.
inline std::optional<std::vector<ModeError>> error_metrics(const ModeSet& estimated, const ModeSet& truth) {
    if (estimated.size() != truth.size()) throw ValidationError("estimate and truth must have the same mode count");
    struct Pair {
        double dist;
        std::size_t est;
        std::size_t tru;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < estimated.size(); ++i)
        for (std::size_t j = 0; j < truth.size(); ++j)
            pairs.push_back({std::abs(estimated[i].omega - truth[j].omega), i, j});
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.dist < b.dist; });

    std::vector<bool> est_used(estimated.size(), false);
    std::vector<std::optional<std::size_t>> match(truth.size());
    for (const Pair& p : pairs) {
        if (est_used[p.est] || match[p.tru]) continue;
        est_used[p.est] = true;
        match[p.tru] = p.est;
    }

    std::vector<ModeError> out;
    for (std::size_t j = 0; j < truth.size(); ++j) {
        const Mode& t = truth[j];
        const Mode& e = estimated[*match[j]];
        if (!std::isfinite(e.omega) || !std::isfinite(e.sigma)) return std::nullopt;
        const double freq_rel = std::abs(e.omega - t.omega) / t.omega;
        if (freq_rel > max_match_offset) return std::nullopt;
        out.push_back(ModeError{100.0 * freq_rel, 100.0 * std::abs(e.sigma - t.sigma) / std::abs(t.sigma)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Configuration and report
// ---------------------------------------------------------------------------

struct BenchConfig {
    std::vector<double> snr_db{50.0, 40.0, 30.0, 20.0};
    std::size_t runs = 1000;
    std::vector<Estimator> estimators = all_estimators();

    double omega = 4.0 * std::numbers::pi;
    double sigma = 0.0126;
    double fs = 30.0;
    double duration = 10.0;
    std::size_t channels = 5;
    std::string topology = "ring:5";
    std::uint64_t seed = 20170101;

    double scale_min = 0.5;
    double scale_max = 2.0;
    double init_min = 0.3;
    double init_max = 1.3;
    bool noiseless = false;   ///< ignore snr_db and emit clean data
    bool exact_init = false;  ///< start every filter at the truth

    FilterConfig::Defaults cekf{1e-3, 1e-9, 1e-2, 1.0, 1e-2};
    FilterConfig::Defaults distributed{1e-4, 1e-8, 1e-2, 1.0, 1e-2};
    double rho = 0.01;
    double tol = 0.01;
    std::size_t max_iters = 500;
    std::size_t prony_order = 0;

    std::size_t workers = 0;  ///< 0 = MODAL_DEKF_THREADS or hardware concurrency

    std::size_t samples() const { return static_cast<std::size_t>(std::llround(duration * fs)); }

    void validate() const {
        if (runs < 1) throw ValidationError("runs must be >= 1");
        if (snr_db.empty()) throw ValidationError("need at least one SNR level");
        if (!(omega > 0.0) || !(fs > 0.0) || !(duration > 0.0)) throw ValidationError("bad scenario parameters");
        if (sigma == 0.0) throw ValidationError("relative damping error is undefined for sigma = 0");
        if (channels < 1) throw ValidationError("need at least one channel");
        if (!(scale_min > 0.0) || scale_max < scale_min) throw ValidationError("bad amplitude-scale range");
        if (init_max < init_min) throw ValidationError("bad init-perturbation range");
    }
};

struct CellStats {
    double freq_mean = 0.0;
    double freq_std = 0.0;
    double damp_mean = 0.0;
    double damp_std = 0.0;
    std::size_t converged = 0;
    std::size_t divergences = 0;
    std::vector<double> freq_errors;  ///< per converged run, percent
    std::vector<double> damp_errors;

    bool operator==(const CellStats&) const = default;
};

struct BenchReport {
    std::vector<double> snr_db;
    std::vector<Estimator> estimators;
    std::size_t runs = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<CellStats>> cells;  ///< [estimator][snr]

    const CellStats& cell(Estimator e, double snr) const {
        for (std::size_t i = 0; i < estimators.size(); ++i) {
            if (estimators[i] != e) continue;
            for (std::size_t j = 0; j < snr_db.size(); ++j) {
                if (snr_db[j] == snr) return cells[i][j];
            }
        }
        throw ValidationError("no such cell in report");
    }

    bool operator==(const BenchReport&) const = default;
};

inline void to_json(nlohmann::json& j, const FilterConfig::Defaults& d) {
    j = {{"r", d.r}, {"q_mode", d.q_mode}, {"p0_amplitude", d.p0_amplitude}, {"p0_omega", d.p0_omega},
         {"p0_sigma", d.p0_sigma}};
}

inline void from_json(const nlohmann::json& j, FilterConfig::Defaults& d) {
    d.r = j.value("r", d.r);
    d.q_mode = j.value("q_mode", d.q_mode);
    d.p0_amplitude = j.value("p0_amplitude", d.p0_amplitude);
    d.p0_omega = j.value("p0_omega", d.p0_omega);
    d.p0_sigma = j.value("p0_sigma", d.p0_sigma);
}

inline void to_json(nlohmann::json& j, const BenchConfig& c) {
    j = {{"snr_db", c.snr_db},       {"runs", c.runs},
         {"estimators", c.estimators}, {"omega", c.omega},
         {"sigma", c.sigma},         {"fs", c.fs},
         {"duration", c.duration},   {"channels", c.channels},
         {"topology", c.topology},   {"seed", c.seed},
         {"scale_min", c.scale_min}, {"scale_max", c.scale_max},
         {"init_min", c.init_min},   {"init_max", c.init_max},
         {"noiseless", c.noiseless}, {"exact_init", c.exact_init},
         {"cekf", c.cekf},           {"distributed", c.distributed},
         {"rho", c.rho},             {"tol", c.tol},
         {"max_iters", c.max_iters}, {"prony_order", c.prony_order},
         {"workers", c.workers}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, BenchConfig& c) {
    c.snr_db = j.value("snr_db", c.snr_db);
    c.runs = j.value("runs", c.runs);
    c.estimators = j.value("estimators", c.estimators);
    c.omega = j.value("omega", c.omega);
    c.sigma = j.value("sigma", c.sigma);
    c.fs = j.value("fs", c.fs);
    c.duration = j.value("duration", c.duration);
    c.channels = j.value("channels", c.channels);
    c.topology = j.value("topology", c.topology);
    c.seed = j.value("seed", c.seed);
    c.scale_min = j.value("scale_min", c.scale_min);
    c.scale_max = j.value("scale_max", c.scale_max);
    c.init_min = j.value("init_min", c.init_min);
    c.init_max = j.value("init_max", c.init_max);
    c.noiseless = j.value("noiseless", c.noiseless);
    c.exact_init = j.value("exact_init", c.exact_init);
    if (j.contains("cekf")) j.at("cekf").get_to(c.cekf);
    if (j.contains("distributed")) j.at("distributed").get_to(c.distributed);
    c.rho = j.value("rho", c.rho);
    c.tol = j.value("tol", c.tol);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.prony_order = j.value("prony_order", c.prony_order);
    c.workers = j.value("workers", c.workers);
}

inline void to_json(nlohmann::json& j, const CellStats& s) {
    j = {{"freq_mean", s.freq_mean},     {"freq_std", s.freq_std},       {"damp_mean", s.damp_mean},
         {"damp_std", s.damp_std},       {"converged", s.converged},     {"divergences", s.divergences},
         {"freq_errors", s.freq_errors}, {"damp_errors", s.damp_errors}};
}

inline void from_json(const nlohmann::json& j, CellStats& s) {
    j.at("freq_mean").get_to(s.freq_mean);
    j.at("freq_std").get_to(s.freq_std);
    j.at("damp_mean").get_to(s.damp_mean);
    j.at("damp_std").get_to(s.damp_std);
    j.at("converged").get_to(s.converged);
    j.at("divergences").get_to(s.divergences);
    j.at("freq_errors").get_to(s.freq_errors);
    j.at("damp_errors").get_to(s.damp_errors);
}

inline void to_json(nlohmann::json& j, const BenchReport& r) {
    j = {{"snr_db", r.snr_db}, {"estimators", r.estimators}, {"runs", r.runs}, {"seed", r.seed}, {"cells", r.cells}};
}

inline void from_json(const nlohmann::json& j, BenchReport& r) {
    j.at("snr_db").get_to(r.snr_db);
    j.at("estimators").get_to(r.estimators);
    j.at("runs").get_to(r.runs);
    j.at("seed").get_to(r.seed);
    j.at("cells").get_to(r.cells);
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

namespace detail {

/// Independent stream per (snr level, run, purpose); purpose 0 is the scenario.
inline std::mt19937_64 substream(std::uint64_t master, std::size_t snr_index, std::size_t run, std::size_t purpose) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(snr_index), static_cast<std::uint32_t>(run),
                      static_cast<std::uint32_t>(purpose)};
    return std::mt19937_64(seq);
}

inline Eigen::VectorXd perturb(const Eigen::VectorXd& truth, const BenchConfig& cfg, std::mt19937_64& rng) {
    if (cfg.exact_init) return truth;
    std::uniform_real_distribution<double> factor(cfg.init_min, cfg.init_max);
    Eigen::VectorXd out = truth;
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] *= factor(rng);
    return out;
}

inline std::size_t resolve_workers(std::size_t requested) {
    if (const char* env = std::getenv("MODAL_DEKF_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    if (requested > 0) return requested;
    return std::max(1u, std::thread::hardware_concurrency());
}

struct RunOutcome {
    bool converged = false;
    double freq_err = 0.0;
    double damp_err = 0.0;
};

inline RunOutcome score(const ModeSet& estimate, const ModeSet& truth) {
    const auto errs = error_metrics(estimate, truth);
    if (!errs) return {};
    RunOutcome out{true, 0.0, 0.0};
    for (const ModeError& e : *errs) {
        out.freq_err += e.freq_err_pct / static_cast<double>(errs->size());
        out.damp_err += e.damp_err_pct / static_cast<double>(errs->size());
    }
    return out;
}

}  // namespace detail

/// The single-mode scenario of one Monte Carlo run: per-channel scale and
/// phase drawn uniformly, then noise at the given SNR level.
inline Synthesis bench_scenario(const BenchConfig& cfg, std::size_t snr_index, std::size_t run) {
    const ModeSet truth({Mode{cfg.omega, cfg.sigma}});
    auto rng = detail::substream(cfg.seed, snr_index, run, 0);
    std::uniform_real_distribution<double> phase(-std::numbers::pi / 2.0, std::numbers::pi / 2.0);
    std::uniform_real_distribution<double> scale(cfg.scale_min, cfg.scale_max);
    std::vector<ChannelSpec> channels(cfg.channels);
    for (ChannelSpec& ch : channels) {
        ch.scale = scale(rng);
        ch.phases = {phase(rng)};
    }
    const NoiseSpec noise = cfg.noiseless ? NoiseSpec{NoiseOff{}} : NoiseSpec{NoiseSnr{cfg.snr_db.at(snr_index)}};
    return synthesize_window(truth, channels, cfg.fs, cfg.samples(), noise, rng());
}

namespace detail {

inline std::vector<RunOutcome> run_once(const BenchConfig& cfg, const Topology& topo, std::size_t snr_index,
                                        std::size_t run) {
    const Synthesis syn = bench_scenario(cfg, snr_index, run);
    const ModeSet& truth = syn.truth.modes;
    const Eigen::VectorXd truth_vec = syn.truth.vectorize();
    const std::size_t M = cfg.channels;
    const std::size_t L = truth.size();

    std::vector<RunOutcome> out;
    for (Estimator est : cfg.estimators) {
        auto erng = substream(cfg.seed, snr_index, run, 1 + static_cast<std::size_t>(est));
        try {
            switch (est) {
                case Estimator::prony:
                    out.push_back(score(prony_fit(syn.window, L, PronyOptions{cfg.prony_order}), truth));
                    break;
                case Estimator::admm:
                    out.push_back(score(
                        admm_prony(syn.window, L, AdmmOptions{cfg.rho, cfg.tol, cfg.max_iters, cfg.prony_order}).modes,
                        truth));
                    break;
                case Estimator::cekf: {
                    const auto trace = cekf_run(syn.window, perturb(truth_vec, cfg, erng),
                                                FilterConfig::uniform(M, L, cfg.cekf), L);
                    out.push_back(score(to_mode_set(trace.modes), truth));
                    break;
                }
                case Estimator::dekf: {
                    std::vector<Eigen::VectorXd> inits;
                    std::vector<FilterConfig> configs;
                    for (std::size_t m = 0; m < M; ++m) {
                        inits.push_back(perturb(truth_vec, cfg, erng));
                        configs.push_back(FilterConfig::uniform(M, L, cfg.distributed));
                    }
                    const auto nodes = dekf_run(syn.window, topo, uniform_weights(topo), inits, configs, L);
                    out.push_back(score(mean_modes(nodes), truth));
                    break;
                }
                case Estimator::dekfr: {
                    std::vector<Eigen::VectorXd> inits;
                    std::vector<FilterConfig> configs;
                    for (std::size_t m = 0; m < M; ++m) {
                        const Eigen::VectorXd local =
                            ReducedState::restrict(syn.truth, m, topo.neighbors(m)).vectorize();
                        inits.push_back(perturb(local, cfg, erng));
                        configs.push_back(FilterConfig::uniform(topo.degree(m), L, cfg.distributed));
                    }
                    const auto nodes = dekfr_run(syn.window, topo, uniform_weights(topo),
                                                 uniform_reduced_weights(topo), inits, configs, L);
                    out.push_back(score(mean_modes(nodes), truth));
                    break;
                }
            }
        } catch (const DivergenceError&) {
            out.push_back({});
        } catch (const DegenerateSignalError&) {
            out.push_back({});
        } catch (const NonConvergenceError<Eigen::VectorXd>&) {
            out.push_back({});
        }
    }
    return out;
}

inline void summarize(CellStats& s) {
    auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
        mean = 0.0;
        sd = 0.0;
        if (v.empty()) return;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        if (v.size() < 2) return;
        for (double x : v) sd += (x - mean) * (x - mean);
        sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
    };
    s.converged = s.freq_errors.size();
    mean_std(s.freq_errors, s.freq_mean, s.freq_std);
    mean_std(s.damp_errors, s.damp_mean, s.damp_std);
}

}  // namespace detail

/// Deterministic for a fixed config: every run draws from its own seeded
/// substream and results are collected in run order, whatever the worker count.
inline BenchReport monte_carlo(const BenchConfig& cfg) {
    cfg.validate();
    const Topology topo = Topology::parse_spec(cfg.topology, cfg.channels);
    if (topo.size() != cfg.channels) throw ValidationError("topology size must equal the channel count");

    const std::size_t levels = cfg.snr_db.size();
    const std::size_t total = levels * cfg.runs;
    std::vector<std::vector<detail::RunOutcome>> outcomes(total);
    std::atomic<std::size_t> next{0};
    std::mutex failure_mutex;
    std::exception_ptr failure;
    auto worker = [&] {
        try {
            for (std::size_t job = next++; job < total; job = next++)
                outcomes[job] = detail::run_once(cfg, topo, job / cfg.runs, job % cfg.runs);
        } catch (...) {
            next = total;
            const std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    };
    const std::size_t workers = std::min(detail::resolve_workers(cfg.workers), total);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    BenchReport report;
    report.snr_db = cfg.snr_db;
    report.estimators = cfg.estimators;
    report.runs = cfg.runs;
    report.seed = cfg.seed;
    report.cells.assign(cfg.estimators.size(), std::vector<CellStats>(levels));
    for (std::size_t job = 0; job < total; ++job) {
        const std::size_t level = job / cfg.runs;
        for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
            const detail::RunOutcome& o = outcomes[job][e];
            CellStats& cell = report.cells[e][level];
            if (o.converged) {
                cell.freq_errors.push_back(o.freq_err);
                cell.damp_errors.push_back(o.damp_err);
            } else {
                ++cell.divergences;
            }
        }
    }
    for (auto& row : report.cells)
        for (auto& cell : row) detail::summarize(cell);
    return report;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

enum class TableFormat { text, csv, json };

inline std::string format_pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v << '%';
    return os.str();
}

/// Mean and Std rows per estimator, a (Freq, Damping) column pair per SNR.
inline std::string report_table(const BenchReport& report, TableFormat format) {
    if (format == TableFormat::json) return nlohmann::json(report).dump(2);

    std::ostringstream os;
    if (format == TableFormat::csv) {
        os << "estimator,statistic";
        for (double snr : report.snr_db) os << ",freq_" << snr << "db,damp_" << snr << "db";
        os << '\n';
        os << std::setprecision(17);
        for (std::size_t e = 0; e < report.estimators.size(); ++e) {
            for (const char* stat : {"mean", "std"}) {
                os << to_string(report.estimators[e]) << ',' << stat;
                for (const CellStats& c : report.cells[e]) {
                    const bool mean = std::string(stat) == "mean";
                    os << ',' << (mean ? c.freq_mean : c.freq_std) << ',' << (mean ? c.damp_mean : c.damp_std);
                }
                os << '\n';
            }
        }
        return os.str();
    }

    os << std::left << std::setw(20) << "Error";
    for (double snr : report.snr_db) {
        std::ostringstream head;
        head << "SNR=" << snr << "dB";
        os << std::setw(22) << head.str();
    }
    os << '\n' << std::setw(20) << "";
    for (std::size_t i = 0; i < report.snr_db.size(); ++i) os << std::setw(11) << "Freq" << std::setw(11) << "Damping";
    os << '\n';
    for (std::size_t e = 0; e < report.estimators.size(); ++e) {
        for (const char* stat : {"Mean", "Std"}) {
            os << std::setw(20) << (std::string(stat) + " (" + display_name(report.estimators[e]) + ")");
            for (const CellStats& c : report.cells[e]) {
                const bool mean = std::string(stat) == "Mean";
                os << std::setw(11) << format_pct(mean ? c.freq_mean : c.freq_std) << std::setw(11)
                   << format_pct(mean ? c.damp_mean : c.damp_std);
            }
            os << '\n';
        }
        os << std::setw(20) << ("Diverged (" + display_name(report.estimators[e]) + ")");
        for (const CellStats& c : report.cells[e]) os << std::setw(22) << c.divergences;
        os << '\n';
    }
    return os.str();
}

}  // namespace modal

// modal_dekf: generate synthetic ringdowns, estimate modes from CSV, run the Monte Carlo benchmark.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "modal/bench.hpp"
#include "modal/cekf.hpp"
#include "modal/csv.hpp"
#include "modal/distributed.hpp"
#include "modal/init_detect.hpp"
#include "modal/prony.hpp"
#include "modal/signal_model.hpp"
#include "modal/topology.hpp"

#ifndef MODAL_VERSION
#define MODAL_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_validation = 2;
constexpr int exit_divergence = 3;
constexpr int exit_io = 4;

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Estimator failure already reported on disk; carries the exit code path.
class ReportedDivergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& argv,
                    const json& config, std::uint64_t seed, const json& artifacts) {
    write_json(dir / "manifest.json", {{"tool", "modal_dekf"},
                                       {"version", MODAL_VERSION},
                                       {"command", command},
                                       {"argv", argv},
                                       {"seed", seed},
                                       {"config", config},
                                       {"artifacts", artifacts}});
}

/// "FREQ_HZ:SIGMA" -> Mode
modal::Mode parse_mode(const std::string& spec) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw modal::ValidationError("mode must be FREQ_HZ:SIGMA, got '" + spec + "'");
    try {
        std::size_t used = 0;
        const double f = std::stod(spec.substr(0, colon), &used);
        if (used != colon) throw std::invalid_argument("trailing");
        const std::string rest = spec.substr(colon + 1);
        const double s = std::stod(rest, &used);
        if (used != rest.size()) throw std::invalid_argument("trailing");
        if (!(f > 0.0)) throw modal::ValidationError("mode frequency must be positive");
        return modal::Mode::from_hz(f, s);
    } catch (const std::logic_error&) {
        throw modal::ValidationError("mode must be FREQ_HZ:SIGMA, got '" + spec + "'");
    }
}

/// Optional overrides shared by estimate and bench.
struct Tuning {
    std::optional<double> r_meas;
    std::optional<double> q_mode;
    std::optional<double> p0;
    std::optional<double> p0_omega;
    std::optional<double> p0_sigma;
    double rho = 0.01;
    double tol = 0.01;
    std::size_t max_iters = 500;
    std::size_t prony_order = 0;

    modal::FilterConfig::Defaults apply(modal::FilterConfig::Defaults d) const {
        if (r_meas) d.r = *r_meas;
        if (q_mode) d.q_mode = *q_mode;
        if (p0) d.p0_amplitude = *p0;
        if (p0_omega) d.p0_omega = *p0_omega;
        if (p0_sigma) d.p0_sigma = *p0_sigma;
        return d;
    }
};

void add_tuning(CLI::App* cmd, Tuning& t) {
    cmd->add_option("--r-meas", t.r_meas, "Measurement noise variance R (diagonal)");
    cmd->add_option("--q-mode", t.q_mode, "Process noise on the omega/sigma entries");
    cmd->add_option("--p0", t.p0, "Initial covariance of amplitude entries");
    cmd->add_option("--p0-omega", t.p0_omega, "Initial covariance of omega entries");
    cmd->add_option("--p0-sigma", t.p0_sigma, "Initial covariance of sigma entries");
    cmd->add_option("--rho", t.rho, "ADMM penalty weight")->capture_default_str();
    cmd->add_option("--tol", t.tol, "ADMM stopping tolerance")->capture_default_str();
    cmd->add_option("--max-iters", t.max_iters, "ADMM iteration cap")->capture_default_str();
    cmd->add_option("--prony-order", t.prony_order, "Linear-prediction order (0 = default overmodeled order)")
        ->capture_default_str();
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
    double fs = 30.0;
    double duration = 10.0;
    std::size_t channels = 5;
    double snr = 50.0;
    std::string noise = "on";
    std::uint64_t seed = 20170101;
    std::vector<std::string> modes{"2:0.0126"};
    double scale_min = 0.5;
    double scale_max = 2.0;
    std::string out_dir = ".";
};

int run_generate(const GenerateArgs& a, const std::vector<std::string>& argv) {
    std::vector<modal::Mode> mode_list;
    for (const std::string& m : a.modes) mode_list.push_back(parse_mode(m));
    const modal::ModeSet modes = modal::ModeSet::sorted(std::move(mode_list));
    for (std::size_t l = 1; l < modes.size(); ++l) {
        if (modes[l].omega == modes[l - 1].omega) throw modal::ValidationError("duplicate mode frequency");
    }
    if (a.channels < 1) throw modal::ValidationError("need at least one channel");
    if (!(a.duration > 0.0)) throw modal::ValidationError("duration must be positive");
    if (!(a.scale_min > 0.0) || a.scale_max < a.scale_min) throw modal::ValidationError("bad scale range");
    modal::check_fs(a.fs);
    const auto n = static_cast<std::size_t>(std::llround(a.duration * a.fs));

    std::mt19937_64 rng(a.seed);
    std::uniform_real_distribution<double> scale(a.scale_min, a.scale_max);
    std::uniform_real_distribution<double> phase(-std::numbers::pi / 2.0, std::numbers::pi / 2.0);
    std::vector<modal::ChannelSpec> channels(a.channels);
    for (modal::ChannelSpec& ch : channels) {
        ch.scale = scale(rng);
        for (std::size_t l = 0; l < modes.size(); ++l) ch.phases.push_back(phase(rng));
    }
    const bool noisy = a.noise != "off";
    const modal::NoiseSpec noise = noisy ? modal::NoiseSpec{modal::NoiseSnr{a.snr}} : modal::NoiseSpec{modal::NoiseOff{}};
    const modal::Synthesis syn = modal::synthesize_window(modes, channels, a.fs, n, noise, rng());

    const fs::path dir(a.out_dir);
    ensure_dir(dir);
    std::ostringstream csv;
    modal::write_measurement_csv(csv, syn.window.samples, a.fs);
    write_file(dir / "measurements.csv", csv.str());

    json config = {{"fs", a.fs},
                   {"duration", a.duration},
                   {"samples", n},
                   {"channels", a.channels},
                   {"noise", noisy ? "snr" : "off"},
                   {"snr_db", noisy ? json(a.snr) : json(nullptr)},
                   {"modes", a.modes},
                   {"scale_min", a.scale_min},
                   {"scale_max", a.scale_max}};
    json truth_modes = json::array();
    for (const modal::Mode& m : modes)
        truth_modes.push_back({{"freq_hz", m.freq_hz()}, {"omega", m.omega}, {"sigma", m.sigma},
                               {"damping_ratio", modal::damping_ratio(m.sigma, m.omega)}});
    json phases = json::array();
    json scales = json::array();
    for (const modal::ChannelSpec& ch : channels) {
        phases.push_back(ch.phases);
        scales.push_back(ch.scale);
    }
    write_json(dir / "truth.json",
               {{"modes", truth_modes}, {"phases", phases}, {"scales", scales}, {"seed", a.seed}, {"config", config}});
    write_manifest(dir, "generate", argv, config, a.seed,
                   {{"measurements", "measurements.csv"}, {"truth", "truth.json"}});
    std::cout << "wrote " << (dir / "measurements.csv").string() << " (" << a.channels << " x " << n << ")\n";
    return exit_ok;
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

struct EstimateArgs {
    std::string input;
    std::string method;
    std::string topology;
    std::optional<std::size_t> modes;
    bool auto_detect = false;
    std::size_t max_modes = 3;
    double threshold = 5.0;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    Tuning tuning;
};

json modes_json(const modal::ModeSet& modes) {
    json out = json::array();
    for (const modal::Mode& m : modes) out.push_back({{"freq_hz", m.freq_hz()}, {"sigma", m.sigma}});
    return out;
}

int run_estimate(const EstimateArgs& a, const std::vector<std::string>& argv) {
    const bool distributed = a.method == "dekf" || a.method == "dekfr";
    const bool filter = distributed || a.method == "cekf";
    if (a.auto_detect == a.modes.has_value()) throw modal::ValidationError("give exactly one of --modes or --auto-detect");
    if (a.modes && *a.modes < 1) throw modal::ValidationError("--modes must be at least 1");
    if (distributed && a.topology.empty()) throw modal::ValidationError("--topology is required for " + a.method);

    std::ifstream in(a.input);
    if (!in) throw IoError("cannot open input '" + a.input + "'");
    const modal::MeasurementWindow raw = modal::read_measurement_csv(in);
    const modal::Preprocessed pre = modal::preprocess(raw);
    const modal::MeasurementWindow& w = pre.window;
    const std::size_t M = w.channels();

    const fs::path dir(a.out_dir);
    ensure_dir(dir);

    modal::FilterConfig::Defaults defaults =
        a.tuning.apply(distributed ? modal::BenchConfig{}.distributed : modal::BenchConfig{}.cekf);
    json config = {{"input", a.input},
                   {"method", a.method},
                   {"topology", a.topology.empty() ? json(nullptr) : json(a.topology)},
                   {"auto_detect", a.auto_detect},
                   {"modes", a.modes ? json(*a.modes) : json(nullptr)},
                   {"max_modes", a.max_modes},
                   {"threshold", a.threshold},
                   {"filter", defaults},
                   {"rho", a.tuning.rho},
                   {"tol", a.tuning.tol},
                   {"max_iters", a.tuning.max_iters},
                   {"prony_order", a.tuning.prony_order},
                   {"fs", w.fs},
                   {"samples", w.length()},
                   {"channels", M}};
    json warnings = json::array();
    json artifacts = {{"report", "report.json"}, {"fitted", "fitted.csv"}};

    // Mode count and EKF seeds.
    std::vector<modal::SpectralPeak> peaks;
    std::size_t L = 0;
    if (a.auto_detect) {
        peaks = modal::fft_mode_scan(w, modal::ScanOptions{a.max_modes, a.threshold, std::nullopt});
        L = peaks.size();
    } else {
        L = *a.modes;
        if (filter) {
            peaks = modal::fft_mode_scan(w, modal::ScanOptions{L, a.threshold, std::nullopt});
            if (peaks.size() < L) {
                warnings.push_back("FFT found fewer peaks than --modes; EKF seeded from Prony");
                peaks.clear();
                for (const modal::Mode& m : modal::prony_fit(w, L, {a.tuning.prony_order}))
                    peaks.push_back(modal::SpectralPeak{m.freq_hz(), 0.0, 0.0});
            }
        }
    }
    json detection = json::array();
    for (const auto& p : peaks)
        detection.push_back({{"freq_hz", p.freq_hz}, {"magnitude", p.magnitude}, {"prominence", p.prominence}});

    json report = {{"method", a.method}, {"seed", a.seed}, {"config", config}, {"detection", detection}};

    auto write_outputs = [&](const Eigen::MatrixXd& fitted_normalized) {
        std::ostringstream csv;
        modal::write_measurement_csv(csv, pre.denormalize(fitted_normalized), raw.fs, raw.t0);
        write_file(dir / "fitted.csv", csv.str());
        report["warnings"] = warnings;
        write_json(dir / "report.json", report);
        write_manifest(dir, "estimate", argv, config, a.seed, artifacts);
    };

    if (L == 0) {
        warnings.push_back("no oscillation detected");
        report["modes"] = json::array();
        write_outputs(Eigen::MatrixXd::Zero(w.samples.rows(), w.samples.cols()));
        std::cout << "no oscillation detected\n";
        return exit_ok;
    }

    modal::ModeSet estimate;
    try {
        std::optional<modal::InitialGuess> guess;
        if (filter) {
            guess = modal::build_initial_state(peaks, w);
            if (guess->used_fallback) warnings.push_back(guess->warning);
        }
        if (a.method == "prony") {
            estimate = modal::prony_fit(w, L, {a.tuning.prony_order});
        } else if (a.method == "admm") {
            const modal::AdmmResult r = modal::admm_prony(
                w, L, modal::AdmmOptions{a.tuning.rho, a.tuning.tol, a.tuning.max_iters, a.tuning.prony_order});
            estimate = r.modes;
            report["admm"] = {{"iterations", r.iterations}, {"primal_residual", r.primal_residual}};
        } else if (a.method == "cekf") {
            const modal::EstimateTrace t =
                modal::cekf_run(w, guess->state, modal::FilterConfig::uniform(M, L, defaults));
            estimate = modal::to_mode_set(t.modes);
        } else {
            const modal::Topology topo = modal::Topology::parse_spec(a.topology, M);
            if (topo.size() != M) throw modal::ValidationError("topology node count must equal channel count");
            std::vector<modal::EstimateTrace> nodes;
            if (a.method == "dekf") {
                nodes = modal::dekf_run(w, topo, modal::uniform_weights(topo),
                                        std::vector<Eigen::VectorXd>(M, guess->state.vectorize()),
                                        std::vector<modal::FilterConfig>(M, modal::FilterConfig::uniform(M, L, defaults)),
                                        L);
            } else {
                std::vector<modal::FilterConfig> configs;
                for (std::size_t m = 0; m < M; ++m)
                    configs.push_back(modal::FilterConfig::uniform(topo.degree(m), L, defaults));
                nodes = modal::dekfr_run(w, topo, modal::uniform_weights(topo), modal::uniform_reduced_weights(topo),
                                         modal::restrict_to_neighborhoods(guess->state, topo), configs, L);
            }
            estimate = modal::mean_modes(nodes);
            json per_node = json::array();
            for (std::size_t m = 0; m < M; ++m)
                per_node.push_back({{"node", m}, {"modes", modes_json(modal::to_mode_set(nodes[m].modes))}});
            report["per_node"] = per_node;
            if (M >= 2) {
                const modal::ConsensusSpread s = modal::consensus_spread(nodes);
                report["spread"] = {{"freq_rel", s.freq_rel}, {"sigma_rel", s.sigma_rel}};
            } else {
                report["spread"] = {{"freq_rel", 0.0}, {"sigma_rel", 0.0}};
            }
        }
        for (const modal::Mode& m : estimate) {
            if (!std::isfinite(m.omega) || !std::isfinite(m.sigma))
                throw modal::DegenerateSignalError("estimator returned a non-finite mode");
        }
    } catch (const modal::DivergenceError& e) {
        json diag = {{"error", "divergence"}, {"method", a.method}, {"message", e.what()}, {"step", e.step()}};
        diag["node"] = e.node() == modal::DivergenceError::no_node ? json(nullptr) : json(e.node());
        write_json(dir / "diagnostic.json", diag);
        write_manifest(dir, "estimate", argv, config, a.seed, {{"diagnostic", "diagnostic.json"}});
        std::cerr << diag.dump() << '\n';
        throw ReportedDivergence(e.what());
    } catch (const modal::DegenerateSignalError& e) {
        json diag = {{"error", "degenerate_signal"}, {"method", a.method}, {"message", e.what()}};
        write_json(dir / "diagnostic.json", diag);
        write_manifest(dir, "estimate", argv, config, a.seed, {{"diagnostic", "diagnostic.json"}});
        std::cerr << diag.dump() << '\n';
        throw ReportedDivergence(e.what());
    } catch (const modal::NonConvergenceError<Eigen::VectorXd>& e) {
        json diag = {{"error", "non_convergence"}, {"method", a.method}, {"message", e.what()}};
        write_json(dir / "diagnostic.json", diag);
        write_manifest(dir, "estimate", argv, config, a.seed, {{"diagnostic", "diagnostic.json"}});
        std::cerr << diag.dump() << '\n';
        throw ReportedDivergence(e.what());
    }

    // Amplitudes and fitted curves come from a residue fit against the estimated modes.
    std::optional<modal::ResidueFit> fit;
    try {
        fit = modal::residue_fit(w, estimate);
    } catch (const modal::ValidationError& e) {
        warnings.push_back(std::string("no fitted curve: ") + e.what());
    }
    json modes = json::array();
    for (std::size_t l = 0; l < estimate.size(); ++l) {
        const modal::Mode& m = estimate[l];
        json entry = {{"freq_hz", m.freq_hz()},
                      {"omega", m.omega},
                      {"sigma", m.sigma},
                      {"damping_ratio", modal::damping_ratio(m.sigma, m.omega)}};
        json amps = json::array();
        if (fit) {
            for (std::size_t c = 0; c < M; ++c)
                amps.push_back({{"amplitude", fit->channels[c][l].amplitude * pre.scales[c]},
                                {"phase", fit->channels[c][l].phase}});
        }
        entry["channels"] = amps;
        modes.push_back(entry);
    }
    report["modes"] = modes;
    write_outputs(fit ? fit->fitted : Eigen::MatrixXd::Zero(w.samples.rows(), w.samples.cols()));

    for (const modal::Mode& m : estimate)
        std::cout << "mode " << m.freq_hz() << " Hz, sigma " << m.sigma << " 1/s, zeta "
                  << modal::damping_ratio(m.sigma, m.omega) << '\n';
    return exit_ok;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string config_path;
    std::optional<std::size_t> runs;
    std::vector<double> snr;
    std::vector<std::string> estimators;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<double> fs;
    std::optional<double> duration;
    std::optional<std::size_t> channels;
    std::optional<std::string> topology;
    bool noiseless = false;
    std::string out_dir = ".";
    Tuning tuning;
};

int run_bench(const BenchArgs& a, const CLI::App& cmd, const std::vector<std::string>& argv) {
    modal::BenchConfig cfg;
    if (!a.config_path.empty()) {
        std::ifstream in(a.config_path);
        if (!in) throw IoError("cannot open config '" + a.config_path + "'");
        try {
            nlohmann::json::parse(in).get_to(cfg);
        } catch (const json::exception& e) {
            throw modal::ValidationError(std::string("bad bench config: ") + e.what());
        }
    }
    if (a.runs) cfg.runs = *a.runs;
    if (!a.snr.empty()) cfg.snr_db = a.snr;
    if (!a.estimators.empty()) {
        cfg.estimators.clear();
        for (const std::string& e : a.estimators) cfg.estimators.push_back(modal::parse_estimator(e));
    }
    if (a.seed) cfg.seed = *a.seed;
    if (a.workers) cfg.workers = *a.workers;
    if (a.fs) cfg.fs = *a.fs;
    if (a.duration) cfg.duration = *a.duration;
    if (a.channels) cfg.channels = *a.channels;
    if (a.topology) cfg.topology = *a.topology;
    if (a.noiseless) cfg.noiseless = true;
    cfg.cekf = a.tuning.apply(cfg.cekf);
    cfg.distributed = a.tuning.apply(cfg.distributed);
    if (cmd.count("--rho")) cfg.rho = a.tuning.rho;
    if (cmd.count("--tol")) cfg.tol = a.tuning.tol;
    if (cmd.count("--max-iters")) cfg.max_iters = a.tuning.max_iters;
    if (cmd.count("--prony-order")) cfg.prony_order = a.tuning.prony_order;

    const fs::path dir(a.out_dir);
    ensure_dir(dir);
    const modal::BenchReport report = modal::monte_carlo(cfg);
    const std::string text = modal::report_table(report, modal::TableFormat::text);
    write_file(dir / "bench.txt", text);
    write_file(dir / "bench.csv", modal::report_table(report, modal::TableFormat::csv));
    write_file(dir / "bench.json", modal::report_table(report, modal::TableFormat::json) + "\n");
    json config = cfg;
    config["effective_workers"] = modal::detail::resolve_workers(cfg.workers);
    write_manifest(dir, "bench", argv, config, cfg.seed,
                   {{"text", "bench.txt"}, {"csv", "bench.csv"}, {"json", "bench.json"}});
    std::cout << text;
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv, argv + argc);
    CLI::App app{"Modal analysis of ringdown measurements with centralized and diffusion EKFs"};
    app.set_version_flag("--version", std::string(MODAL_VERSION));
    app.require_subcommand(1);

    GenerateArgs gen;
    CLI::App* g = app.add_subcommand("generate", "Synthesize a damped-sinusoid scenario");
    g->add_option("--fs", gen.fs, "Sample rate in Hz")->capture_default_str();
    g->add_option("--duration", gen.duration, "Window length in seconds")->capture_default_str();
    g->add_option("--channels", gen.channels, "Number of PMU channels")->capture_default_str();
    g->add_option("--snr", gen.snr, "Signal-to-noise ratio in dB")->capture_default_str();
    g->add_option("--noise", gen.noise, "on | off")->check(CLI::IsMember({"on", "off"}))->capture_default_str();
    g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
    g->add_option("--mode", gen.modes, "Mode as FREQ_HZ:SIGMA (repeatable)")->capture_default_str();
    g->add_option("--scale-min", gen.scale_min, "Smallest channel scale")->capture_default_str();
    g->add_option("--scale-max", gen.scale_max, "Largest channel scale")->capture_default_str();
    g->add_option("--out-dir", gen.out_dir, "Output directory")->capture_default_str();

    EstimateArgs est;
    CLI::App* e = app.add_subcommand("estimate", "Estimate modes from a measurement CSV");
    e->add_option("input", est.input, "Measurement CSV (t,ch0,ch1,...)")->required();
    e->add_option("--method", est.method, "cekf | dekf | dekfr | prony | admm")
        ->required()
        ->check(CLI::IsMember({"cekf", "dekf", "dekfr", "prony", "admm"}));
    e->add_option("--topology", est.topology, "ring:M | complete:M | edge-list path");
    e->add_option("--modes", est.modes, "Number of modes");
    e->add_flag("--auto-detect", est.auto_detect, "Count modes from the FFT spectrum");
    e->add_option("--max-modes", est.max_modes, "Auto-detect: most modes to report")->capture_default_str();
    e->add_option("--threshold", est.threshold, "Auto-detect: peak / median threshold")->capture_default_str();
    e->add_option("--seed", est.seed, "Recorded in the report")->capture_default_str();
    e->add_option("--out-dir", est.out_dir, "Output directory")->capture_default_str();
    add_tuning(e, est.tuning);

    BenchArgs bench;
    CLI::App* b = app.add_subcommand("bench", "Monte Carlo comparison of all estimators");
    b->add_option("--config", bench.config_path, "Bench config JSON (flags override)");
    b->add_option("--runs", bench.runs, "Monte Carlo runs per SNR level");
    b->add_option("--snr", bench.snr, "SNR levels in dB")->delimiter(',');
    b->add_option("--estimators", bench.estimators, "Subset of prony,admm,cekf,dekf,dekfr")->delimiter(',');
    b->add_option("--seed", bench.seed, "Master seed");
    b->add_option("--workers", bench.workers, "Worker threads (MODAL_DEKF_THREADS overrides)");
    b->add_option("--fs", bench.fs, "Sample rate in Hz");
    b->add_option("--duration", bench.duration, "Window length in seconds");
    b->add_option("--channels", bench.channels, "Number of PMU channels");
    b->add_option("--topology", bench.topology, "ring:M | complete:M | edge-list path");
    b->add_flag("--noiseless", bench.noiseless, "Ignore SNR levels and emit clean data");
    b->add_option("--out-dir", bench.out_dir, "Output directory")->capture_default_str();
    add_tuning(b, bench.tuning);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? exit_ok : exit_validation;
    }

    try {
        if (*g) return run_generate(gen, args);
        if (*e) return run_estimate(est, args);
        return run_bench(bench, *b, args);
    } catch (const IoError& err) {
        std::cerr << "I/O error: " << err.what() << '\n';
        return exit_io;
    } catch (const ReportedDivergence& err) {
        std::cerr << "estimator failed: " << err.what() << '\n';
        return exit_divergence;
    } catch (const modal::ValidationError& err) {
        std::cerr << "invalid input: " << err.what() << '\n';
        return exit_validation;
    } catch (const modal::DomainError& err) {
        std::cerr << "invalid input: " << err.what() << '\n';
        return exit_validation;
    } catch (const modal::DivergenceError& err) {
        std::cerr << "estimator diverged: " << err.what() << '\n';
        return exit_divergence;
    } catch (const modal::DegenerateSignalError& err) {
        std::cerr << "estimator failed: " << err.what() << '\n';
        return exit_divergence;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
}

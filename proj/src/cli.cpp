#include "obsmhe/cli.hpp"

#include "obsmhe/config.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>

namespace obsmhe {

namespace {

using nlohmann::json;

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json report_json(const InequalityReport& r) {
    json witnesses = json::array();
    for (const auto& w : r.witnesses) witnesses.push_back({{"t", w.t}, {"lhs", w.lhs}, {"rhs", w.rhs}});
    return {{"checked", r.checked}, {"violations", r.violations}, {"worst_margin", r.worst_margin},
            {"witnesses", witnesses}};
}

json iterations_json(int iterations) {
    return iterations == kConverged ? json("converged") : json(iterations);
}

int parse_iterations(const std::string& text) {
    if (text == "converged") return kConverged;
    int value = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || value < 0) {
        throw ConfigError("iterations must be a nonnegative integer or 'converged', got '" + text + "'");
    }
    return value;
}

double parse_real(const std::string& text) {
    double value = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw ConfigError("expected a number, got '" + text + "'");
    }
    return value;
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, sep)) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct Grid {
    std::vector<double> a;
    std::vector<int> iterations;
};

// "a=1e2,1e-3;i=0,1,converged"
Grid parse_grid(const std::string& text, const ExperimentConfig& cfg) {
    Grid grid;
    for (const std::string& part : split(text, ';')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) throw ConfigError("grid: expected key=values, got '" + part + "'");
        const std::string key = part.substr(0, eq);
        const auto values = split(part.substr(eq + 1), ',');
        if (values.empty()) throw ConfigError("grid: no values for '" + key + "'");
        if (key == "a") {
            for (const auto& v : values) {
                const double a = parse_real(v);
                if (!(a > 0.0)) throw ConfigError("grid: a must be positive");
                grid.a.push_back(a);
            }
        } else if (key == "i") {
            for (const auto& v : values) grid.iterations.push_back(parse_iterations(v));
        } else {
            throw ConfigError("grid: unknown key '" + key + "' (known: a, i)");
        }
    }
    if (grid.a.empty()) grid.a.push_back(cfg.estimator.a);
    if (grid.iterations.empty()) grid.iterations.push_back(cfg.estimator.iterations);
    return grid;
}

void print(std::ostream& out, const json& j) { out << j.dump(2) << '\n'; }

json summary_json(const BatchSummary& s) {
    return {{"replicates", s.replicates},
            {"mean_sse", s.mean_sse},
            {"min_sse", s.min_sse},
            {"max_sse", s.max_sse},
            {"theorem1_violations", s.theorem1_violations},
            {"lemma1_violations", s.lemma1_violations},
            {"cost_decrease_violations", s.cost_decrease_violations}};
}

// ---------------------------------------------------------------------------

struct CertifyArgs {
    std::string config;
    std::string form;
    std::string mode = "M";
    int M = 0;
    int cap = kDefaultScanCap;
    double a = 0.0;
};

int cmd_certify(const CertifyArgs& args, std::ostream& out) {
    const ExperimentConfig cfg = load_config(args.config);
    const EstimatorForm form = args.form.empty() ? cfg.estimator.form : parse_form(args.form);
    const double a = args.a > 0.0 ? args.a : cfg.estimator.a;
    if (args.cap < 1) throw ConfigError("--cap must be at least 1");
    const GammaParams params = GammaParams::from(cfg.certificate(), a * cfg.P);

    json result{{"form", to_string(form)}, {"a", a}};
    HorizonResult res;
    if (args.mode == "M") {
        res = min_horizon(params, form, args.cap);
        result["M_min"] = res.value;
    } else if (args.mode == "T") {
        const int M = args.M > 0 ? args.M : cfg.estimator.M;
        res = min_T(params, M, form, args.cap);
        result["T_min"] = res.value;
    } else {
        throw ConfigError("--mode must be M or T");
    }
    result["gamma1_at_min"] = res.gammas.g1;
    result["gamma2_at_min"] = res.gammas.g2;
    result["gamma3_at_min"] = res.gammas.g3;
    result["scan_cap"] = res.scan_cap;
    print(out, result);
    return kExitOk;
}

struct AssumptionArgs {
    std::string config;
    std::size_t samples = 100000;
    std::uint64_t seed = 0;
    std::string slack = "1e-9";
    double eta = -1.0;
    int lipschitz_samples = 100000;
};

int cmd_check_assumptions(const AssumptionArgs& args, std::ostream& out) {
    const ExperimentConfig cfg = load_config(args.config);
    const double slack = args.slack == "inf" ? kInf : parse_real(args.slack);
    if (!(slack >= 0.0)) throw ConfigError("--slack must be nonnegative");
    LyapunovCertificate cert = cfg.certificate();
    if (args.eta >= 0.0) {
        if (args.eta >= 1.0) throw ConfigError("--eta must lie in [0, 1)");
        cert.eta = args.eta;
    }
    const SystemModel model = cfg.model();
    const AuxObserver obs = cfg.observer(model);
    const DissipationReport diss = check_dissipation(cert, model, obs, args.samples, args.seed, slack);
    const double lip = estimate_lipschitz(model, args.lipschitz_samples, args.seed);
    const bool lip_ok = lip <= model.lipschitz_h + 1e-9;

    json witnesses = json::array();
    for (const auto& w : diss.witnesses) {
        witnesses.push_back({{"z", vector_json(w.z)},
                             {"x", vector_json(w.x)},
                             {"w", vector_json(w.w)},
                             {"v", vector_json(w.v)},
                             {"margin", w.margin}});
    }
    print(out, {{"dissipation",
                 {{"samples", diss.samples},
                  {"seed", args.seed},
                  {"eta", cert.eta},
                  {"slack", std::isinf(slack) ? json("inf") : json(slack)},
                  {"violations", diss.violations},
                  {"worst_margin", diss.worst_margin},
                  {"witnesses", witnesses}}},
                {"lipschitz",
                 {{"samples", args.lipschitz_samples},
                  {"estimate", lip},
                  {"configured", model.lipschitz_h},
                  {"consistent", lip_ok}}}});
    return diss.violations == 0 && lip_ok ? kExitOk : kExitFalsified;
}

struct SimulateArgs {
    std::string config;
    std::string out_path;
    std::int64_t seed = -1;
    std::string iterations;
};

int cmd_simulate(const SimulateArgs& args, std::ostream& out) {
    const ExperimentConfig cfg = load_config(args.config);
    Scenario sc = cfg.build_scenario();
    if (args.seed >= 0) sc.seed = static_cast<std::uint64_t>(args.seed);
    if (!args.iterations.empty()) sc.cfg.iterations = parse_iterations(args.iterations);
    const SimTrace trace = run_closed_loop(sc);
    const VerificationContext ctx = make_verification_context(sc);
    const ReplicateRow row = summarize_replicate(trace, ctx, 0, sc.seed);

    if (!args.out_path.empty()) {
        std::ofstream file(args.out_path, std::ios::binary);
        if (!file) throw ConfigError(args.out_path + ": cannot open for writing");
        write_trace_csv(file, trace);
        file.flush();
        if (!file) throw ConfigError(args.out_path + ": write failed");
    }
    print(out, {{"replicates", 1},
                {"seed", sc.seed},
                {"iterations", iterations_json(sc.cfg.iterations)},
                {"mean_sse", row.sse},
                {"min_sse", row.sse},
                {"max_sse", row.sse},
                {"observer_sse", observer_sse(trace)},
                {"theorem1_violations", row.theorem1_violations},
                {"lemma1_violations", row.lemma1_violations},
                {"cost_decrease_violations", row.cost_decrease_violations},
                {"max_step_seconds", row.max_step_seconds}});
    return kExitOk;
}

struct BenchmarkArgs {
    std::string config;
    std::string grid;
    int replicates = 0;
    std::int64_t seed = -1;
    std::string csv_path;
    unsigned threads = 0;
};

int cmd_benchmark(const BenchmarkArgs& args, std::ostream& out, std::ostream& err) {
    const ExperimentConfig cfg = load_config(args.config);
    const Grid grid = parse_grid(args.grid, cfg);
    const int replicates = args.replicates > 0 ? args.replicates : cfg.scenario.replicates;
    Scenario base = cfg.build_scenario();
    if (args.seed >= 0) base.seed = static_cast<std::uint64_t>(args.seed);

    json cells = json::array();
    bool failed = false;
    std::ostringstream csv;
    csv << "a,M,T,i,replicates,mean_sse,min_sse,max_sse,theorem1_violations,lemma1_violations,"
           "cost_decrease_violations\n";
    for (double a : grid.a) {
        for (int it : grid.iterations) {
            json cell{{"a", a}, {"i", iterations_json(it)}};
            try {
                Scenario sc = base;
                sc.cfg.W = a * cfg.P;
                const GammaParams params = GammaParams::from(sc.cert, sc.cfg.W);
                if (sc.cfg.candidate_mode == CandidateMode::Reinit) {
                    sc.cfg.T = min_T(params, sc.cfg.M, sc.cfg.form).value;
                } else {
                    sc.cfg.M = min_horizon(params, sc.cfg.form).value;
                }
                sc.cfg.iterations = it;
                cell["M"] = sc.cfg.M;
                if (sc.cfg.candidate_mode == CandidateMode::Reinit) cell["T"] = sc.cfg.T;
                const BatchSummary s = run_batch(sc, replicates, args.threads);
                cell.update(summary_json(s));
                csv << format_double(a) << ',' << sc.cfg.M << ','
                    << (sc.cfg.candidate_mode == CandidateMode::Reinit ? std::to_string(sc.cfg.T) : "") << ','
                    << (it == kConverged ? std::string("converged") : std::to_string(it)) << ',' << s.replicates
                    << ',' << format_double(s.mean_sse) << ',' << format_double(s.min_sse) << ','
                    << format_double(s.max_sse) << ',' << s.theorem1_violations << ',' << s.lemma1_violations << ','
                    << s.cost_decrease_violations << '\n';
            } catch (const std::exception& e) {
                failed = true;
                cell["error"] = e.what();
                err << "benchmark: cell a=" << format_double(a) << " failed: " << e.what() << '\n';
            }
            cells.push_back(cell);
        }
    }
    if (!args.csv_path.empty()) {
        std::ofstream file(args.csv_path, std::ios::binary);
        if (!file) throw ConfigError(args.csv_path + ": cannot open for writing");
        file << csv.str();
    }
    print(out, {{"seed", base.seed}, {"replicates", replicates}, {"cells", cells}});
    return failed ? kExitUsage : kExitOk;
}

struct VerifyArgs {
    std::string trace;
    std::string config;
};

int cmd_verify(const VerifyArgs& args, std::ostream& out, std::ostream& err) {
    const ExperimentConfig cfg = load_config(args.config);
    const Scenario sc = cfg.build_scenario();
    std::ifstream file(args.trace, std::ios::binary);
    if (!file) throw ConfigError(args.trace + ": cannot open trace");
    const SimTrace trace = read_trace_csv(file, sc.model.state_dim, sc.model.proc_dist_dim, sc.model.meas_noise_dim,
                                          sc.model.output_dim);
    if (trace.empty()) err << "warning: " << args.trace << " has no rows; nothing to verify\n";
    const TraceVerification v = verify_trace(trace, make_verification_context(sc));
    print(out, {{"rows", trace.size()},
                {"theorem1", report_json(v.theorem1)},
                {"lemma1", report_json(v.lemma1)},
                {"cost_decrease", report_json(v.cost_decrease)}});
    return v.ok() ? kExitOk : kExitFalsified;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Suboptimal moving horizon estimation over an auxiliary observer"};
    app.name("obsmhe");
    app.require_subcommand(1);

    CertifyArgs certify;
    auto* c = app.add_subcommand("certify", "minimal horizon M or restart depth T");
    c->add_option("config", certify.config, "experiment config (JSON)")->required();
    c->add_option("--form", certify.form, "prediction or filtering (default: config)");
    c->add_option("--mode", certify.mode, "M: minimal horizon, T: minimal restart depth")
        ->check(CLI::IsMember({"M", "T"}));
    c->add_option("--M", certify.M, "window length for --mode T (default: config)");
    c->add_option("--cap", certify.cap, "largest length scanned");
    c->add_option("--a", certify.a, "prior weight scale, W = a P (default: config)");

    AssumptionArgs assume;
    auto* ca = app.add_subcommand("check-assumptions", "sample the dissipation inequality and L_h");
    ca->add_option("config", assume.config, "experiment config (JSON)")->required();
    ca->add_option("--samples", assume.samples, "dissipation samples");
    ca->add_option("--seed", assume.seed, "sampling seed");
    ca->add_option("--slack", assume.slack, "tolerated margin (number or inf)");
    ca->add_option("--eta", assume.eta, "override the certificate contraction rate");
    ca->add_option("--lipschitz-samples", assume.lipschitz_samples, "pairs for the L_h estimate");

    SimulateArgs sim;
    auto* cs = app.add_subcommand("simulate", "closed-loop run; writes the trace CSV");
    cs->add_option("config", sim.config, "experiment config (JSON)")->required();
    cs->add_option("--out", sim.out_path, "trace CSV path");
    cs->add_option("--seed", sim.seed, "disturbance seed (default: config)");
    cs->add_option("--iterations", sim.iterations, "optimizer iterations or 'converged'");

    BenchmarkArgs bench;
    auto* cb = app.add_subcommand("benchmark", "mean SSE over a grid of a and i");
    cb->add_option("config", bench.config, "experiment config (JSON)")->required();
    cb->add_option("--grid", bench.grid, "e.g. \"a=1e2,1e-3;i=0,1,converged\"");
    cb->add_option("--replicates", bench.replicates, "replicates per cell (default: config)");
    cb->add_option("--seed", bench.seed, "base seed (default: config)");
    cb->add_option("--csv", bench.csv_path, "also write the matrix as CSV");
    cb->add_option("--threads", bench.threads, "worker threads (0: all cores)");

    VerifyArgs verify;
    auto* cv = app.add_subcommand("verify", "re-check a stored trace");
    cv->add_option("trace", verify.trace, "trace CSV")->required();
    cv->add_option("config", verify.config, "experiment config (JSON)")->required();

    std::vector<std::string> argv_store{"obsmhe"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (c->parsed()) return cmd_certify(certify, out);
        if (ca->parsed()) return cmd_check_assumptions(assume, out);
        if (cs->parsed()) return cmd_simulate(sim, out);
        if (cb->parsed()) return cmd_benchmark(bench, out, err);
        if (cv->parsed()) return cmd_verify(verify, out, err);
    } catch (const CertificationError& e) {
        err << "certification failed: " << e.what() << " (gamma1 at cap: " << format_double(e.gamma_at_cap())
            << ")\n";
        return kExitCertification;
    } catch (const TraceSchemaError& e) {
        err << "trace schema error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace obsmhe

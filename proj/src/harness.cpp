#include "obsmhe/harness.hpp"

#include "obsmhe/rng.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace obsmhe {

Disturbances sample_disturbances(std::uint64_t seed, const Box& w_box, const Box& v_box, std::size_t length) {
    for (const Box* box : {&w_box, &v_box}) {
        if (!box->is_finite()) throw ConfigError("sample_disturbances: bounds must be finite");
    }
    const CounterRng w_rng(seed, 1), v_rng(seed, 2);
    const auto q = static_cast<std::uint64_t>(w_box.dim());
    const auto r = static_cast<std::uint64_t>(v_box.dim());
    Disturbances d;
    d.w.reserve(length);
    d.v.reserve(length);
    for (std::size_t t = 0; t < length; ++t) {
        Vector w(w_box.dim()), v(v_box.dim());
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w[i] = w_rng.uniform(t * q + static_cast<std::uint64_t>(i), w_box.lower[i], w_box.upper[i]);
        }
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            v[i] = v_rng.uniform(t * r + static_cast<std::uint64_t>(i), v_box.lower[i], v_box.upper[i]);
        }
        d.w.push_back(std::move(w));
        d.v.push_back(std::move(v));
    }
    return d;
}

SimTrace run_closed_loop(const Scenario& sc) {
    if (sc.t_sim < 0) throw ConfigError("run_closed_loop: t_sim must be nonnegative");
    require_dim(sc.x0, sc.model.state_dim, "scenario x0");
    if (sc.w_box.dim() != sc.model.proc_dist_dim || sc.v_box.dim() != sc.model.meas_noise_dim) {
        throw ConfigError("run_closed_loop: disturbance bounds do not match the model");
    }
    const auto steps = static_cast<std::size_t>(sc.t_sim) + 1;
    const Disturbances dist = sample_disturbances(sc.seed, sc.w_box, sc.v_box, steps);

    MovingHorizonEstimator estimator(sc.model, sc.observer, sc.cert, sc.cfg, sc.xhat0);
    SimTrace trace;
    const Vector u = Vector::Zero(sc.model.input_dim);
    Vector x = sc.x0;
    Vector z = sc.xhat0;
    for (std::size_t t = 0; t < steps; ++t) {
        try {
            const Vector y = output(sc.model, x, u, dist.v[t]);
            const auto tic = std::chrono::steady_clock::now();
            EstimateRecord rec = estimator.step(u, y);
            const auto toc = std::chrono::steady_clock::now();

            trace.x.push_back(x);
            trace.u.push_back(u);
            trace.w.push_back(dist.w[t]);
            trace.v.push_back(dist.v[t]);
            trace.y.push_back(y);
            trace.lyapunov.push_back(v_o(sc.cert, rec.xhat, x));
            trace.xhat.push_back(std::move(rec.xhat));
            trace.observer.push_back(z);
            trace.cost.push_back(rec.cost);
            trace.candidate_cost.push_back(rec.candidate_cost);
            trace.horizon.push_back(rec.horizon);
            trace.fallback.push_back(rec.fallback ? 1 : 0);
            trace.step_seconds.push_back(std::chrono::duration<double>(toc - tic).count());

            z = observer_step(sc.observer, static_cast<std::int64_t>(t), z, u, y);
            x = step_system(sc.model, x, u, dist.w[t]);
        } catch (const std::exception& e) {
            throw Error("run_closed_loop: step " + std::to_string(t) + ": " + e.what());
        }
    }
    return trace;
}

double sse(const SimTrace& trace) {
    double total = 0.0;
    for (std::size_t t = 0; t < trace.size(); ++t) total += (trace.xhat[t] - trace.x[t]).squaredNorm();
    return total;
}

double observer_sse(const SimTrace& trace) {
    double total = 0.0;
    for (std::size_t t = 0; t < trace.size(); ++t) total += (trace.observer[t] - trace.x[t]).squaredNorm();
    return total;
}

std::vector<double> lyapunov_series(const SimTrace& trace, const LyapunovCertificate& cert, EstimateSource source) {
    const auto& est = source == EstimateSource::Estimator ? trace.xhat : trace.observer;
    std::vector<double> out;
    out.reserve(trace.size());
    for (std::size_t t = 0; t < trace.size(); ++t) out.push_back(v_o(cert, est[t], trace.x[t]));
    return out;
}

VerificationContext make_verification_context(const Scenario& sc) {
    VerificationContext ctx;
    ctx.cert = sc.cert;
    ctx.params = GammaParams::from(sc.cert, sc.cfg.W);
    ctx.M = sc.cfg.M;
    ctx.T = sc.cfg.T;
    ctx.form = sc.cfg.form;
    ctx.mode = sc.cfg.candidate_mode;
    ctx.lipschitz_h = sc.cfg.lipschitz_h;
    ctx.observer = &sc.observer;
    return ctx;
}

TraceVerification verify_trace(const SimTrace& trace, const VerificationContext& ctx) {
    return {check_mstep_decrease(trace, ctx), check_lemma1(trace, ctx), check_cost_decrease(trace)};
}

ReplicateRow summarize_replicate(const SimTrace& trace, const VerificationContext& ctx, int index,
                                 std::uint64_t seed) {
    const TraceVerification checks = verify_trace(trace, ctx);
    ReplicateRow row;
    row.index = index;
    row.seed = seed;
    row.sse = sse(trace);
    row.theorem1_violations = checks.theorem1.violations;
    row.lemma1_violations = checks.lemma1.violations;
    row.cost_decrease_violations = checks.cost_decrease.violations;
    if (!trace.step_seconds.empty()) {
        double total = 0.0;
        for (double s : trace.step_seconds) {
            row.max_step_seconds = std::max(row.max_step_seconds, s);
            total += s;
        }
        row.mean_step_seconds = total / static_cast<double>(trace.step_seconds.size());
    }
    return row;
}

BatchSummary run_batch(const Scenario& scenario, int replicates, unsigned threads) {
    if (replicates < 1) throw ConfigError("run_batch: replicates must be at least 1");
    const VerificationContext ctx = make_verification_context(scenario);

    std::vector<ReplicateRow> rows(static_cast<std::size_t>(replicates));
    std::vector<std::string> errors(rows.size());
    std::mutex next_mutex;
    int next = 0;
    auto worker = [&] {
        for (;;) {
            int k;
            {
                std::lock_guard lock(next_mutex);
                if (next >= replicates) return;
                k = next++;
            }
            const std::uint64_t seed = scenario.seed + static_cast<std::uint64_t>(k);
            try {
                Scenario sc = scenario;
                sc.seed = seed;
                VerificationContext local = ctx;
                local.observer = &sc.observer;
                rows[static_cast<std::size_t>(k)] = summarize_replicate(run_closed_loop(sc), local, k, seed);
            } catch (const std::exception& e) {
                errors[static_cast<std::size_t>(k)] = e.what();
            }
        }
    };
    unsigned workers = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
    workers = std::min<unsigned>(workers, static_cast<unsigned>(replicates));
    {
        std::vector<std::jthread> pool;
        for (unsigned i = 0; i < workers; ++i) pool.emplace_back(worker);
    }
    for (std::size_t k = 0; k < errors.size(); ++k) {
        if (!errors[k].empty()) {
            throw Error("run_batch: replicate " + std::to_string(k) + " (seed " +
                        std::to_string(scenario.seed + k) + ") failed: " + errors[k]);
        }
    }

    BatchSummary summary;
    summary.replicates = replicates;
    summary.min_sse = kInf;
    summary.max_sse = -kInf;
    double total = 0.0;
    for (const ReplicateRow& row : rows) {
        total += row.sse;
        summary.min_sse = std::min(summary.min_sse, row.sse);
        summary.max_sse = std::max(summary.max_sse, row.sse);
        summary.theorem1_violations += row.theorem1_violations;
        summary.lemma1_violations += row.lemma1_violations;
        summary.cost_decrease_violations += row.cost_decrease_violations;
    }
    summary.mean_sse = total / replicates;
    summary.rows = std::move(rows);
    return summary;
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

namespace {

void append_group(std::vector<std::string>& cols, const std::string& name, Eigen::Index dim) {
    if (dim == 1) {
        cols.push_back(name);
        return;
    }
    for (Eigen::Index i = 1; i <= dim; ++i) cols.push_back(name + std::to_string(i));
}

void write_vector(std::ostream& out, const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) out << ',' << format_double(v[i]);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& text, const std::string& column, std::size_t row) {
    double value = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last) {
        // from_chars rejects "inf"/"nan" spellings written by other tools.
        if (text == "inf") return kInf;
        if (text == "-inf") return -kInf;
        throw TraceSchemaError("trace row " + std::to_string(row) + ": column '" + column +
                               "' is not a number: '" + text + "'");
    }
    return value;
}

}  // namespace

std::vector<std::string> trace_columns(Eigen::Index n, Eigen::Index q, Eigen::Index r, Eigen::Index p) {
    std::vector<std::string> cols{"t"};
    append_group(cols, "x", n);
    append_group(cols, "w", q);
    append_group(cols, "v", r);
    append_group(cols, "y", p);
    append_group(cols, "xhat", n);
    append_group(cols, "z", n);
    for (const char* tail : {"Vo", "J", "Jtilde", "Mt", "fallback"}) cols.emplace_back(tail);
    return cols;
}

void write_trace_csv(std::ostream& out, const SimTrace& trace) {
    trace.validate();
    const Eigen::Index n = trace.empty() ? 2 : trace.x[0].size();
    const Eigen::Index q = trace.empty() ? 2 : trace.w[0].size();
    const Eigen::Index r = trace.empty() ? 1 : trace.v[0].size();
    const Eigen::Index p = trace.empty() ? 1 : trace.y[0].size();
    const auto cols = trace_columns(n, q, r, p);
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    for (std::size_t t = 0; t < trace.size(); ++t) {
        out << t;
        write_vector(out, trace.x[t]);
        write_vector(out, trace.w[t]);
        write_vector(out, trace.v[t]);
        write_vector(out, trace.y[t]);
        write_vector(out, trace.xhat[t]);
        write_vector(out, trace.observer[t]);
        out << ',' << format_double(trace.lyapunov[t]) << ',' << format_double(trace.cost[t]) << ','
            << format_double(trace.candidate_cost[t]) << ',' << trace.horizon[t] << ','
            << static_cast<int>(trace.fallback[t]) << '\n';
    }
}

SimTrace read_trace_csv(std::istream& in, Eigen::Index n, Eigen::Index q, Eigen::Index r, Eigen::Index p) {
    const auto expected = trace_columns(n, q, r, p);
    std::string line;
    if (!std::getline(in, line)) throw TraceSchemaError("trace: missing header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split(line);
    for (std::size_t i = 0; i < std::max(header.size(), expected.size()); ++i) {
        if (i >= header.size()) throw TraceSchemaError("trace: missing column '" + expected[i] + "'");
        if (i >= expected.size()) throw TraceSchemaError("trace: unexpected column '" + header[i] + "'");
        if (header[i] != expected[i]) {
            throw TraceSchemaError("trace: column " + std::to_string(i + 1) + " is '" + header[i] + "', expected '" +
                                   expected[i] + "'");
        }
    }

    SimTrace trace;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        const auto fields = split(line);
        if (fields.size() != expected.size()) {
            throw TraceSchemaError("trace row " + std::to_string(row) + ": expected " +
                                   std::to_string(expected.size()) + " columns, got " + std::to_string(fields.size()));
        }
        std::size_t col = 0;
        auto next_vec = [&](Eigen::Index dim) {
            Vector v(dim);
            for (Eigen::Index i = 0; i < dim; ++i, ++col) v[i] = parse_number(fields[col], expected[col], row);
            return v;
        };
        const double t = parse_number(fields[col], expected[col], row);
        ++col;
        if (t != static_cast<double>(trace.size())) {
            throw TraceSchemaError("trace row " + std::to_string(row) + ": column 't' is not consecutive");
        }
        trace.x.push_back(next_vec(n));
        trace.w.push_back(next_vec(q));
        trace.v.push_back(next_vec(r));
        trace.y.push_back(next_vec(p));
        trace.xhat.push_back(next_vec(n));
        trace.observer.push_back(next_vec(n));
        trace.u.emplace_back(0);
        trace.lyapunov.push_back(parse_number(fields[col], expected[col], row));
        ++col;
        trace.cost.push_back(parse_number(fields[col], expected[col], row));
        ++col;
        trace.candidate_cost.push_back(parse_number(fields[col], expected[col], row));
        ++col;
        trace.horizon.push_back(static_cast<int>(parse_number(fields[col], expected[col], row)));
        ++col;
        trace.fallback.push_back(static_cast<std::uint8_t>(parse_number(fields[col], expected[col], row) != 0.0));
    }
    trace.validate();
    return trace;
}

}  // namespace obsmhe

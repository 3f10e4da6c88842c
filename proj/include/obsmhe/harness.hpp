#pragma once

#include "obsmhe/lyapcert.hpp"
#include "obsmhe/mhe.hpp"
#include "obsmhe/model.hpp"
#include "obsmhe/trace.hpp"

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace obsmhe {

struct Scenario {
    SystemModel model;
    AuxObserver observer;
    LyapunovCertificate cert;
    MheConfig cfg;
    Vector x0;
    Vector xhat0;
    Box w_box;  // disturbances are drawn uniformly from these boxes
    Box v_box;
    int t_sim = 200;
    std::uint64_t seed = 0;
    int replicates = 1;
};

struct Disturbances {
    std::vector<Vector> w;
    std::vector<Vector> v;
};

/// Uniform draws on the boxes; w_t[i] is counter t*q + i of stream 1 and
/// v_t[i] counter t*r + i of stream 2 (see CounterRng).
Disturbances sample_disturbances(std::uint64_t seed, const Box& w_box, const Box& v_box, std::size_t length);

/// Simulates t = 0 .. t_sim, feeding each measurement to the estimator and to
/// a standalone copy of the observer started at the same initial guess.
SimTrace run_closed_loop(const Scenario& scenario);

/// sum_{t=0}^{t_sim} ||xhat_t - x_t||^2
double sse(const SimTrace& trace);
double observer_sse(const SimTrace& trace);

/// V_o(xhat_t, x_t) per step (or V_o(z_t, x_t) for the observer reference).
std::vector<double> lyapunov_series(const SimTrace& trace, const LyapunovCertificate& cert,
                                    EstimateSource source = EstimateSource::Estimator);

VerificationContext make_verification_context(const Scenario& scenario);

struct TraceVerification {
    InequalityReport theorem1;
    InequalityReport lemma1;
    InequalityReport cost_decrease;

    bool ok() const { return theorem1.ok() && lemma1.ok() && cost_decrease.ok(); }
};

TraceVerification verify_trace(const SimTrace& trace, const VerificationContext& ctx);

struct ReplicateRow {
    int index = 0;
    std::uint64_t seed = 0;
    double sse = 0.0;
    std::size_t theorem1_violations = 0;
    std::size_t lemma1_violations = 0;
    std::size_t cost_decrease_violations = 0;
    double max_step_seconds = 0.0;
    double mean_step_seconds = 0.0;
};

struct BatchSummary {
    int replicates = 0;
    double mean_sse = 0.0;
    double min_sse = 0.0;
    double max_sse = 0.0;
    std::size_t theorem1_violations = 0;
    std::size_t lemma1_violations = 0;
    std::size_t cost_decrease_violations = 0;
    std::vector<ReplicateRow> rows;  // ordered by replicate index
};

ReplicateRow summarize_replicate(const SimTrace& trace, const VerificationContext& ctx, int index,
                                 std::uint64_t seed);

/// Replicate k uses seed scenario.seed + k. Replicates run in parallel on up
/// to `threads` workers (0: hardware concurrency); the summary does not
/// depend on scheduling.
BatchSummary run_batch(const Scenario& scenario, int replicates, unsigned threads = 0);

// ---------------------------------------------------------------------------
// CSV trace I/O. Columns: t, x*, w*, v*, y*, xhat*, z*, Vo, J, Jtilde, Mt,
// fallback. Single-dimensional groups carry no index (v, y for the reactor).

std::vector<std::string> trace_columns(Eigen::Index n, Eigen::Index q, Eigen::Index r, Eigen::Index p);
void write_trace_csv(std::ostream& out, const SimTrace& trace);
/// Throws TraceSchemaError naming the first unexpected column.
SimTrace read_trace_csv(std::istream& in, Eigen::Index n, Eigen::Index q, Eigen::Index r, Eigen::Index p);

/// Shortest round-trip decimal form.
std::string format_double(double value);

}  // namespace obsmhe

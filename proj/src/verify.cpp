// Offline inequality checks on simulation traces.

#include "obsmhe/lyapcert.hpp"

#include <algorithm>
#include <cmath>

namespace obsmhe {

void SimTrace::validate() const {
    const std::size_t n = x.size();
    auto check = [n](std::size_t len, const char* field) {
        if (len != n) {
            throw TraceSchemaError(std::string("trace field '") + field + "' has length " + std::to_string(len) +
                                   ", expected " + std::to_string(n));
        }
    };
    check(w.size(), "w");
    check(v.size(), "v");
    check(y.size(), "y");
    check(xhat.size(), "xhat");
    check(observer.size(), "z");
    check(lyapunov.size(), "Vo");
    check(cost.size(), "J");
    check(candidate_cost.size(), "Jtilde");
    check(horizon.size(), "Mt");
    check(fallback.size(), "fallback");
    if (!u.empty()) check(u.size(), "u");
    for (std::size_t t = 0; t < n; ++t) {
        if (horizon[t] < 0 || static_cast<std::size_t>(horizon[t]) > t) {
            throw TraceSchemaError("trace field 'Mt' at t=" + std::to_string(t) + " exceeds t");
        }
    }
}

namespace {

constexpr double kRelTol = 1e-10;
constexpr std::size_t kMaxWitnesses = 50;

void record(InequalityReport& report, std::size_t t, double lhs, double rhs) {
    ++report.checked;
    report.worst_margin = std::max(report.worst_margin, lhs - rhs);
    if (lhs > rhs + kRelTol * (1.0 + std::abs(rhs))) {
        ++report.violations;
        if (report.witnesses.size() < kMaxWitnesses) report.witnesses.push_back({t, lhs, rhs});
    }
}

Vector input_at(const SimTrace& trace, std::size_t t) {
    return trace.u.empty() ? Vector(0) : trace.u[t];
}

// Prior of the window reaching `depth` steps back from t. At t = 0 nothing has
// been published yet, so the prior is the initial guess (observer[0]).
const Vector& prior_state(const SimTrace& trace, std::size_t t, std::size_t depth) {
    return t == 0 ? trace.observer[0] : trace.xhat[t - depth];
}

// sum_{j=1}^{depth} eta^{j-1} ||w_{t-j}||_Q^2 and the same for v with R.
std::pair<double, double> discounted_disturbances(const SimTrace& trace, const LyapunovCertificate& cert,
                                                  std::size_t t, std::size_t depth) {
    double sw = 0.0, sv = 0.0, weight = 1.0;
    for (std::size_t j = 1; j <= depth; ++j) {
        sw += weight * weighted_sq_norm(trace.w[t - j], cert.Q);
        sv += weight * weighted_sq_norm(trace.v[t - j], cert.R);
        weight *= cert.eta;
    }
    return {sw, sv};
}

std::size_t restart_depth(const VerificationContext& ctx, std::size_t t) {
    return ctx.mode == CandidateMode::Reinit ? std::min<std::size_t>(t, static_cast<std::size_t>(ctx.T))
                                             : std::min<std::size_t>(t, static_cast<std::size_t>(ctx.M));
}

void require_context(const VerificationContext& ctx) {
    if (ctx.M < 1) throw ConfigError("verification: M must be at least 1");
    if (ctx.mode == CandidateMode::Reinit) {
        if (ctx.T < ctx.M) throw ConfigError("verification: reinit mode requires T >= M");
        if (ctx.observer == nullptr) throw ConfigError("verification: reinit mode needs the observer");
    }
}

}  // namespace

InequalityReport check_mstep_decrease(const SimTrace& trace, const VerificationContext& ctx) {
    trace.validate();
    require_context(ctx);
    InequalityReport report;
    report.name = "theorem1";
    const bool filtering = ctx.form == EstimatorForm::Filtering;
    for (std::size_t t = 0; t < trace.size(); ++t) {
        const int Mt = trace.horizon[t];
        const std::size_t depth = ctx.mode == CandidateMode::Reinit ? restart_depth(ctx, t)
                                                                    : static_cast<std::size_t>(Mt);
        const TheoremGammas g = theorem_gammas(ctx.params, ctx.form, ctx.mode, Mt, static_cast<int>(depth));
        const auto [sw, sv] = discounted_disturbances(trace, ctx.cert, t, depth);
        double rhs = g.g1 * v_o(ctx.cert, prior_state(trace, t, depth), trace.x[t - depth]) + g.g2 * sw + g.g3 * sv;
        // Filtering form also sees the current measurement noise.
        if (filtering) rhs += g.g3 * weighted_sq_norm(trace.v[t], ctx.cert.R);
        record(report, t, v_o(ctx.cert, trace.xhat[t], trace.x[t]), rhs);
    }
    return report;
}

InequalityReport check_lemma1(const SimTrace& trace, const VerificationContext& ctx) {
    trace.validate();
    require_context(ctx);
    if (!(ctx.params.lam_min_R > 0.0)) {
        throw MatrixError("check_lemma1: the candidate-cost bound divides by lambda_min(R), which is zero");
    }
    if (!(ctx.lipschitz_h > 0.0)) throw ConfigError("check_lemma1: lipschitz_h must be positive");
    InequalityReport report;
    report.name = "lemma1";
    const bool filtering = ctx.form == EstimatorForm::Filtering;
    const double eta = ctx.cert.eta;
    const double ratio = ctx.params.lam_min_P1 / ctx.params.lam_min_R;
    for (std::size_t t = 0; t < trace.size(); ++t) {
        const std::size_t Mt = static_cast<std::size_t>(trace.horizon[t]);
        Vector window_start = prior_state(trace, t, Mt);
        if (ctx.mode == CandidateMode::Reinit) {
            const std::size_t Tt = restart_depth(ctx, t);
            if (Tt < Mt) throw TraceSchemaError("check_lemma1: trace horizon exceeds restart depth");
            window_start = prior_state(trace, t, Tt);
            for (std::size_t j = t - Tt; j < t - Mt; ++j) {
                window_start = observer_step(*ctx.observer, static_cast<std::int64_t>(j), window_start,
                                             input_at(trace, j), trace.y[j]);
            }
        }
        const auto [sw, sv] = discounted_disturbances(trace, ctx.cert, t, Mt);
        const double m = static_cast<double>(Mt);
        const double prior_weight = (filtering ? m + 1.0 : m) * std::pow(eta, m);
        double rhs = prior_weight * v_o(ctx.cert, window_start, trace.x[t - Mt]) + m * sw + (eta * ratio + m) * sv;
        if (filtering) rhs += ratio * weighted_sq_norm(trace.v[t], ctx.cert.R);
        record(report, t, trace.candidate_cost[t], rhs);
    }
    return report;
}

InequalityReport check_cost_decrease(const SimTrace& trace) {
    trace.validate();
    InequalityReport report;
    report.name = "cost_decrease";
    for (std::size_t t = 0; t < trace.size(); ++t) {
        ++report.checked;
        const double lhs = trace.cost[t], rhs = trace.candidate_cost[t];
        report.worst_margin = std::max(report.worst_margin, lhs - rhs);
        if (!(lhs <= rhs)) {
            ++report.violations;
            if (report.witnesses.size() < kMaxWitnesses) report.witnesses.push_back({t, lhs, rhs});
        }
    }
    return report;
}

RgesReport check_rges_envelope(const SimTrace& trace, const RgesConstants& c, EstimateSource source) {
    for (double l : {c.lambda1, c.lambda2, c.lambda3}) {
        if (!(l >= 0.0 && l < 1.0)) throw ConfigError("check_rges_envelope: decay rates must lie in [0, 1)");
    }
    for (double k : {c.C1, c.C2, c.C3}) {
        if (!(k > 0.0)) throw ConfigError("check_rges_envelope: constants must be positive");
    }
    if (trace.x.size() != trace.xhat.size() || trace.x.size() != trace.observer.size() ||
        trace.x.size() != trace.w.size() || trace.x.size() != trace.v.size()) {
        throw TraceSchemaError("check_rges_envelope: inconsistent trace lengths");
    }
    const auto& est = source == EstimateSource::Estimator ? trace.xhat : trace.observer;
    RgesReport report;
    if (trace.empty()) return report;
    const double e0 = (trace.x[0] - est[0]).norm();

    auto update = [](RgesFormReport& form, double err, double bound) {
        if (err == 0.0) return;
        const double needed = bound > 0.0 ? err / bound : kInf;
        form.required_scaling = std::max(form.required_scaling, needed);
        if (err > bound * (1.0 + kRelTol)) ++form.violations;
    };

    for (std::size_t t = 0; t < trace.size(); ++t) {
        const double err = (trace.x[t] - est[t]).norm();
        const double init = c.C1 * std::pow(c.lambda1, static_cast<double>(t)) * e0;
        double max_w = 0.0, max_v = 0.0, sum_w = 0.0, sum_v = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
            const double age = static_cast<double>(t - j - 1);
            const double bw = c.C2 * std::pow(c.lambda2, age) * trace.w[j].norm();
            const double bv = c.C3 * std::pow(c.lambda3, age) * trace.v[j].norm();
            max_w = std::max(max_w, bw);
            max_v = std::max(max_v, bv);
            sum_w += bw;
            sum_v += bv;
        }
        update(report.max_form, err, std::max({init, max_w, max_v}));
        update(report.sum_form, err, init + sum_w + sum_v);
    }
    return report;
}

}  // namespace obsmhe

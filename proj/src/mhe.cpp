#include "obsmhe/mhe.hpp"

#include <cmath>
#include <tuple>

namespace obsmhe {

namespace {

Matrix symmetric_sqrt(const Matrix& A) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (A + A.transpose()));
    if (solver.info() != Eigen::Success) throw MatrixError("symmetric square root: eigensolver failed");
    const Vector root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return solver.eigenvectors() * root.asDiagonal() * solver.eigenvectors().transpose();
}

void require_psd_nonzero(const Matrix& A, Eigen::Index dim, const char* what) {
    if (A.rows() != dim || A.cols() != dim) {
        throw ConfigError(std::string(what) + ": expected " + std::to_string(dim) + "x" + std::to_string(dim));
    }
    if (min_eigenvalue(A) < -1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff())) {
        throw ConfigError(std::string(what) + ": must be positive semidefinite");
    }
    if (A.isZero(0.0)) throw ConfigError(std::string(what) + ": must be nonzero");
}

double stage_weight(const WindowProblem& problem, std::int64_t j) {
    return problem.constants.stage_scale *
           std::pow(problem.cert->eta, static_cast<double>(problem.window.t - j));
}

LmStep lm_step(const LeastSquaresObjective& objective, const Matrix& jac, const Vector& r, const Vector& x,
               double damping) {
    LmStep step;
    step.x = x;
    Matrix normal = jac.transpose() * jac;
    normal.diagonal().array() += damping;
    Eigen::LDLT<Matrix> ldlt(normal);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return step;
    const Vector dx = ldlt.solve(-jac.transpose() * r);
    if (!dx.allFinite()) return step;
    step.x = objective.project(x + dx);
    const Vector taken = step.x - x;
    step.predicted_decrease = r.squaredNorm() - (r + jac * taken).squaredNorm();
    step.solved = true;
    return step;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

double MheConfig::stage_scale(const LyapunovCertificate& cert) const {
    const double lam_g = max_eigenvalue(G);
    if (!(lam_g > 0.0)) throw ConfigError("mhe config: lambda_max(G) must be positive");
    if (!(lipschitz_h > 0.0)) throw ConfigError("mhe config: lipschitz_h must be positive");
    return min_eigenvalue(cert.P1) / (2.0 * lipschitz_h * lipschitz_h * lam_g);
}

void MheConfig::validate(Eigen::Index state_dim, Eigen::Index output_dim) const {
    if (M < 1) throw ConfigError("mhe config: M must be at least 1");
    if (candidate_mode == CandidateMode::Reinit && T < M) throw ConfigError("mhe config: reinit requires T >= M");
    require_psd_nonzero(W, state_dim, "mhe config W");
    require_psd_nonzero(G, output_dim, "mhe config G");
    if (!(lipschitz_h > 0.0)) throw ConfigError("mhe config: lipschitz_h must be positive");
    if (iterations < 0 && iterations != kConverged) throw ConfigError("mhe config: iterations must be >= 0");
    if (optimizer.max_inner < 1) throw ConfigError("mhe config: optimizer.max_inner must be >= 1");
    if (optimizer.grad_tol < 0.0 || optimizer.step_tol < 0.0) {
        throw ConfigError("mhe config: optimizer tolerances must be nonnegative");
    }
}

CostConstants CostConstants::from(const MheConfig& cfg, const LyapunovCertificate& cert) {
    CostConstants c;
    c.stage_scale = cfg.stage_scale(cert);
    c.w_sqrt = symmetric_sqrt(cfg.W);
    c.g_sqrt = symmetric_sqrt(cfg.G);
    return c;
}

// ---------------------------------------------------------------------------
// WindowBuffer

WindowBuffer::WindowBuffer(int capacity, Vector initial_guess)
    : capacity_(capacity), initial_guess_(std::move(initial_guess)) {
    if (capacity < 1) throw ConfigError("window buffer: capacity must be at least 1");
}

void WindowBuffer::push(Vector u, Vector y) {
    if (pending_) throw PreconditionError("window buffer: previous step has no published estimate");
    ++time_;
    data_.emplace_back(std::move(u), std::move(y));
    while (data_.size() > static_cast<std::size_t>(capacity_) + 1) data_.pop_front();
    pending_ = true;
}

void WindowBuffer::publish(Vector xhat) {
    if (!pending_) throw PreconditionError("window buffer: publish without new data");
    estimates_.push_back(std::move(xhat));
    while (estimates_.size() > static_cast<std::size_t>(capacity_) + 1) estimates_.pop_front();
    pending_ = false;
}

std::size_t WindowBuffer::data_slot(std::int64_t j) const {
    const std::int64_t front = time_ - static_cast<std::int64_t>(data_.size()) + 1;
    if (j < front || j > time_) {
        throw PreconditionError("window buffer: data index " + std::to_string(j) + " not retained");
    }
    return static_cast<std::size_t>(j - front);
}

std::size_t WindowBuffer::estimate_slot(std::int64_t j) const {
    const std::int64_t last = pending_ ? time_ - 1 : time_;
    const std::int64_t front = last - static_cast<std::int64_t>(estimates_.size()) + 1;
    if (j < front || j > last) {
        throw PreconditionError("window buffer: estimate index " + std::to_string(j) + " not retained");
    }
    return static_cast<std::size_t>(j - front);
}

const Vector& WindowBuffer::input(std::int64_t j) const { return data_[data_slot(j)].first; }
const Vector& WindowBuffer::output(std::int64_t j) const { return data_[data_slot(j)].second; }
const Vector& WindowBuffer::estimate(std::int64_t j) const { return estimates_[estimate_slot(j)]; }

const Vector& WindowBuffer::prior(std::int64_t start) const {
    if (estimates_.empty()) return initial_guess_;
    return estimate(start);
}

Window Window::from_buffer(const WindowBuffer& buffer, int length, EstimatorForm form) {
    Window w;
    w.t = buffer.time();
    w.start = w.t - length;
    w.form = form;
    if (length < 0 || w.start < 0) throw PreconditionError("window: length exceeds available data");
    w.u.reserve(static_cast<std::size_t>(length) + 1);
    w.y.reserve(static_cast<std::size_t>(length) + 1);
    for (std::int64_t j = w.start; j <= w.t; ++j) {
        w.u.push_back(buffer.input(j));
        w.y.push_back(buffer.output(j));
    }
    return w;
}

// ---------------------------------------------------------------------------
// Cost and sensitivities

Rollout rollout(const SystemModel& model, const AuxObserver& obs, const Vector& x_init, const Window& window) {
    if (!obs.contains(x_init)) throw PreconditionError("rollout: infeasible start, initial state outside Z");
    Rollout out;
    const int length = window.length();
    out.states.reserve(static_cast<std::size_t>(length) + 1);
    out.states.push_back(x_init);
    for (int k = 0; k < length; ++k) {
        out.states.push_back(observer_step(obs, window.start + k, out.states.back(), window.u[k], window.y[k]));
    }
    const int stages = window.stages();
    out.outputs.reserve(static_cast<std::size_t>(stages));
    for (int k = 0; k < stages; ++k) out.outputs.push_back(model.nominal_output(out.states[k], window.u[k]));
    return out;
}

double cost(const WindowProblem& problem, const Vector& x_init) {
    const Rollout ro = rollout(*problem.model, *problem.observer, x_init, problem.window);
    double stage_sum = 0.0;
    for (std::size_t k = 0; k < ro.outputs.size(); ++k) {
        const std::int64_t j = problem.window.start + static_cast<std::int64_t>(k);
        const double weight = std::pow(problem.cert->eta, static_cast<double>(problem.window.t - j));
        stage_sum += weight * weighted_sq_norm(ro.outputs[k] - problem.window.y[k], problem.cfg->G);
    }
    return 2.0 * weighted_sq_norm(x_init - problem.prior, problem.cfg->W) +
           problem.constants.stage_scale * stage_sum;
}

Vector residual(const WindowProblem& problem, const Vector& x_init) {
    const Rollout ro = rollout(*problem.model, *problem.observer, x_init, problem.window);
    const Eigen::Index n = x_init.size();
    const Eigen::Index p = problem.model->output_dim;
    Vector r(n + p * static_cast<Eigen::Index>(ro.outputs.size()));
    r.head(n) = std::sqrt(2.0) * problem.constants.w_sqrt * (x_init - problem.prior);
    for (std::size_t k = 0; k < ro.outputs.size(); ++k) {
        const std::int64_t j = problem.window.start + static_cast<std::int64_t>(k);
        r.segment(n + p * static_cast<Eigen::Index>(k), p) =
            std::sqrt(stage_weight(problem, j)) * problem.constants.g_sqrt * (ro.outputs[k] - problem.window.y[k]);
    }
    return r;
}

Matrix jacobian_rollout(const WindowProblem& problem, const Vector& x_init) {
    const SystemModel& model = *problem.model;
    const AuxObserver& obs = *problem.observer;
    const Window& window = problem.window;
    if (!obs.contains(x_init)) throw PreconditionError("jacobian_rollout: initial state outside Z");

    const Eigen::Index n = x_init.size();
    const Eigen::Index p = model.output_dim;
    const int stages = window.stages();
    Matrix jac(n + p * stages, n);
    jac.topRows(n) = std::sqrt(2.0) * problem.constants.w_sqrt;

    Vector state = x_init;
    Matrix sens = Matrix::Identity(n, n);
    for (int k = 0; k < stages; ++k) {
        const std::int64_t j = window.start + k;
        jac.middleRows(n + p * k, p) = std::sqrt(stage_weight(problem, j)) * problem.constants.g_sqrt *
                                       model.nominal_output_jacobian(state, window.u[k]) * sens;
        if (k < window.length()) {
            sens = obs.projected_jacobian(j, state, window.u[k], window.y[k]) * sens;
            state = observer_step(obs, j, state, window.u[k], window.y[k]);
        }
    }
    return jac;
}

// ---------------------------------------------------------------------------
// Candidates

Vector candidate_simple(const WindowBuffer& buffer, std::int64_t start) { return buffer.prior(start); }

std::pair<Vector, Vector> candidate_reinit(const AuxObserver& obs, const WindowBuffer& buffer, int horizon, int T) {
    const std::int64_t t = buffer.time();
    const std::int64_t restart = std::min<std::int64_t>(t, T);
    if (restart < horizon) throw PreconditionError("candidate_reinit: T_t smaller than M_t");
    const std::int64_t from = t - restart;
    Vector z = buffer.prior(from);
    for (std::int64_t j = from; j < t - horizon; ++j) z = observer_step(obs, j, z, buffer.input(j), buffer.output(j));
    return {z, z};
}

// ---------------------------------------------------------------------------
// Optimizer

LmStep optimizer_step(const LeastSquaresObjective& objective, const Vector& x, double damping) {
    return lm_step(objective, objective.jacobian(x), objective.residual(x), x, damping);
}

SolveResult minimize(const LeastSquaresObjective& objective, const Vector& start, int budget,
                     const OptimizerOptions& options) {
    SolveResult result;
    result.x = objective.project(start);
    result.cost = objective.cost(result.x);
    result.accepted_costs.push_back(result.cost);

    const int cap = budget == kConverged ? kConvergedIterationCap : budget;
    double damping = -1.0;
    for (int it = 0; it < cap; ++it) {
        const Matrix jac = objective.jacobian(result.x);
        const Vector r = objective.residual(result.x);
        if ((jac.transpose() * r).norm() <= options.grad_tol) break;
        if (damping < 0.0) {
            const double diag = (jac.transpose() * jac).diagonal().maxCoeff();
            damping = options.initial_damping * (diag > 0.0 ? diag : 1.0);
        }
        ++result.iterations;

        bool accepted = false;
        Vector dx;
        for (int inner = 0; inner < options.max_inner && damping <= options.damping_ceiling; ++inner) {
            const LmStep step = lm_step(objective, jac, r, result.x, damping);
            if (!step.solved) {
                damping *= 10.0;
                continue;
            }
            const double trial = objective.cost(step.x);
            if (trial < result.cost) {
                dx = step.x - result.x;
                result.x = step.x;
                result.cost = trial;
                damping *= 0.5;
                accepted = true;
                break;
            }
            damping *= 10.0;
        }
        if (!accepted) break;
        result.accepted_costs.push_back(result.cost);
        if (dx.norm() <= options.step_tol * (1.0 + result.x.norm())) break;
    }
    return result;
}

EstimateRecord solve_suboptimal(const WindowProblem& problem, const Vector& warm_start, const Vector& candidate) {
    const WindowObjective objective(problem);
    EstimateRecord rec;
    rec.t = problem.window.t;
    rec.horizon = problem.window.length();
    rec.candidate = candidate;
    rec.prior = problem.prior;
    rec.candidate_cost = objective.cost(candidate);

    rec.window_initial = candidate;
    rec.cost = rec.candidate_cost;
    rec.fallback = true;
    if (problem.cfg->iterations != 0) {
        SolveResult solved = minimize(objective, warm_start, problem.cfg->iterations, problem.cfg->optimizer);
        rec.iterations = solved.iterations;
        rec.accepted_costs = std::move(solved.accepted_costs);
        if (solved.cost <= rec.candidate_cost) {
            rec.window_initial = std::move(solved.x);
            rec.cost = solved.cost;
            rec.fallback = false;
        }
    }
    rec.states = rollout(*problem.model, *problem.observer, rec.window_initial, problem.window).states;
    rec.xhat = rec.states.back();
    return rec;
}

// ---------------------------------------------------------------------------
// Estimator

MovingHorizonEstimator::MovingHorizonEstimator(SystemModel model, AuxObserver observer, LyapunovCertificate cert,
                                               MheConfig cfg, Vector xhat0)
    : model_(std::move(model)),
      observer_(std::move(observer)),
      cert_(std::move(cert)),
      cfg_(std::move(cfg)),
      constants_(),
      buffer_(cfg_.capacity(), xhat0) {
    model_.validate();
    cert_.validate();
    cfg_.validate(model_.state_dim, model_.output_dim);
    require_dim(xhat0, model_.state_dim, "estimator initial guess");
    if (!observer_.contains(xhat0)) throw PreconditionError("estimator: initial guess outside Z");
    constants_ = CostConstants::from(cfg_, cert_);
}

EstimateRecord MovingHorizonEstimator::step(const Vector& u, const Vector& y) {
    require_dim(u, model_.input_dim, "estimate_step input");
    require_dim(y, model_.output_dim, "estimate_step measurement");
    buffer_.push(u, y);
    const std::int64_t t = buffer_.time();
    const int horizon = static_cast<int>(std::min<std::int64_t>(t, cfg_.M));
    const std::int64_t start = t - horizon;

    WindowProblem problem;
    problem.model = &model_;
    problem.observer = &observer_;
    problem.cert = &cert_;
    problem.cfg = &cfg_;
    problem.window = Window::from_buffer(buffer_, horizon, cfg_.form);
    problem.constants = constants_;

    Vector candidate;
    if (cfg_.candidate_mode == CandidateMode::Reinit) {
        std::tie(candidate, problem.prior) = candidate_reinit(observer_, buffer_, horizon, cfg_.T);
    } else {
        candidate = candidate_simple(buffer_, start);
        problem.prior = candidate;
    }

    // Warm start: the previous solution's state at the new window start.
    Vector warm = candidate;
    const std::int64_t offset = start - previous_start_;
    if (!previous_states_.empty() && offset >= 0 && offset < static_cast<std::int64_t>(previous_states_.size())) {
        warm = observer_.project(previous_states_[static_cast<std::size_t>(offset)]);
    }

    EstimateRecord rec = solve_suboptimal(problem, warm, candidate);
    previous_states_ = rec.states;
    previous_start_ = start;
    buffer_.publish(rec.xhat);
    return rec;
}

}  // namespace obsmhe

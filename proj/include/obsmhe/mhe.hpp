#pragma once

#include "obsmhe/core.hpp"
#include "obsmhe/lyapcert.hpp"
#include "obsmhe/model.hpp"

#include <algorithm>
#include <cstdint>
#include <deque>
#include <utility>
#include <vector>

namespace obsmhe {

struct OptimizerOptions {
    int max_inner = 12;        // damping retries per iteration
    double grad_tol = 1e-12;   // on ||J' r||
    double step_tol = 1e-12;   // on ||dx|| / (1 + ||x||)
    double initial_damping = 1e-9;  // relative to max diag(J'J)
    double damping_ceiling = 1e12;
};

/// Iteration budget meaning "run the optimizer to its tolerances".
inline constexpr int kConverged = -1;
/// Hard stop for converged solves.
inline constexpr int kConvergedIterationCap = 200;

struct MheConfig {
    int M = 1;
    int T = 1;  // restart depth, used in reinit mode only
    Matrix W;
    Matrix G;
    double lipschitz_h = 1.0;
    EstimatorForm form = EstimatorForm::Prediction;
    CandidateMode candidate_mode = CandidateMode::Simple;
    int iterations = 0;  // >= 0, or kConverged
    OptimizerOptions optimizer;

    /// lambda_min(P1) / (2 L_h^2 lambda_max(G)).
    double stage_scale(const LyapunovCertificate& cert) const;
    void validate(Eigen::Index state_dim, Eigen::Index output_dim) const;
    int capacity() const { return candidate_mode == CandidateMode::Reinit ? std::max(M, T) : M; }
};

/// Recent (u, y) pairs and published estimates of a running estimator.
///
/// At time t the buffer holds data for j in [t - capacity, t] and the
/// estimates for j in [t - capacity, t - 1]; publishing x̂_t advances time.
class WindowBuffer {
  public:
    WindowBuffer(int capacity, Vector initial_guess);

    void push(Vector u, Vector y);
    void publish(Vector xhat);

    /// Index of the most recently pushed data pair.
    std::int64_t time() const { return time_; }
    int capacity() const { return capacity_; }
    bool has_pending() const { return pending_; }

    const Vector& input(std::int64_t j) const;
    const Vector& output(std::int64_t j) const;
    const Vector& estimate(std::int64_t j) const;
    const Vector& initial_guess() const { return initial_guess_; }

    /// Prior anchoring the window that starts at `start`; the initial guess
    /// while nothing has been published.
    const Vector& prior(std::int64_t start) const;

  private:
    std::size_t data_slot(std::int64_t j) const;
    std::size_t estimate_slot(std::int64_t j) const;

    int capacity_;
    Vector initial_guess_;
    std::deque<std::pair<Vector, Vector>> data_;
    std::deque<Vector> estimates_;
    std::int64_t time_ = -1;
    bool pending_ = false;
};

/// Data window of one MHE problem: indices start..t, y_t used only in
/// filtering form.
struct Window {
    std::int64_t start = 0;
    std::int64_t t = 0;
    EstimatorForm form = EstimatorForm::Prediction;
    std::vector<Vector> u;  // u_start .. u_t
    std::vector<Vector> y;  // y_start .. y_t

    int length() const { return static_cast<int>(t - start); }
    /// Number of stage terms in the cost.
    int stages() const { return length() + (form == EstimatorForm::Filtering ? 1 : 0); }

    static Window from_buffer(const WindowBuffer& buffer, int length, EstimatorForm form);
};

struct Rollout {
    std::vector<Vector> states;   // x̂_{start|t} .. x̂_{t|t}
    std::vector<Vector> outputs;  // ŷ_{j|t} for each stage term, oldest first
};

/// Per-configuration constants of the cost, computed once.
struct CostConstants {
    double stage_scale = 0.0;
    Matrix w_sqrt;  // symmetric square root of W
    Matrix g_sqrt;  // symmetric square root of G

    static CostConstants from(const MheConfig& cfg, const LyapunovCertificate& cert);
};

/// Everything fixed within one time step's optimization problem.
struct WindowProblem {
    const SystemModel* model = nullptr;
    const AuxObserver* observer = nullptr;
    const LyapunovCertificate* cert = nullptr;
    const MheConfig* cfg = nullptr;
    Window window;
    Vector prior;
    CostConstants constants;
};

Rollout rollout(const SystemModel& model, const AuxObserver& obs, const Vector& x_init, const Window& window);

/// J_t(x_init): 2||x_init - prior||_W^2 + scale * sum_j eta^j ||ŷ_{t-j|t} - y_{t-j}||_G^2.
double cost(const WindowProblem& problem, const Vector& x_init);

/// Stacked residual r with cost(x) = ||r||^2.
Vector residual(const WindowProblem& problem, const Vector& x_init);

/// d r / d x_init by forward sensitivity propagation along the rollout.
Matrix jacobian_rollout(const WindowProblem& problem, const Vector& x_init);

Vector candidate_simple(const WindowBuffer& buffer, std::int64_t start);

/// Restart the observer T_t steps back at the published estimate and simulate
/// it forward to the window start. Returns (candidate, prior), which coincide.
std::pair<Vector, Vector> candidate_reinit(const AuxObserver& obs, const WindowBuffer& buffer, int horizon,
                                           int T);

struct LeastSquaresObjective {
    virtual ~LeastSquaresObjective() = default;
    virtual Vector residual(const Vector& x) const = 0;
    virtual Matrix jacobian(const Vector& x) const = 0;
    virtual double cost(const Vector& x) const { return residual(x).squaredNorm(); }
    virtual Vector project(const Vector& x) const { return x; }
};

class WindowObjective final : public LeastSquaresObjective {
  public:
    explicit WindowObjective(const WindowProblem& problem) : problem_(problem) {}
    Vector residual(const Vector& x) const override { return obsmhe::residual(problem_, x); }
    Matrix jacobian(const Vector& x) const override { return jacobian_rollout(problem_, x); }
    double cost(const Vector& x) const override { return obsmhe::cost(problem_, x); }
    Vector project(const Vector& x) const override { return problem_.observer->project(x); }

  private:
    const WindowProblem& problem_;
};

struct LmStep {
    Vector x;                        // projected trial point
    double predicted_decrease = 0.0; // ||r||^2 - ||r + J dx||^2 for the projected dx
    bool solved = false;             // false when the normal matrix was singular
};

/// One projected Levenberg-Marquardt step: (J'J + damping I) dx = -J' r.
LmStep optimizer_step(const LeastSquaresObjective& objective, const Vector& x, double damping);

struct SolveResult {
    Vector x;
    double cost = 0.0;
    int iterations = 0;
    std::vector<double> accepted_costs;  // warm-start cost first
};

/// Up to `budget` LM iterations from `start` (kConverged: until tolerances).
/// Accepted iterates have non-increasing cost.
SolveResult minimize(const LeastSquaresObjective& objective, const Vector& start, int budget,
                     const OptimizerOptions& options);

struct EstimateRecord {
    std::int64_t t = 0;
    int horizon = 0;          // M_t
    Vector xhat;              // x̂_t = x̂_{t|t}
    Vector window_initial;    // x̂_{t-M_t|t}
    Vector candidate;         // x̃_{t-M_t|t}
    Vector prior;
    double cost = 0.0;        // J_t at the returned solution
    double candidate_cost = 0.0;
    int iterations = 0;
    bool fallback = false;
    std::vector<double> accepted_costs;
    std::vector<Vector> states;  // full rollout of the returned solution
};

/// Accepts the best iterate if it does not exceed the candidate cost,
/// otherwise returns the candidate (fallback). The cost-decrease condition
/// therefore holds for every iteration budget.
EstimateRecord solve_suboptimal(const WindowProblem& problem, const Vector& warm_start, const Vector& candidate);

/// Sequential suboptimal moving horizon estimator.
class MovingHorizonEstimator {
  public:
    MovingHorizonEstimator(SystemModel model, AuxObserver observer, LyapunovCertificate cert, MheConfig cfg,
                           Vector xhat0);

    /// Consumes (u_t, y_t) and publishes x̂_t.
    EstimateRecord step(const Vector& u, const Vector& y);

    std::int64_t next_time() const { return buffer_.time() + 1; }
    const MheConfig& config() const { return cfg_; }
    const WindowBuffer& buffer() const { return buffer_; }

  private:
    SystemModel model_;
    AuxObserver observer_;
    LyapunovCertificate cert_;
    MheConfig cfg_;
    CostConstants constants_;
    WindowBuffer buffer_;
    std::vector<Vector> previous_states_;
    std::int64_t previous_start_ = 0;
};

}  // namespace obsmhe

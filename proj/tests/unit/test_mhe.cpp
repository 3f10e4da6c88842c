#include "doctest.h"

#include "benchmark_fixture.hpp"
#include "obsmhe/mhe.hpp"

#include <cmath>

using namespace obsmhe;

namespace {

const Vector kNoInput(0);

// Owns everything a WindowProblem points at.
struct Bench {
    SystemModel model = make_reactor_model();
    AuxObserver obs = make_reactor_observer(model);
    LyapunovCertificate cert = fixture::benchmark_cert();
    MheConfig cfg;
    WindowProblem problem;

    Bench(double a, int M, EstimatorForm form) : cfg(fixture::benchmark_mhe(a, M, 1)) {
        cfg.form = form;
        problem.model = &model;
        problem.observer = &obs;
        problem.cert = &cert;
        problem.cfg = &cfg;
        problem.constants = CostConstants::from(cfg, cert);
    }

    // Noise-free measurements of the plant started at x0, pushed into a buffer
    // with the given estimates published along the way.
    WindowBuffer fill(const Vector& x0, int steps, const Vector& guess) {
        WindowBuffer buf(cfg.capacity(), guess);
        Vector x = x0;
        for (int t = 0; t < steps; ++t) {
            buf.push(kNoInput, output(model, x, kNoInput, Vector::Zero(1)));
            if (t + 1 < steps) buf.publish(guess);
            x = step_system(model, x, kNoInput, Vector::Zero(2));
        }
        return buf;
    }
};

Matrix finite_difference(const WindowProblem& problem, const Vector& x) {
    const Vector r0 = residual(problem, x);
    Matrix fd(r0.size(), x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        Vector xp = x, xm = x;
        xp[k] += 1e-6;
        xm[k] -= 1e-6;
        fd.col(k) = (residual(problem, xp) - residual(problem, xm)) / 2e-6;
    }
    return fd;
}

// r(x) = A x - b, with a projection that does nothing.
struct LinearObjective : LeastSquaresObjective {
    Matrix A;
    Vector b;
    Vector residual(const Vector& x) const override { return A * x - b; }
    Matrix jacobian(const Vector&) const override { return A; }
};

}  // namespace

TEST_CASE("window buffer keeps the last M+1 samples and estimates") {
    WindowBuffer buf(2, vec({0.5}));
    CHECK(buf.prior(0) == vec({0.5}));
    for (int t = 0; t < 5; ++t) {
        buf.push(kNoInput, vec({double(t)}));
        CHECK(buf.output(t)[0] == t);
        CHECK_THROWS_AS(buf.push(kNoInput, vec({0.0})), PreconditionError);
        buf.publish(vec({10.0 + t}));
    }
    CHECK(buf.time() == 4);
    CHECK(buf.output(2)[0] == 2.0);
    CHECK_THROWS_AS(buf.output(1), PreconditionError);
    CHECK(buf.estimate(4)[0] == 14.0);
    CHECK(buf.prior(3)[0] == 13.0);
    CHECK_THROWS_AS(buf.publish(vec({0.0})), PreconditionError);
    CHECK_THROWS_AS(WindowBuffer(0, vec({0.0})), ConfigError);
}

TEST_CASE("rollout composes observer steps") {
    Bench b(1e-3, 4, EstimatorForm::Filtering);
    WindowBuffer buf = b.fill(vec({3.0, 1.0}), 7, vec({0.1, 4.5}));
    const Window w = Window::from_buffer(buf, 4, EstimatorForm::Filtering);
    CHECK(w.start == 2);
    CHECK(w.length() == 4);
    CHECK(w.stages() == 5);

    const Vector x0 = vec({1.0, 2.0});
    const Rollout ro = rollout(b.model, b.obs, x0, w);
    REQUIRE(ro.states.size() == 5);
    REQUIRE(ro.outputs.size() == 5);
    Vector z = x0;
    for (int k = 0; k < 4; ++k) {
        CHECK(ro.states[k] == z);
        CHECK(ro.outputs[k] == b.model.nominal_output(z, kNoInput));
        z = observer_step(b.obs, 2 + k, z, kNoInput, buf.output(2 + k));
    }
    CHECK(ro.states[4] == z);

    const Window pred = Window::from_buffer(buf, 4, EstimatorForm::Prediction);
    CHECK(rollout(b.model, b.obs, x0, pred).outputs.size() == 4);

    CHECK_THROWS_AS(rollout(b.model, b.obs, vec({0.0, 1.0}), w), PreconditionError);
    CHECK_THROWS_AS(Window::from_buffer(buf, 8, EstimatorForm::Filtering), PreconditionError);
}

TEST_CASE("zero-length window has only the initial state") {
    Bench b(1e-3, 4, EstimatorForm::Prediction);
    WindowBuffer buf = b.fill(vec({3.0, 1.0}), 1, vec({0.1, 4.5}));
    const Window w = Window::from_buffer(buf, 0, EstimatorForm::Prediction);
    const Rollout ro = rollout(b.model, b.obs, vec({1.0, 1.0}), w);
    CHECK(ro.states.size() == 1);
    CHECK(ro.outputs.empty());
    const Window wf = Window::from_buffer(buf, 0, EstimatorForm::Filtering);
    CHECK(rollout(b.model, b.obs, vec({1.0, 1.0}), wf).outputs.size() == 1);
}

TEST_CASE("stage scale is lambda_min(P) over 2 L_h^2 lambda_max(G)") {
    // Smallest root of s^2 - 2.791 s + (1.537*1.254 - 1.380^2).
    const double tr = 1.537 + 1.254, det = 1.537 * 1.254 - 1.380 * 1.380;
    const double lam_min = 0.5 * (tr - std::sqrt(tr * tr - 4.0 * det));
    const MheConfig cfg = fixture::benchmark_mhe(1e-3, 128, 1);
    CHECK(cfg.stage_scale(fixture::benchmark_cert()) == doctest::Approx(lam_min / 4.0).epsilon(1e-12));
    CHECK(cfg.stage_scale(fixture::benchmark_cert()) == doctest::Approx(2.0661e-3).epsilon(1e-4));

    MheConfig zero_g = cfg;
    zero_g.G = Matrix::Zero(1, 1);
    CHECK_THROWS_AS(zero_g.stage_scale(fixture::benchmark_cert()), ConfigError);
    CHECK_THROWS_AS(zero_g.validate(2, 1), ConfigError);
}

TEST_CASE("cost on hand-checkable windows") {
    Bench b(1e-3, 4, EstimatorForm::Filtering);
    const Vector x_true = vec({3.0, 1.0});
    WindowBuffer buf = b.fill(x_true, 5, vec({0.1, 4.5}));
    b.problem.window = Window::from_buffer(buf, 4, EstimatorForm::Filtering);

    SUBCASE("true trajectory at the prior costs nothing") {
        // Observer steps with zero innovation follow the plant exactly.
        b.problem.prior = x_true;
        CHECK(cost(b.problem, x_true) == 0.0);
        CHECK(residual(b.problem, x_true).norm() == 0.0);
    }
    SUBCASE("prior term is twice the W-weighted distance") {
        b.problem.prior = vec({2.0, 1.0});
        CHECK(cost(b.problem, x_true) == doctest::Approx(2.0 * 1e-3 * 1.537).epsilon(1e-12));
    }
    SUBCASE("an offset on the newest output costs scale times its square") {
        // y_t only enters the filtering stage term, not the rollout.
        b.problem.window.y.back()[0] += 0.3;
        b.problem.prior = x_true;
        const double s = b.problem.constants.stage_scale;
        CHECK(cost(b.problem, x_true) == doctest::Approx(s * 0.09).epsilon(1e-9));
    }
    SUBCASE("older stages are discounted by eta^(t-j)") {
        b.problem.prior = vec({2.0, 2.0});
        const Rollout ro = rollout(b.model, b.obs, x_true + vec({0.1, 0.0}), b.problem.window);
        double want = 2.0 * weighted_sq_norm(x_true + vec({0.1, 0.0}) - b.problem.prior, b.cfg.W);
        for (int k = 0; k < 5; ++k) {
            const double e = ro.outputs[k][0] - b.problem.window.y[k][0];
            want += b.problem.constants.stage_scale * std::pow(0.955, 4 - k) * e * e;
        }
        CHECK(cost(b.problem, x_true + vec({0.1, 0.0})) == doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("cost equals the squared residual norm") {
        b.problem.prior = vec({1.0, 3.0});
        const Vector x = vec({2.0, 2.5});
        CHECK(cost(b.problem, x) == doctest::Approx(residual(b.problem, x).squaredNorm()).epsilon(1e-12));
    }
}

TEST_CASE("analytic window jacobian matches central differences") {
    for (EstimatorForm form : {EstimatorForm::Prediction, EstimatorForm::Filtering}) {
        Bench b(1e-3, 6, form);
        WindowBuffer buf = b.fill(vec({3.0, 1.0}), 9, vec({0.1, 4.5}));
        b.problem.window = Window::from_buffer(buf, 6, form);
        b.problem.prior = vec({2.0, 2.0});
        for (const Vector& x : {vec({2.9, 1.1}), vec({1.5, 0.5}), vec({4.0, 3.0})}) {
            const Matrix J = jacobian_rollout(b.problem, x);
            const Matrix fd = finite_difference(b.problem, x);
            CHECK((J - fd).norm() <= 1e-6 * (1.0 + fd.norm()));
        }
    }
}

TEST_CASE("simple candidate is the estimate published at the window start") {
    WindowBuffer buf(3, vec({0.1, 4.5}));
    CHECK(candidate_simple(buf, 0) == vec({0.1, 4.5}));
    for (int t = 0; t < 6; ++t) {
        buf.push(kNoInput, vec({1.0}));
        buf.publish(vec({1.0 + t, 2.0}));
    }
    CHECK(candidate_simple(buf, 3) == vec({4.0, 2.0}));
}

TEST_CASE("re-initialized candidate runs the observer from T steps back") {
    Bench b(1e-3, 3, EstimatorForm::Filtering);
    b.cfg.candidate_mode = CandidateMode::Reinit;
    b.cfg.T = 178;
    const int steps = 200;
    WindowBuffer buf(b.cfg.capacity(), vec({0.1, 4.5}));
    std::vector<Vector> ys, published;
    Vector x = vec({3.0, 1.0});
    for (int t = 0; t < steps; ++t) {
        const Vector y = output(b.model, x, kNoInput, vec({0.004 * std::sin(0.3 * t)}));
        ys.push_back(y);
        buf.push(kNoInput, y);
        if (t + 1 < steps) {
            const Vector e = vec({0.2 + 0.01 * t, 1.0 + 0.02 * t});
            published.push_back(e);
            buf.publish(e);
        }
        x = step_system(b.model, x, kNoInput, vec({1e-3, -1e-3}));
    }
    const std::int64_t t = steps - 1;
    const auto [cand, prior] = candidate_reinit(b.obs, buf, 3, 178);
    Vector z = published[t - 178];
    for (std::int64_t j = t - 178; j < t - 3; ++j) z = observer_step(b.obs, j, z, kNoInput, ys[j]);
    CHECK(cand == z);
    CHECK(prior == z);

    // With T_t = M_t the candidate is the simple one.
    CHECK(candidate_reinit(b.obs, buf, 3, 3).first == candidate_simple(buf, t - 3));
    CHECK_THROWS_AS(candidate_reinit(b.obs, buf, 5, 3), PreconditionError);
}

TEST_CASE("optimizer step on linear least squares") {
    LinearObjective obj;
    obj.A = (Matrix(3, 2) << 1.0, 2.0, 0.5, -1.0, 3.0, 0.25).finished();
    obj.b = vec({1.0, -2.0, 0.5});
    const Vector x0 = vec({4.0, -3.0});

    SUBCASE("zero residual gives no step") {
        LinearObjective exact = obj;
        exact.b = obj.A * x0;
        const LmStep s = optimizer_step(exact, x0, 1e-6);
        CHECK(s.solved);
        CHECK((s.x - x0).norm() == 0.0);
    }
    SUBCASE("vanishing damping lands on the normal-equation solution") {
        const Vector want = (obj.A.transpose() * obj.A).ldlt().solve(obj.A.transpose() * obj.b);
        const LmStep s = optimizer_step(obj, x0, 0.0);
        CHECK((s.x - want).norm() < 1e-12);
        CHECK(s.predicted_decrease > 0.0);
        const SolveResult r = minimize(obj, x0, 1, OptimizerOptions{});
        CHECK((r.x - want).norm() < 1e-6);
    }
    SUBCASE("accepted costs never increase") {
        const SolveResult r = minimize(obj, x0, kConverged, OptimizerOptions{});
        for (std::size_t k = 1; k < r.accepted_costs.size(); ++k) {
            CHECK(r.accepted_costs[k] < r.accepted_costs[k - 1]);
        }
        CHECK(r.iterations <= kConvergedIterationCap);
    }
}

TEST_CASE("suboptimal solve never returns more than the candidate cost") {
    Bench b(1e-3, 8, EstimatorForm::Filtering);
    WindowBuffer buf = b.fill(vec({3.0, 1.0}), 12, vec({0.1, 4.5}));
    b.problem.window = Window::from_buffer(buf, 8, EstimatorForm::Filtering);
    const Vector candidate = vec({2.5, 1.5});
    b.problem.prior = candidate;

    SUBCASE("zero iterations returns the candidate rollout") {
        b.cfg.iterations = 0;
        const EstimateRecord rec = solve_suboptimal(b.problem, vec({5.0, 5.0}), candidate);
        CHECK(rec.fallback);
        CHECK(rec.window_initial == candidate);
        CHECK(rec.cost == rec.candidate_cost);
        CHECK(rec.xhat == rollout(b.model, b.obs, candidate, b.problem.window).states.back());
    }
    SUBCASE("a bad warm start falls back") {
        b.cfg.iterations = 1;
        b.cfg.optimizer.max_inner = 1;
        const EstimateRecord rec = solve_suboptimal(b.problem, vec({6.0, -40.0}), candidate);
        CHECK(rec.cost <= rec.candidate_cost);
        CHECK(b.obs.contains(rec.window_initial));
        CHECK(b.obs.contains(rec.xhat));
    }
    SUBCASE("more iterations do not raise the cost") {
        double last = kInf;
        for (int it : {1, 2, 5, kConverged}) {
            b.cfg.iterations = it;
            const EstimateRecord rec = solve_suboptimal(b.problem, candidate, candidate);
            CHECK(rec.cost <= rec.candidate_cost);
            CHECK(rec.cost <= last * (1.0 + 1e-12));
            for (std::size_t k = 1; k < rec.accepted_costs.size(); ++k) {
                CHECK(rec.accepted_costs[k] <= rec.accepted_costs[k - 1]);
            }
            last = rec.cost;
        }
    }
}

TEST_CASE("estimator with zero iterations reproduces the observer") {
    const Scenario sc = fixture::benchmark_scenario(1e-3, 128, 0);
    MovingHorizonEstimator est(sc.model, sc.observer, sc.cert, sc.cfg, sc.xhat0);
    Vector x = sc.x0, z = sc.xhat0;
    for (int t = 0; t < 60; ++t) {
        const Vector y = output(sc.model, x, kNoInput, vec({0.003 * std::cos(t)}));
        const EstimateRecord rec = est.step(kNoInput, y);
        CHECK(rec.fallback);
        REQUIRE(rec.xhat == z);
        z = observer_step(sc.observer, t, z, kNoInput, y);
        x = step_system(sc.model, x, kNoInput, Vector::Zero(2));
    }
}

TEST_CASE("estimator is deterministic and stays in Z") {
    const Scenario sc = fixture::benchmark_scenario(1e-3, 16, 1);
    MovingHorizonEstimator a(sc.model, sc.observer, sc.cert, sc.cfg, sc.xhat0);
    MovingHorizonEstimator b(sc.model, sc.observer, sc.cert, sc.cfg, sc.xhat0);
    Vector x = sc.x0;
    for (int t = 0; t < 40; ++t) {
        const Vector y = output(sc.model, x, kNoInput, vec({0.005 * std::sin(1.7 * t)}));
        const EstimateRecord ra = a.step(kNoInput, y);
        const EstimateRecord rb = b.step(kNoInput, y);
        CHECK(ra.xhat == rb.xhat);
        CHECK(ra.horizon == std::min(t, 16));
        CHECK(sc.observer.contains(ra.xhat));
        CHECK(ra.cost <= ra.candidate_cost);
        x = step_system(sc.model, x, kNoInput, vec({1e-3, 1e-3}));
    }
}

TEST_CASE("estimator rejects bad construction") {
    const Scenario sc = fixture::benchmark_scenario(1e-3, 16, 1);
    CHECK_THROWS_AS(MovingHorizonEstimator(sc.model, sc.observer, sc.cert, sc.cfg, vec({0.0, 1.0})),
                    PreconditionError);
    MheConfig bad = sc.cfg;
    bad.M = 0;
    CHECK_THROWS_AS(MovingHorizonEstimator(sc.model, sc.observer, sc.cert, bad, sc.xhat0), ConfigError);
    bad = sc.cfg;
    bad.candidate_mode = CandidateMode::Reinit;
    bad.T = 4;
    CHECK_THROWS_AS(MovingHorizonEstimator(sc.model, sc.observer, sc.cert, bad, sc.xhat0), ConfigError);
    MovingHorizonEstimator est(sc.model, sc.observer, sc.cert, sc.cfg, sc.xhat0);
    CHECK_THROWS_AS(est.step(kNoInput, vec({1.0, 2.0})), ConfigError);
}

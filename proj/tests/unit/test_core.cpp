#include "doctest.h"

#include "obsmhe/core.hpp"
#include "obsmhe/rng.hpp"

#include <random>

using namespace obsmhe;

TEST_CASE("box rejects empty intervals") {
    CHECK_THROWS_AS(Box(vec({1.0}), vec({0.0})), ConfigError);
    CHECK_THROWS_AS(Box(vec({0.0, 0.0}), vec({1.0})), ConfigError);
    CHECK_NOTHROW(Box(vec({1.0}), vec({1.0})));
}

TEST_CASE("box clamp is idempotent and the identity inside") {
    const Box box(vec({0.1, -kInf}), vec({6.0, kInf}));
    const Vector inside = vec({3.0, -100.0});
    CHECK(box.project(inside) == inside);
    const Vector p = box.project(vec({-2.0, 7.0}));
    CHECK(p == vec({0.1, 7.0}));
    CHECK(box.project(p) == p);
}

TEST_CASE("metric projection on the benchmark box matches the hand solution") {
    const Matrix P = (Matrix(2, 2) << 1.537, 1.380, 1.380, 1.254).finished();
    const Box box(vec({0.1, -kInf}), vec({6.0, kInf}));
    // Only z1 is constrained: z1 goes to the bound and z2 minimizes the
    // quadratic for that z1, i.e. moves by -P21/P22 times the z1 change.
    const Vector z = vec({-0.4, 2.0});
    const Vector p = project_in_metric(box, z, P);
    CHECK(p[0] == 0.1);
    CHECK(p[1] == doctest::Approx(2.0 - 1.380 / 1.254 * 0.5).epsilon(1e-14));

    const Vector hi = project_in_metric(box, vec({7.0, 0.0}), P);
    CHECK(hi[0] == 6.0);
    CHECK(hi[1] == doctest::Approx(1.380 / 1.254).epsilon(1e-14));

    CHECK(project_in_metric(box, p, P) == p);
    const Vector inside = vec({2.0, 3.0});
    CHECK(project_in_metric(box, inside, P) == inside);
    CHECK(project_in_metric(box, z, Matrix()) == box.project(z));
}

namespace {

// Projected gradient descent on 0.5 (y - x)' S (y - x) over the box; slow but
// independent of the active-set solver.
Vector projected_gradient_oracle(const Box& box, const Vector& x, const Matrix& S) {
    const double step = 1.0 / Eigen::SelfAdjointEigenSolver<Matrix>(S).eigenvalues().maxCoeff();
    Vector y = box.project(x);
    for (int k = 0; k < 200000; ++k) {
        const Vector next = box.project(y - step * S * (y - x));
        if ((next - y).norm() < 1e-15) break;
        y = next;
    }
    return y;
}

}  // namespace

TEST_CASE("metric projection agrees with a projected-gradient oracle in 3-D") {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    const Box box(vec({-1.0, -0.5, -kInf}), vec({1.0, 0.5, 2.0}));
    for (int trial = 0; trial < 30; ++trial) {
        Matrix A(3, 3);
        for (Eigen::Index i = 0; i < 9; ++i) A.data()[i] = u(gen);
        const Matrix S = A * A.transpose() + 0.5 * Matrix::Identity(3, 3);
        const Vector x = vec({u(gen), u(gen), u(gen)});
        const Vector got = project_in_metric(box, x, S);
        const Vector want = projected_gradient_oracle(box, x, S);
        CHECK(box.contains(got));
        CHECK((got - want).norm() < 1e-7);
        CHECK(project_in_metric(box, got, S) == got);
    }
}

TEST_CASE("metric projection never increases the distance to a point of the box") {
    const Matrix P = (Matrix(2, 2) << 1.537, 1.380, 1.380, 1.254).finished();
    const Box box(vec({0.1, -kInf}), vec({6.0, kInf}));
    const CounterRng rng(3, 0);
    std::uint64_t c = 0;
    for (int k = 0; k < 2000; ++k) {
        const Vector z = vec({rng.uniform(c++, -5.0, 12.0), rng.uniform(c++, -10.0, 10.0)});
        const Vector x = vec({rng.uniform(c++, 0.1, 6.0), rng.uniform(c++, -10.0, 10.0)});
        const Vector p = project_in_metric(box, z, P);
        CHECK(weighted_sq_norm(p - x, P) <= weighted_sq_norm(z - x, P) * (1.0 + 1e-12));
    }
}

TEST_CASE("projection jacobian matches finite differences off the kinks") {
    const Matrix P = (Matrix(2, 2) << 1.537, 1.380, 1.380, 1.254).finished();
    const Box box(vec({0.1, -kInf}), vec({6.0, kInf}));
    for (const Vector& z : {vec({-1.0, 2.0}), vec({8.0, -3.0}), vec({2.0, 1.0})}) {
        const Matrix J = projection_jacobian(box, z, P);
        for (Eigen::Index k = 0; k < 2; ++k) {
            Vector zp = z, zm = z;
            zp[k] += 1e-6;
            zm[k] -= 1e-6;
            const Vector fd = (project_in_metric(box, zp, P) - project_in_metric(box, zm, P)) / 2e-6;
            CHECK((J.col(k) - fd).norm() < 1e-8);
        }
    }
}

TEST_CASE("counter rng is a pure function of seed, stream and counter") {
    const CounterRng a(42, 1), b(42, 1), c(42, 2), d(43, 1);
    for (std::uint64_t k = 0; k < 100; ++k) {
        CHECK(a.bits(k) == b.bits(k));
        const double x = a.uniform01(k);
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
    CHECK(a.bits(0) != c.bits(0));
    CHECK(a.bits(0) != d.bits(0));
    CHECK(a.uniform(5, 2.0, 2.0) == 2.0);
}

TEST_CASE("counter rng uniforms have the right first two moments") {
    const CounterRng rng(0, 9);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int k = 0; k < n; ++k) {
        const double x = rng.uniform(static_cast<std::uint64_t>(k), -1.0, 1.0);
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(sq / n == doctest::Approx(1.0 / 3.0).epsilon(0.01));
}

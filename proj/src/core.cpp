#include "obsmhe/core.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace obsmhe {

Box::Box(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size()) {
        throw ConfigError("box: lower and upper bounds differ in dimension");
    }
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
        if (std::isnan(lower[i]) || std::isnan(upper[i]) || lower[i] > upper[i]) {
            throw ConfigError("box: empty interval in coordinate " + std::to_string(i));
        }
    }
}

Box Box::unbounded(Eigen::Index dim) {
    return Box(Vector::Constant(dim, -kInf), Vector::Constant(dim, kInf));
}

Box Box::symmetric(const Vector& half_width) { return Box(-half_width, half_width); }

bool Box::contains(const Vector& x) const {
    if (x.size() != dim()) return false;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
    }
    return true;
}

bool Box::is_finite() const { return lower.allFinite() && upper.allFinite(); }

Vector Box::project(const Vector& x) const {
    require_dim(x, dim(), "box projection");
    Vector out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i], lower[i], upper[i]);
    return out;
}

namespace {

// Bound status per coordinate: -1 at lower, +1 at upper, 0 free.
struct ActiveSet {
    std::vector<int> status;
    Vector point;
};

std::vector<Eigen::Index> indices_where(const std::vector<int>& status, bool active) {
    std::vector<Eigen::Index> out;
    for (std::size_t i = 0; i < status.size(); ++i) {
        if ((status[i] != 0) == active) out.push_back(static_cast<Eigen::Index>(i));
    }
    return out;
}

Matrix submatrix(const Matrix& m, const std::vector<Eigen::Index>& rows, const std::vector<Eigen::Index>& cols) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
    }
    return out;
}

ActiveSet solve_active_set(const Box& box, const Vector& x, const Matrix& s) {
    const Eigen::Index n = x.size();
    if (s.rows() != n || s.cols() != n) throw ConfigError("box projection: metric has wrong dimension");
    ActiveSet as;
    as.status.assign(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (x[i] < box.lower[i]) as.status[i] = -1;
        if (x[i] > box.upper[i]) as.status[i] = 1;
    }
    for (int iter = 0; iter < 4 * static_cast<int>(n) + 8; ++iter) {
        const auto act = indices_where(as.status, true);
        const auto free = indices_where(as.status, false);
        Vector d = Vector::Zero(n);
        for (Eigen::Index i : act) d[i] = (as.status[i] < 0 ? box.lower[i] : box.upper[i]) - x[i];
        if (!act.empty() && !free.empty()) {
            Vector d_act(static_cast<Eigen::Index>(act.size()));
            for (std::size_t k = 0; k < act.size(); ++k) d_act[k] = d[act[k]];
            const Vector d_free = -submatrix(s, free, free).ldlt().solve(submatrix(s, free, act) * d_act);
            for (std::size_t k = 0; k < free.size(); ++k) d[free[k]] = d_free[k];
        }
        bool changed = false;
        for (Eigen::Index i : free) {
            const double zi = x[i] + d[i];
            if (zi < box.lower[i]) as.status[i] = -1, changed = true;
            if (zi > box.upper[i]) as.status[i] = 1, changed = true;
        }
        if (changed) continue;
        // Release the active bound with the most negative multiplier, if any.
        const Vector grad = s * d;
        Eigen::Index worst = -1;
        double worst_mu = -1e-14 * (1.0 + grad.cwiseAbs().maxCoeff());
        for (Eigen::Index i : act) {
            const double mu = as.status[i] < 0 ? grad[i] : -grad[i];
            if (mu < worst_mu) worst_mu = mu, worst = i;
        }
        if (worst < 0) {
            as.point = x + d;
            for (Eigen::Index i : act) as.point[i] = as.status[i] < 0 ? box.lower[i] : box.upper[i];
            return as;
        }
        as.status[worst] = 0;
    }
    throw MatrixError("box projection: active-set iteration did not settle; is the metric positive definite?");
}

}  // namespace

Vector project_in_metric(const Box& box, const Vector& x, const Matrix& metric) {
    if (metric.size() == 0 || box.contains(x)) return box.project(x);
    require_dim(x, box.dim(), "box projection");
    return solve_active_set(box, x, metric).point;
}

Matrix projection_jacobian(const Box& box, const Vector& x, const Matrix& metric) {
    require_dim(x, box.dim(), "box projection");
    const Eigen::Index n = x.size();
    Matrix jac = Matrix::Identity(n, n);
    if (box.contains(x)) return jac;
    if (metric.size() == 0) {
        for (Eigen::Index i = 0; i < n; ++i) {
            if (x[i] < box.lower[i] || x[i] > box.upper[i]) jac(i, i) = 0.0;
        }
        return jac;
    }
    const ActiveSet as = solve_active_set(box, x, metric);
    const auto act = indices_where(as.status, true);
    const auto free = indices_where(as.status, false);
    // z_free = x_free - S_ff^{-1} S_fa (b_a - x_a)
    Matrix coupling;
    if (!act.empty() && !free.empty()) {
        coupling = submatrix(metric, free, free).ldlt().solve(submatrix(metric, free, act));
    }
    for (Eigen::Index i : act) jac(i, i) = 0.0;
    for (std::size_t k = 0; k < free.size(); ++k) {
        for (std::size_t l = 0; l < act.size(); ++l) jac(free[k], act[l]) = coupling(k, l);
    }
    return jac;
}

void require_dim(const Vector& v, Eigen::Index dim, const char* what) {
    if (v.size() != dim) {
        throw ConfigError(std::string(what) + ": expected dimension " + std::to_string(dim) +
                          ", got " + std::to_string(v.size()));
    }
}

}  // namespace obsmhe

#include "obsmhe/model.hpp"

#include "obsmhe/rng.hpp"

#include <algorithm>
#include <cmath>

namespace obsmhe {

namespace {

constexpr double kFdStep = 1e-6;

template <typename F>
Matrix central_difference(F&& fn, const Vector& x) {
    const Vector f0 = fn(x);
    Matrix jac(f0.size(), x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        Vector xp = x;
        Vector xm = x;
        const double h = kFdStep * std::max(1.0, std::abs(x[k]));
        xp[k] += h;
        xm[k] -= h;
        jac.col(k) = (fn(xp) - fn(xm)) / (2.0 * h);
    }
    return jac;
}

void require_box(const Box& box, Eigen::Index dim, const char* what) {
    if (box.dim() != dim) {
        throw ConfigError(std::string(what) + ": box has dimension " + std::to_string(box.dim()) +
                          ", expected " + std::to_string(dim));
    }
}

}  // namespace

Vector SystemModel::nominal_step(const Vector& x, const Vector& u) const {
    return dynamics(x, u, Vector::Zero(proc_dist_dim));
}

Vector SystemModel::nominal_output(const Vector& x, const Vector& u) const {
    return output_map(x, u, Vector::Zero(meas_noise_dim));
}

Matrix SystemModel::nominal_output_jacobian(const Vector& x, const Vector& u) const {
    if (output_jacobian) return output_jacobian(x, u);
    return central_difference([&](const Vector& xx) { return nominal_output(xx, u); }, x);
}

Matrix SystemModel::nominal_dynamics_jacobian(const Vector& x, const Vector& u) const {
    if (dynamics_jacobian) return dynamics_jacobian(x, u);
    return central_difference([&](const Vector& xx) { return nominal_step(xx, u); }, x);
}

void SystemModel::validate() const {
    if (state_dim <= 0) throw ConfigError("system model: state dimension must be positive");
    if (output_dim <= 0) throw ConfigError("system model: output dimension must be positive");
    if (!dynamics || !output_map) throw ConfigError("system model: dynamics and output maps are required");
    require_box(state_box, state_dim, "system model state box");
    require_box(input_box, input_dim, "system model input box");
    require_box(dist_box, proc_dist_dim, "system model disturbance box");
    require_box(noise_box, meas_noise_dim, "system model noise box");
    if (!(lipschitz_h > 0.0)) throw ConfigError("system model: lipschitz_h must be positive");
}

Matrix AuxObserver::projected_jacobian(std::int64_t t, const Vector& z, const Vector& u,
                                       const Vector& y) const {
    Matrix jac = state_jacobian
                     ? state_jacobian(t, z, u, y)
                     : central_difference([&](const Vector& zz) { return map(t, zz, u, y); }, z);
    return projection_jacobian(domain, map(t, z, u, y), metric) * jac;
}

Vector step_system(const SystemModel& model, const Vector& x, const Vector& u, const Vector& w) {
    require_dim(x, model.state_dim, "step_system state");
    require_dim(u, model.input_dim, "step_system input");
    require_dim(w, model.proc_dist_dim, "step_system disturbance");
    return model.dynamics(x, u, w);
}

Vector output(const SystemModel& model, const Vector& x, const Vector& u, const Vector& v) {
    require_dim(x, model.state_dim, "output state");
    require_dim(u, model.input_dim, "output input");
    require_dim(v, model.meas_noise_dim, "output noise");
    return model.output_map(x, u, v);
}

Vector observer_step(const AuxObserver& obs, std::int64_t t, const Vector& z, const Vector& u,
                     const Vector& y) {
    if (!obs.contains(z)) throw PreconditionError("observer_step: observer state outside Z");
    return obs.project(obs.map(t, z, u, y));
}

double estimate_lipschitz(const SystemModel& model, int sample_count, std::uint64_t seed) {
    if (sample_count < 2) throw SamplingError("estimate_lipschitz: sample_count must be at least 2");
    for (const Box* box : {&model.state_box, &model.input_box, &model.noise_box}) {
        if (!box->is_finite()) throw ConfigError("estimate_lipschitz: sampling boxes must be finite");
    }
    const CounterRng rng(seed, /*stream=*/0x11b5);
    const Eigen::Index per_point = model.state_dim + model.input_dim + model.meas_noise_dim;
    std::uint64_t counter = 0;
    auto draw = [&](const Box& box) {
        Vector out(box.dim());
        for (Eigen::Index i = 0; i < box.dim(); ++i) out[i] = rng.uniform(counter++, box.lower[i], box.upper[i]);
        return out;
    };

    double best = 0.0;
    int used = 0;
    for (int s = 0; s < sample_count; ++s) {
        counter = static_cast<std::uint64_t>(s) * static_cast<std::uint64_t>(2 * per_point);
        const Vector x = draw(model.state_box), u = draw(model.input_box), v = draw(model.noise_box);
        const Vector xb = draw(model.state_box), ub = draw(model.input_box), vb = draw(model.noise_box);
        const double denom = (x - xb).norm() + (u - ub).norm() + (v - vb).norm();
        if (denom == 0.0) continue;
        const double num = (model.output_map(x, u, v) - model.output_map(xb, ub, vb)).norm();
        best = std::max(best, num / denom);
        ++used;
    }
    if (used == 0) throw SamplingError("estimate_lipschitz: every sampled pair was degenerate");
    return best;
}

AuxObserver make_luenberger_observer(const SystemModel& model, const Matrix& gain, const Box& domain,
                                     const Box& sample_box, const Matrix& metric) {
    model.validate();
    if (gain.rows() != model.state_dim || gain.cols() != model.output_dim) {
        throw ConfigError("luenberger observer: gain must be n x p");
    }
    require_box(domain, model.state_dim, "observer domain");
    require_box(sample_box, model.state_dim, "observer sample box");

    AuxObserver obs;
    obs.state_dim = model.state_dim;
    obs.domain = domain;
    obs.sample_box = sample_box;
    if (metric.size() != 0 && (metric.rows() != model.state_dim || metric.cols() != model.state_dim)) {
        throw ConfigError("luenberger observer: projection metric must be n x n");
    }
    obs.metric = metric;
    obs.map = [model, gain](std::int64_t, const Vector& z, const Vector& u, const Vector& y) -> Vector {
        return model.nominal_step(z, u) + gain * (model.nominal_output(z, u) - y);
    };
    obs.state_jacobian = [model, gain](std::int64_t, const Vector& z, const Vector& u, const Vector&) -> Matrix {
        return model.nominal_dynamics_jacobian(z, u) + gain * model.nominal_output_jacobian(z, u);
    };
    return obs;
}

SystemModel make_reactor_model(const ReactorParams& p) {
    SystemModel model;
    model.state_dim = 2;
    model.input_dim = 0;
    model.proc_dist_dim = 2;
    model.meas_noise_dim = 1;
    model.output_dim = 1;

    const double k1 = p.k1, k2 = p.k2, td = p.t_delta;
    model.dynamics = [k1, k2, td](const Vector& x, const Vector&, const Vector& w) -> Vector {
        Vector next(2);
        const double x1sq = x[0] * x[0];
        next[0] = x[0] + td * (-2.0 * k1 * x1sq + 2.0 * k2 * x[1]) + w[0];
        next[1] = x[1] + td * (k1 * x1sq - k2 * x[1]) + w[1];
        return next;
    };
    model.output_map = [](const Vector& x, const Vector&, const Vector& v) -> Vector {
        Vector y(1);
        y[0] = x[0] + x[1] + v[0];
        return y;
    };
    model.dynamics_jacobian = [k1, k2, td](const Vector& x, const Vector&) -> Matrix {
        Matrix jac(2, 2);
        jac << 1.0 - 4.0 * td * k1 * x[0], 2.0 * td * k2,
               2.0 * td * k1 * x[0], 1.0 - td * k2;
        return jac;
    };
    model.output_jacobian = [](const Vector&, const Vector&) -> Matrix { return Matrix::Ones(1, 2); };

    model.state_box = p.state_box;
    model.input_box = Box(Vector(0), Vector(0));
    model.dist_box = Box::symmetric(p.w_bound);
    model.noise_box = Box::symmetric(Vector::Constant(1, p.v_bound));
    model.lipschitz_h = p.lipschitz_h;
    model.validate();
    return model;
}

AuxObserver make_reactor_observer(const SystemModel& model, const ReactorParams& p) {
    return make_luenberger_observer(model, Matrix(p.gain), p.observer_box, p.observer_sample_box,
                                    p.projection_metric);
}

}  // namespace obsmhe

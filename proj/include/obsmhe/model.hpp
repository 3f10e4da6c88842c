#pragma once

#include "obsmhe/core.hpp"

#include <cstdint>
#include <functional>

namespace obsmhe {

/// Perturbed discrete-time system x+ = f(x, u, w), y = h(x, u, v).
///
/// The nominal maps are the disturbance-free evaluations f(x, u, 0) and
/// h(x, u, 0). Jacobians of the nominal maps are optional; when absent,
/// consumers fall back to central differences.
struct SystemModel {
    using Dynamics = std::function<Vector(const Vector& x, const Vector& u, const Vector& w)>;
    using Output = std::function<Vector(const Vector& x, const Vector& u, const Vector& v)>;
    using NominalJacobian = std::function<Matrix(const Vector& x, const Vector& u)>;

    Eigen::Index state_dim = 0;
    Eigen::Index input_dim = 0;
    Eigen::Index proc_dist_dim = 0;
    Eigen::Index meas_noise_dim = 0;
    Eigen::Index output_dim = 0;

    Dynamics dynamics;
    Output output_map;
    NominalJacobian dynamics_jacobian;  // d f_n / dx, optional
    NominalJacobian output_jacobian;    // d h_n / dx, optional

    Box state_box;
    Box input_box;
    Box dist_box;
    Box noise_box;

    double lipschitz_h = 0.0;

    Vector nominal_step(const Vector& x, const Vector& u) const;
    Vector nominal_output(const Vector& x, const Vector& u) const;
    Matrix nominal_output_jacobian(const Vector& x, const Vector& u) const;
    Matrix nominal_dynamics_jacobian(const Vector& x, const Vector& u) const;

    /// Throws ConfigError on missing maps or inconsistent box dimensions.
    void validate() const;
};

/// Auxiliary observer z+ = g_t(z, u, y) on the admissible set Z (a box).
///
/// `map` is the raw observer map; observer_step composes it with the box
/// projection so that Z is invariant by construction.
struct AuxObserver {
    using Map = std::function<Vector(std::int64_t t, const Vector& z, const Vector& u, const Vector& y)>;
    using Jacobian = std::function<Matrix(std::int64_t t, const Vector& z, const Vector& u, const Vector& y)>;

    Eigen::Index state_dim = 0;
    Map map;
    Jacobian state_jacobian;  // d g / dz of the raw map, optional
    Box domain;
    // Finite box used when Z itself is sampled (Z may be unbounded).
    Box sample_box;
    // Metric of the projection onto Z; empty means the Euclidean clamp. With
    // the certificate's P the projection cannot increase ||z - x||_P for x in Z.
    Matrix metric;

    Vector project(const Vector& z) const { return project_in_metric(domain, z, metric); }
    bool contains(const Vector& z) const { return domain.contains(z); }

    /// Jacobian of the projected map.
    Matrix projected_jacobian(std::int64_t t, const Vector& z, const Vector& u, const Vector& y) const;
};

Vector step_system(const SystemModel& model, const Vector& x, const Vector& u, const Vector& w);
Vector output(const SystemModel& model, const Vector& x, const Vector& u, const Vector& v);

/// project(g_t(z, u, y)); z must lie in Z.
Vector observer_step(const AuxObserver& obs, std::int64_t t, const Vector& z, const Vector& u,
                     const Vector& y);

/// Largest sampled ratio ||h(x,u,v) - h(x',u',v')|| / (||dx|| + ||du|| + ||dv||).
/// A lower bound on the Lipschitz constant of h over the model's boxes.
double estimate_lipschitz(const SystemModel& model, int sample_count, std::uint64_t seed);

/// Luenberger observer g(z, u, y) = f_n(z, u) + L (h_n(z, u) - y).
AuxObserver make_luenberger_observer(const SystemModel& model, const Matrix& gain, const Box& domain,
                                     const Box& sample_box, const Matrix& metric = Matrix());

// ---------------------------------------------------------------------------
// Chemical reactor benchmark (two species, explicit Euler discretization).

struct ReactorParams {
    double k1 = 0.16;
    double k2 = 0.0064;
    double t_delta = 0.1;
    Vector x0 = vec({3.0, 1.0});
    Vector xhat0 = vec({0.1, 4.5});
    Vector w_bound = Vector::Constant(2, 2e-3);
    double v_bound = 1e-2;
    Vector gain = vec({7.999, -9.997});
    Box observer_box = Box(vec({0.1, -kInf}), vec({6.0, kInf}));
    Box observer_sample_box = Box(vec({0.1, 0.0}), vec({6.0, 6.0}));
    Box state_box = Box(vec({0.1, 0.0}), vec({6.0, 6.0}));
    // Projection onto Z is taken in the certificate metric.
    Matrix projection_metric = (Matrix(2, 2) << 1.537, 1.380, 1.380, 1.254).finished();
    // Tight constant of y = x1 + x2 + v w.r.t. ||dx|| + ||dv||.
    double lipschitz_h = 1.4142135623730951;
};

SystemModel make_reactor_model(const ReactorParams& params = {});
AuxObserver make_reactor_observer(const SystemModel& model, const ReactorParams& params = {});

}  // namespace obsmhe

#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>

namespace obsmhe {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

// Error taxonomy. Every library failure is one of these.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (dimensions, weights, ranges).
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// A caller violated an operation precondition (e.g. observer state outside Z).
class PreconditionError : public Error {
  public:
    using Error::Error;
};

/// Random sampling produced no usable data.
class SamplingError : public Error {
  public:
    using Error::Error;
};

/// Matrix argument lacks a required property (symmetry, definiteness).
class MatrixError : public Error {
  public:
    using Error::Error;
};

/// No horizon length below the scan cap satisfies the contraction condition.
class CertificationError : public Error {
  public:
    CertificationError(const std::string& what, double gamma_at_cap)
        : Error(what), gamma_at_cap_(gamma_at_cap) {}
    double gamma_at_cap() const noexcept { return gamma_at_cap_; }

  private:
    double gamma_at_cap_;
};

/// A simulation trace lacks fields or has inconsistent lengths.
class TraceSchemaError : public Error {
  public:
    using Error::Error;
};

class UnsupportedCertificateError : public Error {
  public:
    using Error::Error;
};

/// Axis-aligned box with possibly infinite bounds.
struct Box {
    Vector lower;
    Vector upper;

    Box() = default;
    Box(Vector lo, Vector hi);

    static Box unbounded(Eigen::Index dim);
    static Box symmetric(const Vector& half_width);

    Eigen::Index dim() const { return lower.size(); }
    bool contains(const Vector& x) const;
    bool is_finite() const;
    Vector project(const Vector& x) const;
};

/// Closest point of `box` to x in the norm ||.||_S, S symmetric positive
/// definite. An empty S means the Euclidean clamp. Solved exactly by a primal
/// active-set iteration (the boxes here have few constrained coordinates).
Vector project_in_metric(const Box& box, const Vector& x, const Matrix& metric);

/// Jacobian of project_in_metric at x (piecewise constant in x).
Matrix projection_jacobian(const Box& box, const Vector& x, const Matrix& metric);

void require_dim(const Vector& v, Eigen::Index dim, const char* what);

/// ||x||_A^2 = x' A x
inline double weighted_sq_norm(const Vector& x, const Matrix& a) { return x.dot(a * x); }

}  // namespace obsmhe

#ifndef CCGEO_BOUNDARY_HPP_
#define CCGEO_BOUNDARY_HPP_

#include <string>
#include <vector>

#include "ccgeo/ccmetric.hpp"
#include "ccgeo/hormander.hpp"

namespace ccgeo {

struct BoundaryDegreeReport {
  Point point;
  int deg = 0;
  CommutatorEntry witness;
  bool locally_constant = false;
  bool noncharacteristic = false;
  // Some generator of degree deg is transversal at the point.
  bool generator_transversal = false;
};

/// Minimal degree of a commutator (length <= m) transversal to {x_n = 0} at
/// x'. Local constancy is probed on an (n-1)-grid of the given radius.
/// Throws GeometryError if every entry is tangent.
BoundaryDegreeReport deg_boundary(const WeightedSystem& sys, std::span<const double> x, int m,
                                  double probe_radius = 0.05);

struct BoundaryField {
  VField field;
  int degree = 1;
  std::string origin;  // bracket word of the Z entry
  Expr b;              // coefficient of X_0 removed from Z
  bool zero = false;
};

struct BoundarySystem {
  Point x0;
  int order = 0;  // Hormander order m used for Z
  int deg = 0;
  int j0 = 0;  // index of the distinguished generator
  VField X0;
  int d0 = 1;
  std::vector<BoundaryField> X;  // tangent to the boundary on the boundary
  std::vector<BoundaryField> V;  // dimension n-1
  // Box on the boundary (first n-1 coordinates) where X_0 stays transversal.
  Point box_lower, box_upper;
  double radius = 0;
  // Chart box of the ambient system.
  Point chart_lower, chart_upper;

  int dim() const { return X0.dim(); }
  /// (V, d_V) on box_lower..box_upper, zero fields dropped.
  WeightedSystem v_system() const;
  /// (X_0, d_0) followed by the nonzero X_j, on the ambient chart.
  WeightedSystem x_system(const WeightedSystem& base) const;
  /// Scenario-format text of the V system.
  std::string to_scenario(const std::string& name) const;
};

/// Boundary procedure at a non-characteristic x0 (see README for the
/// numeric choices). Throws GeometryError at characteristic points.
BoundarySystem build_boundary_system(const WeightedSystem& sys, std::span<const double> x0, int m);

/// Largest over the boundary grid of |n-th component of X_j| (j >= 1).
double tangency_residual(const BoundarySystem& bsys, int per_axis = 9);
/// Smallest over the boundary grid of the largest (n-1)-minor of {V_j}.
double boundary_span_floor(const BoundarySystem& bsys, int per_axis = 9);
/// Largest relative residual of [V_j,V_k](x') against span{V_l : d_l <= d_j + d_k}.
double bracket_closure_residual(const BoundarySystem& bsys, int per_axis = 5);

/// CC distance of (V, d_V) between boundary points, given either with n
/// coordinates (x_n = 0) or with the n-1 boundary coordinates.
MetricEstimate boundary_metric(const BoundarySystem& bsys, std::span<const double> x,
                               std::span<const double> y, double tol,
                               const ShootingOptions& opt = ShootingOptions{});

/// Points of the (n-1)-dimensional grid lo..hi, returned with x_n = 0
/// appended when `with_normal`.
std::vector<Point> boundary_grid(const Point& lo, const Point& hi, int per_axis, bool with_normal);

}  // namespace ccgeo

#endif  // CCGEO_BOUNDARY_HPP_

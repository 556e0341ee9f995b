#ifndef CCGEO_SCALING_HPP_
#define CCGEO_SCALING_HPP_

#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ccgeo/boundary.hpp"
#include "ccgeo/ccmetric.hpp"

namespace ccgeo {

struct LambdaReport {
  Point x;
  double delta = 0;
  double value = 0;
  std::vector<int> argmax;  // indices into build_Z_system(sys, m)
  std::vector<std::pair<std::vector<int>, double>> table;
};

/// Density-weighted max |det| of delta^{d} scaled n-subsets of the Z system.
/// Throws GeometryError when the order-m certificate at x is invalid.
LambdaReport compute_lambda(const WeightedSystem& sys, std::span<const double> x, double delta, int m);

/// Lambda(x, 2 delta) / Lambda(x, delta); never above 2^{n m max d}.
double doubling_ratio(const WeightedSystem& sys, std::span<const double> x, double delta, int m);

struct BasisChoice {
  std::vector<int> slots;  // candidate indices; the distinguished one last
  double det = 0;
  double max_det = 0;
};

/// An n-subset of the candidates with |det| >= zeta * max. With
/// distinguished >= 0 only subsets containing it are used and it goes to the
/// last slot. A previous choice is kept while it still qualifies.
BasisChoice select_basis(const std::vector<WeightedField>& candidates, std::span<const double> x,
                         double delta, double zeta, int distinguished = -1,
                         const std::vector<int>* previous = nullptr);

struct ScalingConfig {
  double zeta = 0.75;
  double sigma = 0;  // cube half-width in t; 0 means 1/(2 sqrt n)
  int flow_steps = 64;
  double delta_cap = 0.5;
  double fd_step = 1e-5;
  double bracket_step = 1e-3;
  int order = 0;  // Hormander order for the Z system; 0 means minimal at the point
  int touch_samples = 400;

  double sigma_for(int n) const;
};

/// psi(t) = exp(t_n w delta^{d_0} X_0) exp(sum_{k<n} t_k delta^{d_k} X_{j_k}) x0
/// near the boundary (x0 the boundary point below the base), or
/// exp(sum_k t_k delta^{d_k} Z_{j_k}) base in the interior. The unit-cube map
/// is Psi(s) = psi(tau + sigma s) with psi(tau) = base.
class ScalingMap {
 public:
  ScalingMap(const WeightedSystem& sys, const BoundarySystem* bsys, std::span<const double> base,
             double delta, const ScalingConfig& cfg, const std::vector<int>* previous = nullptr);

  int dim() const noexcept { return n_; }
  const Point& base() const noexcept { return base_; }
  const Point& anchor() const noexcept { return anchor_; }
  double delta() const noexcept { return delta_; }
  double sigma() const noexcept { return sigma_; }
  double c0() const noexcept { return c0_; }
  int omega() const noexcept { return omega_; }
  bool near_boundary() const noexcept { return near_; }
  const Point& tau() const noexcept { return tau_; }
  const BasisChoice& basis() const noexcept { return basis_; }
  const std::vector<WeightedField>& selected() const noexcept { return selected_; }
  const std::vector<WeightedField>& candidates() const noexcept { return candidates_; }

  Point psi(std::span<const double> t) const;
  Point Psi(std::span<const double> s) const;
  Point t_of(std::span<const double> s) const;
  /// Central-difference Jacobian of psi.
  Eigen::MatrixXd jacobian(std::span<const double> t) const;
  /// (d psi(t))^{-1} scale V(psi(t)). Throws GeometryError if singular.
  Eigen::VectorXd pullback(const VField& V, double scale, std::span<const double> t) const;
  /// Damped Newton for psi(t) = p from `start` (tau if empty).
  std::optional<Point> invert(std::span<const double> p, const Point& start = {}) const;
  std::optional<Point> invert_s(std::span<const double> p) const;

 private:
  int n_ = 0;
  Point base_, anchor_, tau_;
  double delta_ = 0, sigma_ = 0, c0_ = -1;
  int omega_ = 1;
  bool near_ = false;
  ScalingConfig cfg_;
  BasisChoice basis_;
  std::vector<WeightedField> candidates_, selected_;
  std::vector<double> scale_;
  std::shared_ptr<FieldBundle> bundle_;
  std::unique_ptr<Integrator> integ_;
};

/// Whether sampled extrinsic controls from x at delta reach x_n <= 0.
bool ball_touches_boundary(const WeightedSystem& sys, std::span<const double> x, double delta,
                           int samples, std::uint64_t seed = 1);

struct PullbackReport {
  double psi0_error = 0;
  double distinguished_residual = 0;  // near boundary only
  double tangential_normal = 0;       // near boundary with base on the boundary
  double identity_residual = 0;
  double density_min = 0, density_max = 0;
  bool injective = true;
};

/// Pullback checks on a grid of per_axis^n points of tau + sigma Q_{>= c0}.
PullbackReport check_pullbacks(const ScalingMap& map, const WeightedSystem& sys,
                               const BoundarySystem* bsys, int per_axis = 3);

using NumField = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// [A, B] = DB A - DA B by central differences.
NumField numeric_bracket(NumField a, NumField b, double h);

struct UniformSpanReport {
  double floor = 0;     // min over the grid of the max |det|
  double sup_norm = 0;  // max field magnitude over the grid
  Point argmin;
};

/// Pullbacks of delta^{d_j} W_j in unit-cube coordinates, bracketed
/// numerically up to length m, scanned on a per_axis^n grid.
UniformSpanReport uniform_span(const ScalingMap& map, const WeightedSystem& sys, int m,
                               int per_axis = 3);

struct SandwichOptions {
  double eta1 = 0.25;
  int outer_samples = 200;
  int inner_samples = 400;
  double outer_tol = 0.1;
  double pass_fraction = 0.99;
  std::vector<double> xi_ladder{0.5, 0.35, 0.25, 0.18, 0.125, 0.09, 0.0625, 0.044, 0.03125, 0.022, 0.0156, 0.011, 0.0078, 0.0055, 0.0039, 0.0028, 0.002};
  std::uint64_t seed = 1;
  int jobs = 1;
};

struct SandwichReport {
  double xi1 = 0;  // largest ladder value whose inner containment passes
  double eta1 = 0;
  double c0 = -1;
  bool outer_pass = false;
  double outer_fraction = 0;
  std::vector<Point> outer_failures;
  std::vector<std::pair<double, double>> inner_fractions;  // (xi, fraction)
  int newton_failures = 0;
  /// Inner pass fraction recorded at xi, or -1 if that rung was not tested.
  double inner_fraction_at(double xi) const;
};

SandwichReport verify_sandwich(const ScalingMap& map, const WeightedSystem& sys,
                               const SandwichOptions& opt = SandwichOptions{});

/// Inner containment fraction at one xi.
double sandwich_inner_fraction(const ScalingMap& map, const WeightedSystem& sys, double xi,
                               const SandwichOptions& opt, int* newton_failures = nullptr);

/// Smallest Hormander order at which the Z system spans at x (up to m_max).
int minimal_order(const WeightedSystem& sys, std::span<const double> x, int m_max = 6);

}  // namespace ccgeo

#endif  // CCGEO_SCALING_HPP_

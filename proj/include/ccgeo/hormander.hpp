#ifndef CCGEO_HORMANDER_HPP_
#define CCGEO_HORMANDER_HPP_

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccgeo/symexpr.hpp"

namespace ccgeo {

using Point = std::vector<double>;

/// Several vector fields compiled into one tape. eval() fills an n x q
/// column-major block (column j is field j).
class FieldBundle {
 public:
  FieldBundle() = default;
  FieldBundle(std::span<const VField> fields, int dim);

  int dim() const noexcept { return dim_; }
  int count() const noexcept { return count_; }
  std::size_t scratch_size() const noexcept { return tape_ ? tape_->scratch_size() : 0; }

  void eval(std::span<const double> p, double* out, std::span<double> scratch) const;
  Eigen::MatrixXd matrix(std::span<const double> p) const;

 private:
  int dim_ = 0;
  int count_ = 0;
  std::shared_ptr<const Tape> tape_;
};

struct WeightedField {
  VField field;
  int degree = 1;
};

/// Hörmander vector fields with formal degrees on a box chart, optionally
/// cut to the half-space x_n >= 0.
class WeightedSystem {
 public:
  WeightedSystem() = default;
  /// Validates degrees, dimensions and the density (positive on a grid).
  WeightedSystem(std::vector<WeightedField> fields, Point lower, Point upper,
                 bool has_boundary, Expr density = Expr(1.0));

  int dim() const noexcept { return dim_; }
  int size() const noexcept { return static_cast<int>(fields_.size()); }
  const std::vector<WeightedField>& fields() const noexcept { return fields_; }
  const VField& field(int j) const { return fields_[j].field; }
  int degree(int j) const { return fields_[j].degree; }
  int max_degree() const;
  int min_degree() const;
  const Point& lower() const noexcept { return lower_; }
  const Point& upper() const noexcept { return upper_; }
  bool has_boundary() const noexcept { return has_boundary_; }
  const Expr& density() const noexcept { return density_; }

  /// Inside the chart box; with a boundary also requires x_n >= -tol.
  bool contains(std::span<const double> p, double tol = 0.0) const;
  double density_at(std::span<const double> p) const;

  const FieldBundle& bundle() const noexcept { return *bundle_; }

  /// Same fields, density and flags on a different box.
  WeightedSystem with_box(Point lower, Point upper) const;
  /// Drops the boundary flag (the ambient extension used by extrinsic metrics).
  WeightedSystem ambient() const;

 private:
  int dim_ = 0;
  std::vector<WeightedField> fields_;
  Point lower_, upper_;
  bool has_boundary_ = false;
  Expr density_{1.0};
  std::shared_ptr<const FieldBundle> bundle_;
};

/// Iterated bracket [W_{a1},[W_{a2},[...,W_{ak}]]] of the generators.
struct CommutatorEntry {
  VField field;
  int degree = 0;
  std::vector<int> word;  // zero-based generator indices, right-nested
  bool zero = false;      // identically zero (structurally or at every probe)

  std::string word_string() const;  // one-based, e.g. "[1,[1,2]]"
};

/// All right-nested words of length <= m (innermost pair increasing, no
/// repeated innermost letter), ordered by length then lexicographically.
std::vector<CommutatorEntry> enumerate_commutators(const WeightedSystem& sys, int m);

/// Commutators of degree <= m * max d, without zero fields and without
/// duplicates up to sign. Always contains the generators first, in order.
std::vector<CommutatorEntry> build_Z_system(const WeightedSystem& sys, int m);

/// Treats a commutator list as a weighted system on the same chart.
WeightedSystem as_system(const std::vector<CommutatorEntry>& entries, const WeightedSystem& base);

struct HormanderCertificate {
  Point point;
  int order = 0;
  double gamma0 = 0.0;
  std::vector<int> witness;  // indices into the entry list
  bool valid = false;
};

enum class SpanStrategy { Auto, Exhaustive, Greedy };

/// Largest |det| over n-subsets of the non-zero entries evaluated at p.
HormanderCertificate check_span_at(const std::vector<CommutatorEntry>& entries,
                                   std::span<const double> p,
                                   SpanStrategy strategy = SpanStrategy::Auto);

/// Same scan on an explicit column matrix; returns (max |det|, argmax columns).
std::pair<double, std::vector<int>> max_minor(const Eigen::MatrixXd& columns,
                                              SpanStrategy strategy = SpanStrategy::Auto);

struct HormanderReport {
  bool ok = false;
  int order = 0;         // minimal working m, 0 if none
  double min_gamma0 = 0;  // over the grid, for the reported (or last tried) m
  Point argmin;
  std::vector<Point> failures;
};

HormanderReport check_hormander(const WeightedSystem& sys, int m_max,
                                const std::vector<Point>& grid);

/// Tensor grid with `per_axis` nodes per coordinate over the chart (the
/// half box when there is a boundary).
std::vector<Point> domain_grid(const WeightedSystem& sys, int per_axis);

}  // namespace ccgeo

#endif  // CCGEO_HORMANDER_HPP_

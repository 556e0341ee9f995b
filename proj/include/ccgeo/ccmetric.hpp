#ifndef CCGEO_CCMETRIC_HPP_
#define CCGEO_CCMETRIC_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ccgeo/flows.hpp"

namespace ccgeo {

/// Intrinsic paths must stay in x_n >= 0; extrinsic paths may use the
/// ambient box.
enum class Mode { Intrinsic, Extrinsic };

const char* mode_name(Mode mode);
Mode parse_mode(const std::string& text);

inline constexpr double kBoundaryTolerance = 1e-9;

/// Piecewise-constant control on [0,1] with K equal segments.
struct ControlPath {
  int segments = 1;
  int controls = 1;
  std::vector<double> a;  // segment-major, a[k * controls + j]

  ControlPath() = default;
  ControlPath(int segments, int controls);
  std::span<double> segment(int k) { return {a.data() + k * controls, static_cast<std::size_t>(controls)}; }
  std::span<const double> segment(int k) const {
    return {a.data() + k * controls, static_cast<std::size_t>(controls)};
  }
  /// max_k sum_j a_j(k)^2
  double peak_energy() const;
  bool admissible() const { return peak_energy() < 1.0; }
};

struct ControlResult {
  Point endpoint;
  bool feasible = false;
};

/// Integrates gamma' = sum_j a_j delta^{d_j} W_j(gamma). Throws GeometryError
/// for an inadmissible path; leaving the guard is reported as infeasible.
ControlResult integrate_control(const WeightedSystem& sys, std::span<const double> x, double delta,
                                const ControlPath& path, Mode mode,
                                const FlowConfig& cfg = FlowConfig{});

struct ReachSample {
  Point base;
  double delta = 0;
  int segments = 0;
  int samples = 0;
  std::uint64_t seed = 0;
  Mode mode = Mode::Intrinsic;
  std::vector<Point> endpoints;
  std::vector<bool> feasible;

  /// Per-axis [min, max] over feasible endpoints (the base point if none).
  std::pair<Point, Point> extents() const;
  std::string to_csv() const;
};

/// n_samples i.i.d. controls, each segment uniform in the 0.999-ball of R^r.
/// Deterministic in seed, independent of `jobs`.
ReachSample sample_ball(const WeightedSystem& sys, std::span<const double> x, double delta,
                        int n_samples, int segments, std::uint64_t seed, Mode mode,
                        int jobs = 1, const FlowConfig* cfg = nullptr);

struct MetricEstimate {
  double lower = 0;
  double upper = std::numeric_limits<double>::infinity();
  std::string method;
  bool converged = true;

  bool contains(double v) const { return lower <= v && v <= upper; }
  bool overlaps(const MetricEstimate& o) const { return lower <= o.upper && o.lower <= upper; }
  double mid() const { return std::isfinite(upper) ? 0.5 * (lower + upper) : lower; }
  std::string to_json(const std::string& params_json = "{}") const;
};

/// Cells of a grid anchored at `anchor` (cell centers at anchor + k*h) with
/// the earliest arrival time found for each, plus a representative point.
class ReachGrid {
 public:
  ReachGrid(Point anchor, Point spacing);

  std::int64_t key(std::span<const double> p) const;
  std::vector<int> cell_index(std::int64_t key) const;

  /// Arrival time of the cell, +inf if never reached.
  double time_of(std::int64_t k) const;
  double time_at(std::span<const double> p) const { return time_of(key(p)); }
  /// The cell of p, or one within `slack` cells (sup norm), has time <= budget.
  bool contains(std::span<const double> p, double budget = 1.0, int slack = 0) const;
  std::size_t size() const { return cells_.size(); }
  const Point& spacing() const noexcept { return spacing_; }
  const Point& anchor() const noexcept { return anchor_; }
  /// [lo, hi] of the union of cells with time <= budget.
  std::pair<Point, Point> bounds(double budget = 1.0) const;

  /// Lowers the arrival time; returns true if it improved.
  bool relax(std::int64_t k, double time);

 private:
  Point anchor_, spacing_;
  int bits_;
  std::unordered_map<std::int64_t, double> cells_;
};

struct OracleOptions {
  double resolution = 0.01;
  double delta_max = 4.0;
  double rel_width = 0.01;
  std::size_t max_cells = 2'000'000;
};

/// Unit control directions used for grid edges.
std::vector<std::vector<double>> control_directions(int r);

struct ReachRun {
  double target_time = std::numeric_limits<double>::infinity();
  double target_step = 0;  // duration of one cell-crossing edge at the target
  std::size_t expanded = 0;
  bool truncated = false;  // hit the cell cap
};

/// Earliest-arrival search (Dijkstra over grid cells) for the delta-scaled
/// system at unit control speed. Each edge flows one control direction for
/// the time needed to cross about `cells_per_edge` cells; only the earliest
/// point per cell is expanded, so short edges lose reach to pruning.
/// Nothing later than `budget` is reached. With a target the search stops
/// once the target cell is settled.
ReachGrid reach_search(const WeightedSystem& sys, std::span<const double> x, double delta,
                       Mode mode, const Point& anchor, const Point& spacing, double budget,
                       const Point* target, std::size_t max_cells, ReachRun* run,
                       int cells_per_edge = 3);

/// Grid oracle: upper = smallest delta (bisection) at which the target cell
/// is reached with one spare edge inside the unit budget; lower = largest
/// delta at which it is not reached within budget (1 + resolution) plus one
/// edge.
MetricEstimate oracle_distance(const WeightedSystem& sys, std::span<const double> x,
                               std::span<const double> y, Mode mode,
                               const OracleOptions& opt = OracleOptions{});

struct ShootingOptions {
  int segments = 32;
  int steps_per_unit = 256;
  int max_iterations = 60;
  int random_starts = 3;
  double delta_max = 4.0;
  std::uint64_t seed = 1;
};

/// Result of one fixed-delta shooting attempt.
struct ShotResult {
  bool success = false;
  double miss = 0;
  std::vector<double> v;  // unconstrained parameters, see control_from_params
  ControlPath path;
};

/// a = 0.999 tanh(|v|) v/|v| per segment.
ControlPath control_from_params(std::span<const double> v, int segments, int controls);

ShotResult shoot(const WeightedSystem& sys, std::span<const double> x, std::span<const double> y,
                 double delta, Mode mode, const ShootingOptions& opt,
                 const std::vector<double>* warm = nullptr);

/// Multi-start shooting with bracketing and bisection in delta. The interval
/// is [0.999 * largest failing delta, smallest succeeding delta]. Extrinsic
/// shots that fail are retried as intrinsic ones when both ends lie in x_n >= 0.
MetricEstimate cc_distance(const WeightedSystem& sys, std::span<const double> x,
                           std::span<const double> y, Mode mode, double tol,
                           const ShootingOptions& opt = ShootingOptions{});

struct VolumeEstimate {
  double volume = 0;
  double std_error = 0;
  double hit_fraction = 0;
  bool degenerate = false;
  Point box_lower, box_upper;
};

struct VolumeOptions {
  int reach_samples = 2000;
  int segments = 16;
  int cells_per_axis = 0;  // 0: 64 in 2D, 32 otherwise
  int jobs = 1;
};

/// Monte-Carlo volume (with density) of the ball, membership by grid reach.
VolumeEstimate ball_volume(const WeightedSystem& sys, std::span<const double> x, double delta,
                           Mode mode, int n_samples, std::uint64_t seed,
                           const VolumeOptions& opt = VolumeOptions{});

/// Reach grid of the ball at a spacing derived from its sampled extents.
ReachGrid ball_grid(const WeightedSystem& sys, std::span<const double> x, double delta, Mode mode,
                    int cells_per_axis, std::uint64_t seed, int jobs = 1);

/// splitmix64 mix of (seed, stream); used to derive independent RNG streams.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace ccgeo

#endif  // CCGEO_CCMETRIC_HPP_

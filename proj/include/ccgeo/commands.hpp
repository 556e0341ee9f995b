#ifndef CCGEO_COMMANDS_HPP_
#define CCGEO_COMMANDS_HPP_

#include <optional>
#include <string>
#include <vector>

#include "ccgeo/boundary.hpp"
#include "ccgeo/report.hpp"
#include "ccgeo/scaling.hpp"
#include "ccgeo/scenario.hpp"

namespace ccgeo {

enum ExitCode { kExitPass = 0, kExitUsage = 1, kExitFail = 2, kExitNumeric = 3 };

/// Command-line overrides; unset values fall back to the scenario.
struct CommandOptions {
  std::optional<Point> x, y;
  std::optional<double> delta;
  std::optional<int> samples;
  std::optional<std::uint64_t> seed;
  std::optional<Mode> mode;
  int jobs = 1;
  double tol = 0.01;
  int pairs = 0;  // 0: scenario value (regression.pairs) or the suite default
  std::vector<int> bracket;  // one-based generator indices
};

/// Hormander order used for Lambda and brackets: the scenario's `order`, or
/// the smallest m <= 4 that certifies the domain grid.
int scenario_order(const Scenario& sc);

Report cmd_dist(const Scenario& sc, const CommandOptions& opt);
Report cmd_ball(const Scenario& sc, const CommandOptions& opt);
Report cmd_volume(const Scenario& sc, const CommandOptions& opt);
Report cmd_scale(const Scenario& sc, const CommandOptions& opt);
/// Rows describe the boundary system; `text` receives the exported V-system scenario.
Report cmd_boundary(const Scenario& sc, const CommandOptions& opt, std::string* text = nullptr);
Report cmd_bracket(const Scenario& sc, const CommandOptions& opt);
Report cmd_check(const Scenario& sc, const CommandOptions& opt);

inline const std::vector<std::string> kSuites{"doubling", "volume", "sandwich", "boundary-metric",
                                              "equivalence", "topology"};

/// Runs one verification suite over the scenario's probes and delta ladder.
/// Throws ScenarioError for an unknown suite or one the scenario cannot support.
Report cmd_verify(const Scenario& sc, const std::string& suite, const CommandOptions& opt);

/// Operator form of a field, e.g. "x1 ∂x2" for (0, x1).
std::string operator_form(const VField& f);

/// Pairs for the distance suites: around the probes (round robin) within
/// `radius`, clipped to the chart and folded into x_n >= 0 with a boundary.
std::vector<std::pair<Point, Point>> probe_pairs(const Scenario& sc, int count, double radius,
                                                 std::uint64_t seed);

/// Largest lambda in (0, 1] such that the box x + lambda [lo - x, hi - x]
/// lies in the reach grid (checked on a 9^n lattice); 0 if none.
double inner_box_fraction(const ReachGrid& grid, const WeightedSystem& sys, const Point& x,
                          const Point& lo, const Point& hi);

}  // namespace ccgeo

#endif  // CCGEO_COMMANDS_HPP_

#ifndef CCGEO_SCENARIO_HPP_
#define CCGEO_SCENARIO_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ccgeo/hormander.hpp"

namespace ccgeo {

/// A fixture file: one `key = value` per line, `#` starts a comment.
/// Repeated keys: `field = "<e1>, ..." degree=<k>` and `probe = a, b, ...`.
struct Scenario {
  std::string name;
  std::string source;  // path or "<string>"
  int dim = 0;
  Point lower, upper;
  bool boundary = false;
  std::string density = "1";
  std::vector<std::pair<std::string, int>> field_texts;
  int order = 0;  // Hormander order; 0 means smallest m <= 4 passing on a grid
  std::vector<Point> probes;
  std::vector<double> deltas;  // strictly decreasing
  std::uint64_t seed = 1;
  int samples = 2000;
  double delta_cap = 0.5;
  double sigma = 0;  // scaling-map cube width, 0 means default
  std::map<std::string, double> regression;  // `regression.<key> = value`

  WeightedSystem system;

  double reg(const std::string& key, double fallback) const;
  bool has_reg(const std::string& key) const { return regression.count(key) > 0; }
};

Scenario parse_scenario(const std::string& text, const std::string& source = "<string>");
Scenario load_scenario(const std::string& path);

/// The generators followed by every nonzero bracket [W_i, W_j] (i < j) with
/// degree d_i + d_j.
WeightedSystem with_brackets(const WeightedSystem& sys);

}  // namespace ccgeo

#endif  // CCGEO_SCENARIO_HPP_

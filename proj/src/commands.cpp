#include "ccgeo/commands.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

namespace ccgeo {

namespace {

using nlohmann::json;

Mode default_mode(const Scenario& sc, const CommandOptions& opt) {
  return opt.mode ? *opt.mode : (sc.boundary ? Mode::Intrinsic : Mode::Extrinsic);
}

std::uint64_t seed_of(const Scenario& sc, const CommandOptions& opt) { return opt.seed ? *opt.seed : sc.seed; }
int samples_of(const Scenario& sc, const CommandOptions& opt) { return opt.samples ? *opt.samples : sc.samples; }

Point point_arg(const Scenario& sc, const std::optional<Point>& given, std::size_t probe, const char* what) {
  Point p;
  if (given) p = *given;
  else if (sc.probes.size() > probe) p = sc.probes[probe];
  else throw ScenarioError(std::string("no ") + what + " given and the scenario has too few probes", 0);
  if (static_cast<int>(p.size()) != sc.dim)
    throw ScenarioError(std::string(what) + " needs " + std::to_string(sc.dim) + " coordinates", 0);
  return p;
}

double delta_arg(const Scenario& sc, const CommandOptions& opt) {
  if (opt.delta) return *opt.delta;
  if (sc.deltas.empty()) throw ScenarioError("no --delta given and the scenario has no deltas", 0);
  return sc.deltas.front();
}

Report base_report(const Scenario& sc, const std::string& command, const CommandOptions& opt) {
  Report r;
  r.scenario = sc.name;
  r.command = command;
  r.params["source"] = sc.source;
  r.params["seed"] = seed_of(sc, opt);
  r.params["samples"] = samples_of(sc, opt);
  r.params["mode"] = mode_name(default_mode(sc, opt));
  r.params["tol"] = opt.tol;
  return r;
}

double ratio_spread(const std::vector<double>& r) {
  if (r.empty()) return 1.0;
  auto [lo, hi] = std::minmax_element(r.begin(), r.end());
  return *lo > 0 ? *hi / *lo : std::numeric_limits<double>::infinity();
}

// Two-sided constant: max(max r, 1 / min r).
double two_sided(const std::vector<double>& r) {
  if (r.empty()) return 1.0;
  auto [lo, hi] = std::minmax_element(r.begin(), r.end());
  return *lo > 0 ? std::max(*hi, 1.0 / *lo) : std::numeric_limits<double>::infinity();
}

Point boundary_point(const Point& x) {
  Point p = x;
  p.back() = 0.0;
  return p;
}

// Scaling map plus the boundary system it was built from (if any).
struct MapBundle {
  std::optional<BoundarySystem> bsys;
  std::unique_ptr<ScalingMap> map;
};

MapBundle make_map(const Scenario& sc, const Point& x, double delta, int m,
                   const std::vector<int>* previous) {
  ScalingConfig cfg;
  cfg.order = m;
  cfg.sigma = sc.sigma;
  cfg.delta_cap = sc.delta_cap;
  MapBundle out;
  const auto& sys = sc.system;
  if (sc.boundary && (x.back() <= 1e-12 || ball_touches_boundary(sys, x, delta, cfg.touch_samples))) {
    try {
      out.bsys = build_boundary_system(sys, boundary_point(x), m);
    } catch (const GeometryError& e) {
      throw GeometryError(std::string("the ball reaches a characteristic boundary point: ") + e.what());
    }
  }
  out.map = std::make_unique<ScalingMap>(sys, out.bsys ? &*out.bsys : nullptr, x, delta, cfg, previous);
  return out;
}

json metric_json(const MetricEstimate& e) {
  json j;
  j["lower"] = e.lower;
  j["upper"] = std::isfinite(e.upper) ? json(e.upper) : json("inf");
  j["method"] = e.method;
  j["converged"] = e.converged;
  return j;
}

}  // namespace

int scenario_order(const Scenario& sc) {
  if (sc.order > 0) return sc.order;
  const int n = sc.dim;
  int per_axis = n <= 2 ? 21 : (n == 3 ? 9 : 5);
  auto rep = check_hormander(sc.system, 4, domain_grid(sc.system, per_axis));
  if (!rep.ok) throw GeometryError("Hormander condition fails on the domain grid up to order 4");
  return rep.order;
}

std::string operator_form(const VField& f) {
  std::string out;
  for (int k = 0; k < f.dim(); ++k) {
    const Expr& a = f[k];
    if (a.is_zero()) continue;
    std::string d = "∂x" + std::to_string(k + 1);
    std::string term;
    if (a.is_constant() && a.constant_value() == 1.0) term = d;
    else if (a.is_constant() && a.constant_value() == -1.0) term = "-" + d;
    else term = a.to_string() + " " + d;
    if (!out.empty()) out += " + ";
    out += term;
  }
  return out.empty() ? "0" : out;
}

std::vector<std::pair<Point, Point>> probe_pairs(const Scenario& sc, int count, double radius,
                                                 std::uint64_t seed) {
  if (sc.probes.empty()) throw ScenarioError("distance suites need at least one probe", 0);
  std::mt19937_64 rng(stream_seed(seed, 11));
  std::uniform_real_distribution<double> u(-radius, radius);
  const auto& sys = sc.system;
  auto draw = [&](const Point& c) {
    Point p(sc.dim);
    for (int k = 0; k < sc.dim; ++k) {
      double v = c[k] + u(rng);
      if (sc.boundary && k == sc.dim - 1) v = c[k] + std::abs(v - c[k]);
      double lo = sys.lower()[k], hi = sys.upper()[k];
      if (sc.boundary && k == sc.dim - 1) lo = std::max(lo, 0.0);
      double margin = 0.05 * (hi - lo);
      p[k] = std::clamp(v, lo + (k == sc.dim - 1 && sc.boundary ? 0.0 : margin), hi - margin);
    }
    return p;
  };
  std::vector<std::pair<Point, Point>> out;
  for (int i = 0; i < count; ++i) {
    const Point& c = sc.probes[i % sc.probes.size()];
    Point a = draw(c), b = draw(c);
    out.emplace_back(a, b);
  }
  return out;
}

double inner_box_fraction(const ReachGrid& grid, const WeightedSystem& sys, const Point& x,
                          const Point& lo, const Point& hi) {
  const int n = static_cast<int>(x.size());
  const int per_axis = 9;
  auto inside = [&](double lambda) {
    std::vector<int> idx(n, 0);
    Point p(n);
    for (;;) {
      for (int k = 0; k < n; ++k) {
        double u = -1.0 + 2.0 * idx[k] / (per_axis - 1);
        p[k] = x[k] + lambda * (u < 0 ? u * (x[k] - lo[k]) : u * (hi[k] - x[k]));
      }
      if (!sys.contains(p, kBoundaryTolerance) || !grid.contains(p, 1.0, 0)) return false;
      int k = 0;
      while (k < n && ++idx[k] == per_axis) idx[k++] = 0;
      if (k == n) return true;
    }
  };
  if (inside(1.0)) return 1.0;
  double a = 0.0, b = 1.0;
  if (!inside(1e-6)) return 0.0;
  a = 1e-6;
  for (int it = 0; it < 30; ++it) {
    double mid = 0.5 * (a + b);
    (inside(mid) ? a : b) = mid;
  }
  return a;
}

Report cmd_dist(const Scenario& sc, const CommandOptions& opt) {
  Report r = base_report(sc, "dist", opt);
  Point x = point_arg(sc, opt.x, 0, "--x");
  Point y = point_arg(sc, opt.y, 1, "--y");
  r.params["x"] = x;
  r.params["y"] = y;
  ShootingOptions so;
  so.seed = seed_of(sc, opt);
  auto est = cc_distance(sc.system, x, y, default_mode(sc, opt), opt.tol, so);
  json row = metric_json(est);
  row["x"] = x;
  row["y"] = y;
  r.add_row(row);
  r.check("interval_finite", std::isfinite(est.upper), est.upper, 0, est.method);
  return r;
}

Report cmd_ball(const Scenario& sc, const CommandOptions& opt) {
  Report r = base_report(sc, "ball", opt);
  Point x = point_arg(sc, opt.x, 0, "--x");
  double delta = delta_arg(sc, opt);
  r.params["x"] = x;
  r.params["delta"] = delta;
  r.params["segments"] = 16;
  auto rs = sample_ball(sc.system, x, delta, samples_of(sc, opt), 16, seed_of(sc, opt), default_mode(sc, opt), opt.jobs);
  int feasible = 0;
  for (std::size_t i = 0; i < rs.endpoints.size(); ++i) {
    json row;
    row["index"] = i;
    for (int k = 0; k < sc.dim; ++k) row["x" + std::to_string(k + 1)] = rs.endpoints[i][k];
    row["feasible"] = rs.feasible[i] ? 1 : 0;
    feasible += rs.feasible[i];
    r.add_row(row);
  }
  r.columns = {"index"};
  for (int k = 0; k < sc.dim; ++k) r.columns.push_back("x" + std::to_string(k + 1));
  r.columns.push_back("feasible");
  r.check("feasible_samples", feasible > 0, feasible, 1);
  return r;
}

Report cmd_volume(const Scenario& sc, const CommandOptions& opt) {
  Report r = base_report(sc, "volume", opt);
  Point x = point_arg(sc, opt.x, 0, "--x");
  double delta = delta_arg(sc, opt);
  r.params["x"] = x;
  r.params["delta"] = delta;
  VolumeOptions vo;
  vo.jobs = opt.jobs;
  auto v = ball_volume(sc.system, x, delta, default_mode(sc, opt), samples_of(sc, opt), seed_of(sc, opt), vo);
  const int m = scenario_order(sc);
  double lambda = compute_lambda(sc.system, x, delta, m).value;
  json row;
  row["x"] = x;
  row["delta"] = delta;
  row["volume"] = v.volume;
  row["std_error"] = v.std_error;
  row["hit_fraction"] = v.hit_fraction;
  row["lambda"] = lambda;
  row["ratio"] = lambda > 0 ? v.volume / lambda : 0.0;
  r.add_row(row);
  r.check("not_degenerate", !v.degenerate, v.hit_fraction, 0);
  return r;
}

Report cmd_scale(const Scenario& sc, const CommandOptions& opt) {
  Report r = base_report(sc, "scale", opt);
  Point x = point_arg(sc, opt.x, 0, "--x");
  double delta = delta_arg(sc, opt);
  r.params["x"] = x;
  r.params["delta"] = delta;
  const int m = scenario_order(sc);
  auto mb = make_map(sc, x, delta, m, nullptr);
  const auto& map = *mb.map;
  auto pb = check_pullbacks(map, sc.system, mb.bsys ? &*mb.bsys : nullptr, 3);
  auto span = uniform_span(map, sc.system, m, 3);
  json row;
  row["x"] = x;
  row["delta"] = delta;
  row["near_boundary"] = map.near_boundary();
  row["sigma"] = map.sigma();
  row["c0"] = map.c0();
  row["omega"] = map.omega();
  row["tau"] = map.tau();
  row["basis"] = map.basis().slots;
  row["basis_det"] = map.basis().det;
  row["psi0_error"] = pb.psi0_error;
  row["distinguished_residual"] = pb.distinguished_residual;
  row["tangential_normal"] = pb.tangential_normal;
  row["identity_residual"] = pb.identity_residual;
  row["density_min"] = pb.density_min;
  row["density_max"] = pb.density_max;
  row["span_floor"] = span.floor;
  r.add_row(row);
  r.check("psi0", pb.psi0_error <= 1e-10, pb.psi0_error, 1e-10);
  r.check("identity", pb.identity_residual <= 1e-6, pb.identity_residual, 1e-6);
  r.check("span_floor", span.floor > 0, span.floor, 0);
  return r;
}

Report cmd_boundary(const Scenario& sc, const CommandOptions& opt, std::string* text) {
  if (!sc.boundary) throw ScenarioError("scenario '" + sc.name + "' has no boundary", 0);
  Report r = base_report(sc, "boundary", opt);
  Point x = boundary_point(point_arg(sc, opt.x, 0, "--x"));
  r.params["x"] = x;
  const int m = scenario_order(sc);
  r.params["order"] = m;
  auto deg = deg_boundary(sc.system, x, m);
  json head;
  head["kind"] = "degree";
  head["deg"] = deg.deg;
  head["witness"] = deg.witness.word_string();
  head["noncharacteristic"] = deg.noncharacteristic;
  r.add_row(head);
  if (!deg.noncharacteristic) {
    r.check("noncharacteristic", false, deg.deg, 0, "degree is not locally constant here");
    return r;
  }
  auto b = build_boundary_system(sc.system, x, m);
  json x0;
  x0["kind"] = "X0";
  x0["field"] = b.X0.to_string();
  x0["degree"] = b.d0;
  x0["generator"] = b.j0 + 1;
  r.add_row(x0);
  for (const auto& v : b.V) {
    json row;
    row["kind"] = "V";
    row["field"] = v.field.to_string();
    row["degree"] = v.degree;
    row["origin"] = v.origin;
    row["b"] = v.b.to_string();
    row["zero"] = v.zero;
    r.add_row(row);
  }
  r.params["box_lower"] = b.box_lower;
  r.params["box_upper"] = b.box_upper;
  double tr = tangency_residual(b);
  r.check("noncharacteristic", true, deg.deg, 0);
  r.check("tangency", tr <= 1e-8, tr, 1e-8);
  if (text) *text = b.to_scenario(sc.name + "_boundary");
  return r;
}

Report cmd_bracket(const Scenario& sc, const CommandOptions& opt) {
  Report r = base_report(sc, "bracket", opt);
  if (opt.bracket.size() != 2) throw ScenarioError("bracket needs two generator indices", 0);
  const int i = opt.bracket[0], j = opt.bracket[1];
  const int q = sc.system.size();
  if (i < 1 || j < 1 || i > q || j > q)
    throw ScenarioError("generator index out of range 1.." + std::to_string(q), 0);
  r.params["i"] = i;
  r.params["j"] = j;
  VField b = lie_bracket(sc.system.field(i - 1), sc.system.field(j - 1));
  json row;
  row["components"] = b.to_string();
  row["operator"] = operator_form(b);
  row["degree"] = sc.system.degree(i - 1) + sc.system.degree(j - 1);
  r.add_row(row);
  return r;
}

Report cmd_check(const Scenario& sc, const CommandOptions& opt) {
  Report r = base_report(sc, "check", opt);
  const int n = sc.dim;
  int per_axis = n <= 2 ? 21 : (n == 3 ? 9 : 5);
  int m_max = sc.order > 0 ? sc.order : 4;
  r.params["per_axis"] = per_axis;
  r.params["m_max"] = m_max;
  auto rep = check_hormander(sc.system, m_max, domain_grid(sc.system, per_axis));
  json row;
  row["order"] = rep.order;
  row["min_gamma0"] = rep.min_gamma0;
  row["argmin"] = rep.argmin;
  row["failures"] = rep.failures.size();
  r.add_row(row);
  r.check("hormander", rep.ok, rep.min_gamma0, 0, "order " + std::to_string(rep.order));
  return r;
}

namespace {

void suite_doubling(const Scenario& sc, const CommandOptions& opt, Report& r) {
  const auto& sys = sc.system;
  const int m = scenario_order(sc);
  const double bound = std::pow(2.0, sc.dim * m * sys.max_degree());
  double worst = 0;
  for (const auto& x : sc.probes)
    for (double d : sc.deltas) {
      double q = doubling_ratio(sys, x, d, m);
      worst = std::max(worst, q);
      json row;
      row["kind"] = "lambda";
      row["x"] = x;
      row["delta"] = d;
      row["ratio"] = q;
      r.add_row(row);
    }
  r.check("lambda_ratio_bound", worst <= bound, worst, bound);

  // Sampled volume ratios on the first three ladder values. C(delta) is the
  // largest ratio over the probes; it must be stable across the scales.
  const Mode mode = default_mode(sc, opt);
  VolumeOptions vo;
  vo.jobs = opt.jobs;
  const std::size_t scales = std::min<std::size_t>(3, sc.deltas.size());
  std::vector<double> per_scale(scales, 0.0);
  for (std::size_t p = 0; p < sc.probes.size(); ++p) {
    for (std::size_t i = 0; i < scales; ++i) {
      double d = sc.deltas[i];
      auto seed = stream_seed(seed_of(sc, opt), p * 100 + i);
      auto v1 = ball_volume(sys, sc.probes[p], d, mode, samples_of(sc, opt), seed, vo);
      auto v2 = ball_volume(sys, sc.probes[p], 2 * d, mode, samples_of(sc, opt), seed + 1, vo);
      double q = v1.volume > 0 ? v2.volume / v1.volume : std::numeric_limits<double>::infinity();
      per_scale[i] = std::max(per_scale[i], q);
      json row;
      row["kind"] = "volume";
      row["x"] = sc.probes[p];
      row["delta"] = d;
      row["ratio"] = q;
      row["volume"] = v1.volume;
      row["volume_2delta"] = v2.volume;
      r.add_row(row);
    }
  }
  const double spread = ratio_spread(per_scale);
  const double top = per_scale.empty() ? 0.0 : *std::max_element(per_scale.begin(), per_scale.end());
  r.check("volume_ratio_stability", spread <= 1.5, spread, 1.5, "max over probes per scale");
  if (sc.has_reg("doubling_C")) r.check("volume_ratio_bound", top <= sc.reg("doubling_C", 0), top, sc.reg("doubling_C", 0));
}

void suite_volume(const Scenario& sc, const CommandOptions& opt, Report& r) {
  const auto& sys = sc.system;
  const int m = scenario_order(sc);
  const Mode mode = default_mode(sc, opt);
  VolumeOptions vo;
  vo.jobs = opt.jobs;
  std::vector<double> ratios;
  double worst_se = 0;
  for (std::size_t p = 0; p < sc.probes.size(); ++p)
    for (std::size_t i = 0; i < sc.deltas.size(); ++i) {
      const auto& x = sc.probes[p];
      double d = sc.deltas[i];
      auto v = ball_volume(sys, x, d, mode, samples_of(sc, opt), stream_seed(seed_of(sc, opt), p * 100 + i), vo);
      double lambda = compute_lambda(sys, x, d, m).value;
      double q = v.volume / lambda;
      ratios.push_back(q);
      double se = v.volume > 0 ? v.std_error / v.volume : 1.0;
      worst_se = std::max(worst_se, se);
      json row;
      row["x"] = x;
      row["delta"] = d;
      row["volume"] = v.volume;
      row["std_error"] = v.std_error;
      row["lambda"] = lambda;
      row["ratio"] = q;
      r.add_row(row);
    }
  double C = std::sqrt(ratio_spread(ratios));
  double limit = sc.reg("volume_C", 5.0);
  r.check("volume_lambda_C", C <= limit, C, limit, "C = sqrt(max/min) of Vol/Lambda");
  r.check("monte_carlo_se", worst_se <= 0.05, worst_se, 0.05);
}

void suite_sandwich(const Scenario& sc, const CommandOptions& opt, Report& r) {
  const auto& sys = sc.system;
  const int m = scenario_order(sc);
  SandwichOptions so;
  so.seed = seed_of(sc, opt);
  so.jobs = opt.jobs;
  so.outer_samples = static_cast<int>(sc.reg("outer_samples", 200));
  so.inner_samples = static_cast<int>(sc.reg("inner_samples", 400));
  const bool frozen = sc.has_reg("xi1");
  const double xi1 = sc.reg("xi1", 0);
  double psi0 = 0, dist = 0, tang = 0, ident = 0, dmin = INFINITY, dmax = 0, span_spread = 1, span_min = INFINITY;
  double outer_min = 1, inner_min = 1, xi_min = INFINITY;
  bool any_near = false, injective = true;
  for (const auto& x : sc.probes) {
    std::vector<int> prev;
    std::vector<double> floors;
    for (double d : sc.deltas) {
      if (d > sc.delta_cap) continue;
      auto mb = make_map(sc, x, d, m, prev.empty() ? nullptr : &prev);
      const auto& map = *mb.map;
      prev = map.basis().slots;
      auto pb = check_pullbacks(map, sys, mb.bsys ? &*mb.bsys : nullptr, 3);
      auto span = uniform_span(map, sys, m, 3);
      SandwichOptions local = so;
      if (frozen) local.xi_ladder.clear();
      auto sw = verify_sandwich(map, sys, local);
      int nf = sw.newton_failures;
      double inner = frozen ? sandwich_inner_fraction(map, sys, xi1, so, &nf) : 1.0;
      any_near = any_near || map.near_boundary();
      psi0 = std::max(psi0, pb.psi0_error);
      dist = std::max(dist, pb.distinguished_residual);
      tang = std::max(tang, pb.tangential_normal);
      ident = std::max(ident, pb.identity_residual);
      dmin = std::min(dmin, pb.density_min);
      dmax = std::max(dmax, pb.density_max);
      injective = injective && pb.injective;
      floors.push_back(span.floor);
      span_min = std::min(span_min, span.floor);
      outer_min = std::min(outer_min, sw.outer_fraction);
      inner_min = std::min(inner_min, inner);
      xi_min = std::min(xi_min, frozen ? xi1 : sw.xi1);
      json row;
      row["x"] = x;
      row["delta"] = d;
      row["near_boundary"] = map.near_boundary();
      row["c0"] = map.c0();
      row["sigma"] = map.sigma();
      row["psi0_error"] = pb.psi0_error;
      row["distinguished_residual"] = pb.distinguished_residual;
      row["tangential_normal"] = pb.tangential_normal;
      row["identity_residual"] = pb.identity_residual;
      row["density_min"] = pb.density_min;
      row["density_max"] = pb.density_max;
      row["span_floor"] = span.floor;
      row["outer_fraction"] = sw.outer_fraction;
      row["inner_fraction"] = frozen ? inner : (sw.inner_fractions.empty() ? 0.0 : sw.inner_fractions.back().second);
      row["xi1"] = frozen ? xi1 : sw.xi1;
      row["newton_failures"] = nf;
      r.add_row(row);
    }
    span_spread = std::max(span_spread, ratio_spread(floors));
  }
  r.check("psi0", psi0 <= 1e-10, psi0, 1e-10);
  if (any_near) {
    r.check("distinguished_pullback", dist <= 1e-6, dist, 1e-6);
    r.check("tangential_normal", tang <= 1e-8, tang, 1e-8);
  }
  r.check("pullback_identity", ident <= 1e-6, ident, 1e-6);
  double ch = dmin > 0 ? std::sqrt(dmax / dmin) : INFINITY;
  double ch_limit = sc.reg("density_C", 1e6);
  r.check("density_bounded", dmin > 0 && ch <= ch_limit, ch, ch_limit, injective ? "" : "grid images collide");
  r.check("uniform_span_stable", span_min > 0 && span_spread <= 2.0, span_spread, 2.0);
  r.check("outer_containment", outer_min >= so.pass_fraction, outer_min, so.pass_fraction);
  if (frozen) r.check("inner_containment", inner_min >= so.pass_fraction, inner_min, so.pass_fraction, "xi1 frozen");
  else r.check("inner_xi1", xi_min > 0, xi_min, 0, "smallest xi1 found on the ladder");
}

void suite_boundary_metric(const Scenario& sc, const CommandOptions& opt, Report& r) {
  if (!sc.boundary) throw ScenarioError("boundary-metric needs a scenario with boundary = true", 0);
  const auto& sys = sc.system;
  const int m = scenario_order(sc);
  const int pairs = opt.pairs > 0 ? opt.pairs : static_cast<int>(sc.reg("pairs", 6));
  std::vector<double> ratios;
  int characteristic = 0;
  double worst_tangency = 0;
  std::mt19937_64 rng(stream_seed(seed_of(sc, opt), 13));
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  ShootingOptions sh;
  sh.seed = seed_of(sc, opt);
  for (const auto& probe : sc.probes) {
    Point x0 = boundary_point(probe);
    auto deg = deg_boundary(sys, x0, m);
    json row;
    row["kind"] = "probe";
    row["x"] = x0;
    row["deg"] = deg.deg;
    row["noncharacteristic"] = deg.noncharacteristic;
    r.add_row(row);
    if (!deg.noncharacteristic) {
      ++characteristic;
      continue;
    }
    auto b = build_boundary_system(sys, x0, m);
    worst_tangency = std::max(worst_tangency, tangency_residual(b));
    for (int i = 0; i < pairs; ++i) {
      Point a(sc.dim, 0.0), c(sc.dim, 0.0);
      for (int k = 0; k < sc.dim - 1; ++k) {
        double mid = 0.5 * (b.box_lower[k] + b.box_upper[k]), half = 0.5 * (b.box_upper[k] - b.box_lower[k]);
        a[k] = mid + half * u(rng);
        c[k] = mid + half * u(rng);
      }
      auto dv = boundary_metric(b, a, c, opt.tol, sh);
      auto dn = cc_distance(sys, a, c, Mode::Intrinsic, opt.tol, sh);
      double q = dv.mid() / dn.mid();
      ratios.push_back(q);
      json pr;
      pr["kind"] = "pair";
      pr["x"] = a;
      pr["y"] = c;
      pr["boundary"] = metric_json(dv);
      pr["intrinsic"] = metric_json(dn);
      pr["ratio"] = q;
      r.add_row(pr);
    }
  }
  double C = two_sided(ratios);
  double limit = sc.reg("boundary_C", 4.0);
  r.check("boundary_equivalence_C", !ratios.empty() && C <= limit, C, limit, std::to_string(ratios.size()) + " pairs");
  r.check("tangency", worst_tangency <= 1e-8, worst_tangency, 1e-8);
  if (sc.has_reg("characteristic_probes"))
    r.check("characteristic_probes", characteristic == static_cast<int>(sc.reg("characteristic_probes", 0)),
            characteristic, sc.reg("characteristic_probes", 0));
}

void suite_equivalence(const Scenario& sc, const CommandOptions& opt, Report& r) {
  const auto& sys = sc.system;
  const int m = scenario_order(sc);
  const auto aug = with_brackets(sys);
  const Mode mode = default_mode(sc, opt);
  const int count = opt.pairs > 0 ? opt.pairs : static_cast<int>(sc.reg("pairs", 20));
  auto pairs = probe_pairs(sc, count, sc.reg("pair_radius", 0.3), seed_of(sc, opt));
  ShootingOptions sh;
  sh.seed = seed_of(sc, opt);
  std::vector<double> ratios, int_ext;
  bool ext_le_int = true;
  for (const auto& [x, y] : pairs) {
    auto d = cc_distance(sys, x, y, mode, opt.tol, sh);
    auto da = cc_distance(aug, x, y, mode, opt.tol, sh);
    double q = d.mid() / da.mid();
    ratios.push_back(q);
    json row;
    row["kind"] = "pair";
    row["x"] = x;
    row["y"] = y;
    row["system"] = metric_json(d);
    row["augmented"] = metric_json(da);
    row["ratio"] = q;
    if (sc.boundary) {
      auto de = cc_distance(sys, x, y, Mode::Extrinsic, opt.tol, sh);
      auto di = mode == Mode::Intrinsic ? d : cc_distance(sys, x, y, Mode::Intrinsic, opt.tol, sh);
      bool ok = de.lower <= di.upper * (1 + 1e-9);
      ext_le_int = ext_le_int && ok;
      double qi = di.mid() / de.mid();
      int_ext.push_back(qi);
      row["extrinsic"] = metric_json(de);
      row["intrinsic_over_extrinsic"] = qi;
    }
    r.add_row(row);
  }
  double C = two_sided(ratios);
  double limit = sc.reg("equivalence_C", 3.0);
  r.check("weak_equivalence_C", C <= limit, C, limit, std::to_string(ratios.size()) + " pairs");
  if (sc.boundary) {
    r.check("extrinsic_le_intrinsic", ext_le_int, ext_le_int ? 1 : 0, 1);
    double top = int_ext.empty() ? 1.0 : *std::max_element(int_ext.begin(), int_ext.end());
    double ilimit = sc.reg("intrinsic_C", 4.0);
    r.check("intrinsic_over_extrinsic_C", top <= ilimit, top, ilimit);
    int changed = 0;
    for (const auto& p : sc.probes) {
      Point x0 = boundary_point(p);
      auto deg_of = [&](const WeightedSystem& s) {
        try {
          return deg_boundary(s, x0, m).deg;
        } catch (const GeometryError&) {
          return -1;
        }
      };
      int a = deg_of(sys), b = deg_of(aug);
      changed += a != b;
      json row;
      row["kind"] = "deg";
      row["x"] = x0;
      row["deg"] = a;
      row["deg_augmented"] = b;
      r.add_row(row);
    }
    r.check("deg_invariance", changed == 0, changed, 0);
  }
}

void suite_topology(const Scenario& sc, const CommandOptions& opt, Report& r) {
  const auto& sys = sc.system;
  const Mode mode = default_mode(sc, opt);
  const int n = sc.dim;
  std::vector<double> exps;
  for (int k = 0; k < n; ++k) {
    std::string key = "box_exponent." + std::to_string(k + 1);
    if (sc.has_reg(key)) exps.push_back(sc.reg(key, 1));
  }
  // Shape exponents apply to one probe (1-based `box_probe`) or to all.
  const int shape_probe = static_cast<int>(sc.reg("box_probe", 0)) - 1;
  double min_lambda = 1, spread = 1;
  for (std::size_t p = 0; p < sc.probes.size(); ++p) {
    const auto& x = sc.probes[p];
    std::vector<std::vector<double>> outer_norm(n), inner_norm(n);
    for (std::size_t i = 0; i < sc.deltas.size(); ++i) {
      double d = sc.deltas[i];
      auto grid = ball_grid(sys, x, d, mode, 0, stream_seed(seed_of(sc, opt), p * 100 + i), opt.jobs);
      auto [lo, hi] = grid.bounds(1.0);
      // Cells straddle the chart edges; the box is taken inside the chart.
      for (int k = 0; k < n; ++k) {
        double lower = sys.lower()[k];
        if (sc.boundary && k == n - 1) lower = std::max(lower, 0.0);
        lo[k] = std::clamp(lo[k], lower, x[k]);
        hi[k] = std::clamp(hi[k], x[k], sys.upper()[k]);
      }
      double lambda = inner_box_fraction(grid, sys, x, lo, hi);
      min_lambda = std::min(min_lambda, lambda);
      json row;
      row["x"] = x;
      row["delta"] = d;
      row["outer_lower"] = lo;
      row["outer_upper"] = hi;
      row["inner_fraction"] = lambda;
      Point inner_w(n), outer_w(n);
      for (int k = 0; k < n; ++k) {
        outer_w[k] = hi[k] - lo[k];
        inner_w[k] = lambda * outer_w[k];
        if (static_cast<int>(exps.size()) == n && (shape_probe < 0 || shape_probe == static_cast<int>(p))) {
          outer_norm[k].push_back(outer_w[k] / std::pow(d, exps[k]));
          inner_norm[k].push_back(inner_w[k] / std::pow(d, exps[k]));
        }
      }
      row["outer_width"] = outer_w;
      row["inner_width"] = inner_w;
      r.add_row(row);
    }
    for (int k = 0; k < n; ++k) spread = std::max({spread, ratio_spread(outer_norm[k]), ratio_spread(inner_norm[k])});
  }
  r.check("inner_box_positive", min_lambda > 0, min_lambda, 0);
  if (static_cast<int>(exps.size()) == n) r.check("box_scaling_stable", spread <= 2.0, spread, 2.0);
}

}  // namespace

Report cmd_verify(const Scenario& sc, const std::string& suite, const CommandOptions& opt) {
  if (std::find(kSuites.begin(), kSuites.end(), suite) == kSuites.end())
    throw ScenarioError("unknown suite '" + suite + "'", 0);
  if (sc.probes.empty()) throw ScenarioError("verify needs at least one probe", 0);
  if (sc.deltas.empty() && suite != "boundary-metric" && suite != "equivalence")
    throw ScenarioError("verify " + suite + " needs a delta ladder", 0);
  Report r = base_report(sc, "verify " + suite, opt);
  r.params["probes"] = sc.probes;
  r.params["deltas"] = sc.deltas;
  r.params["regression"] = sc.regression;
  if (suite == "doubling") suite_doubling(sc, opt, r);
  else if (suite == "volume") suite_volume(sc, opt, r);
  else if (suite == "sandwich") suite_sandwich(sc, opt, r);
  else if (suite == "boundary-metric") suite_boundary_metric(sc, opt, r);
  else if (suite == "equivalence") suite_equivalence(sc, opt, r);
  else suite_topology(sc, opt, r);
  return r;
}

}  // namespace ccgeo

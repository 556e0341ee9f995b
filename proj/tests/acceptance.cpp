// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria (0 when everything passes).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <sstream>

#include "ccgeo/commands.hpp"
#include "ccgeo/flows.hpp"

using namespace ccgeo;

namespace {

std::string fixture(const std::string& name) { return std::string(CCGEO_FIXTURES) + "/" + name + ".scn"; }

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

const Verdict* find_verdict(const Report& r, const std::string& name) {
  for (const auto& v : r.verdicts)
    if (v.name == name) return &v;
  return nullptr;
}

void require_verdicts(Outcome& o, const Report& r, const std::vector<std::string>& names) {
  for (const auto& n : names) {
    const Verdict* v = find_verdict(r, n);
    if (!v) {
      o.require(false, r.scenario + " lacks " + n);
      continue;
    }
    o.detail << " " << r.scenario << "." << n << "=" << v->value;
    o.require(v->pass, r.scenario + "." + n + " " + std::to_string(v->value) + " vs " + std::to_string(v->threshold));
  }
}

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

CommandOptions defaults() {
  CommandOptions o;
  o.jobs = 1;
  return o;
}

const std::vector<std::string> kFixtures{"elliptic", "heat", "heisenberg_halfspace", "grushin_straightened",
                                         "grushin"};

// 1. Antisymmetry, Jacobi and symbolic derivatives on every fixture.
void bracket_algebra(Outcome& o) {
  std::mt19937_64 rng(2024);
  double worst_anti = 0, worst_jacobi = 0, worst_diff = 0;
  for (const auto& name : kFixtures) {
    auto sc = load_scenario(fixture(name));
    auto aug = with_brackets(sc.system);  // at least three fields for Jacobi
    const int n = sc.dim, q = aug.size();
    std::vector<std::uniform_real_distribution<double>> coord;
    for (int k = 0; k < n; ++k) coord.emplace_back(aug.lower()[k], aug.upper()[k]);
    for (int s = 0; s < 100; ++s) {
      Point p(n);
      for (int k = 0; k < n; ++k) p[k] = coord[k](rng);
      for (int a = 0; a < q; ++a)
        for (int b = a + 1; b < q; ++b) {
          auto u = lie_bracket(aug.field(a), aug.field(b)).eval(p);
          auto w = lie_bracket(aug.field(b), aug.field(a)).eval(p);
          double scale = std::max(1.0, norm(u));
          for (int k = 0; k < n; ++k) worst_anti = std::max(worst_anti, std::abs(u[k] + w[k]) / scale);
          for (int c = b + 1; c < q; ++c) {
            const auto &X = aug.field(a), &Y = aug.field(b), &Z = aug.field(c);
            auto t1 = lie_bracket(X, lie_bracket(Y, Z)).eval(p);
            auto t2 = lie_bracket(Y, lie_bracket(Z, X)).eval(p);
            auto t3 = lie_bracket(Z, lie_bracket(X, Y)).eval(p);
            double sc3 = std::max({1.0, norm(t1), norm(t2), norm(t3)});
            for (int k = 0; k < n; ++k) worst_jacobi = std::max(worst_jacobi, std::abs(t1[k] + t2[k] + t3[k]) / sc3);
          }
        }
      for (int j = 0; j < q; ++j)
        for (int comp = 0; comp < n; ++comp)
          for (int k = 0; k < n; ++k) {
            const Expr& e = aug.field(j)[comp];
            double sym = eval(diff(e, k), p);
            double h = 1e-5 * (1 + std::abs(p[k]));
            Point a = p, b = p;
            a[k] += h;
            b[k] -= h;
            double fd = (eval(e, a) - eval(e, b)) / (2 * h);
            worst_diff = std::max(worst_diff, std::abs(sym - fd) / std::max(1.0, std::abs(sym)));
          }
    }
  }
  o.detail << " antisym=" << worst_anti << " jacobi=" << worst_jacobi << " diff=" << worst_diff;
  o.require(worst_anti <= 1e-9, "antisymmetry");
  o.require(worst_jacobi <= 1e-9, "jacobi");
  o.require(worst_diff <= 1e-6, "symbolic vs finite difference");
}

// 2. Hormander certification.
void hormander(Outcome& o) {
  auto g = load_scenario(fixture("grushin"));
  auto rg = check_hormander(g.system, 4, domain_grid(g.system, 21));
  auto e = load_scenario(fixture("elliptic"));
  auto re = check_hormander(e.system, 4, domain_grid(e.system, 11));
  auto d = load_scenario(fixture("degenerate"));
  auto rd = check_hormander(d.system, 4, domain_grid(d.system, 11));
  o.detail << " grushin m=" << rg.order << " gamma0=" << rg.min_gamma0 << " elliptic m=" << re.order
           << " degenerate ok=" << rd.ok;
  o.require(rg.ok && rg.order == 2 && std::abs(rg.min_gamma0 - 1.0) <= 1e-12, "grushin");
  o.require(re.ok && re.order == 1, "elliptic");
  o.require(!rd.ok, "degenerate rejected");
}

// 3. Flow-commutator limits.
void flow_limits(Outcome& o) {
  std::vector<VField> S{VField::parse("1, 0", 2), VField::parse("0, x1", 2)};
  FlowConfig cfg;
  Point p{0.2, 0.1};
  auto q = [&](double t) {
    auto c = commutator_flow_C(2, t, S, p, cfg);
    return Point{(c[0] - p[0]) / (t * t), (c[1] - p[1]) / (t * t)};
  };
  // Two-level Richardson extrapolation in t.
  double t = 0.1;
  Point a = q(t), b = q(t / 2), c = q(t / 4), lim(2);
  for (int k = 0; k < 2; ++k) lim[k] = (4 * (2 * c[k] - b[k]) - (2 * b[k] - a[k])) / 3;
  Point want{0, 1};  // [d/dx, x d/dy] = d/dy
  double ln = norm(lim);
  double dir = std::hypot(lim[0] / ln - want[0], lim[1] / ln - want[1]);
  o.detail << " C2 direction error=" << dir;
  o.require(dir <= 1e-2, "C2 direction");

  BracketWordFlow w(S, {0, 1});
  auto target = w.target().eval(p);
  double worst = 0;
  for (int k = 6; k <= 10; ++k)
    for (double s : {1.0, -1.0}) {
      double tt = s * std::ldexp(1.0, -k);
      auto e = flow_E(w, tt, p, cfg);
      Point d{(e[0] - p[0]) / tt, (e[1] - p[1]) / tt};
      if (k == 10) worst = std::max(worst, std::hypot(d[0] - target[0], d[1] - target[1]) / norm(target));
    }
  o.detail << " E one-sided error at 2^-10=" << worst;
  o.require(worst <= 0.05, "E derivative");
}

// 4. Elliptic half-plane: intrinsic CC distance equals the Euclidean one.
void elliptic_metric(Outcome& o) {
  auto sc = load_scenario(fixture("elliptic"));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ux(-0.8, 0.8), uy(0.0, 0.8);
  int bad = 0;
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    Point x{ux(rng), uy(rng)}, y{ux(rng), uy(rng)};
    if (i % 4 == 0) x[1] = 0.0;  // some pairs start on the boundary
    double d = std::hypot(x[0] - y[0], x[1] - y[1]);
    auto est = cc_distance(sc.system, x, y, Mode::Intrinsic, 0.01);
    bool ok = est.contains(d) && est.lower >= 0.98 * d && est.upper <= 1.02 * d;
    worst = std::max({worst, std::abs(est.lower / d - 1), std::abs(est.upper / d - 1)});
    bad += !ok;
  }
  o.detail << " pairs=20 failures=" << bad << " worst relative=" << worst;
  o.require(bad == 0, "interval containment within 2%");
}

// 5. Grushin ball at the origin: boxes inside and outside scaling like (delta, delta^2).
void ball_shape(Outcome& o) {
  auto sc = load_scenario(fixture("grushin"));
  sc.probes = {Point{0, 0}};
  sc.deltas = {0.4, 0.2, 0.1};
  auto r = cmd_verify(sc, "topology", defaults());
  require_verdicts(o, r, {"inner_box_positive", "box_scaling_stable"});
  for (const auto& row : r.rows) {
    double d = row["delta"].get<double>();
    auto lo = row["outer_lower"].get<Point>(), hi = row["outer_upper"].get<Point>();
    // Reach is bounded by |x| <= delta and |y| <= delta^2 / 2; the grid box
    // may overshoot by a cell (under 5% of the extent).
    const double slack = 1.05;
    bool ok = -lo[0] <= slack * d && hi[0] <= slack * d && -lo[1] <= slack * d * d / 2 &&
              hi[1] <= slack * d * d / 2;
    o.require(ok, "outer box within analytic bounds at delta " + std::to_string(d));
  }
}

// 6. Vol ~ Lambda.
void volume_lambda(Outcome& o) {
  for (const char* name : {"grushin_straightened", "grushin", "heisenberg_halfspace"}) {
    auto r = cmd_verify(load_scenario(fixture(name)), "volume", defaults());
    require_verdicts(o, r, {"volume_lambda_C", "monte_carlo_se"});
  }
}

// 7. Doubling.
void doubling(Outcome& o) {
  for (const char* name : {"elliptic", "grushin"}) {
    auto r = cmd_verify(load_scenario(fixture(name)), "doubling", defaults());
    require_verdicts(o, r, {"lambda_ratio_bound", "volume_ratio_stability"});
  }
}

std::vector<Report>& sandwich_reports() {
  static std::vector<Report> reports = [] {
    std::vector<Report> out;
    for (const char* name : {"grushin_straightened", "grushin", "heisenberg_halfspace"})
      out.push_back(cmd_verify(load_scenario(fixture(name)), "sandwich", defaults()));
    return out;
  }();
  return reports;
}

// 8. Scaling-map items.
void scaling_items(Outcome& o) {
  for (const auto& r : sandwich_reports()) {
    std::vector<std::string> names{"psi0", "pullback_identity", "uniform_span_stable"};
    if (find_verdict(r, "distinguished_pullback")) {
      names.push_back("distinguished_pullback");
      names.push_back("tangential_normal");
    }
    require_verdicts(o, r, names);
  }
  o.require(find_verdict(sandwich_reports()[0], "distinguished_pullback") != nullptr,
            "boundary fixture exercised the near-boundary map");
}

// 9. Sandwich with a frozen xi1.
void sandwich(Outcome& o) {
  for (const auto& r : sandwich_reports()) require_verdicts(o, r, {"outer_containment", "inner_containment"});
}

// 10. Boundary system and boundary metric on straightened Grushin.
void boundary_system(Outcome& o) {
  auto sc = load_scenario(fixture("grushin_straightened"));
  auto b = build_boundary_system(sc.system, Point{0.5, 0}, 2);
  bool has_dx = false;
  for (const auto& v : b.V) has_dx = has_dx || (!v.zero && v.field.to_string() == "1" && v.degree == 1);
  o.detail << " V has (d/dx, 1)=" << has_dx;
  o.require(has_dx, "V contains (d/dx, 1)");
  auto r = cmd_verify(sc, "boundary-metric", defaults());
  require_verdicts(o, r, {"boundary_equivalence_C"});
  auto at0 = deg_boundary(sc.system, Point{0, 0}, 2);
  auto at5 = deg_boundary(sc.system, Point{0.5, 0}, 2);
  o.detail << " deg(0)=" << at0.deg << " deg(0.5)=" << at5.deg;
  o.require(!at0.noncharacteristic && at0.deg == 2 && at5.deg == 1 && at5.noncharacteristic,
            "x = 0 characteristic, x = 0.5 not");
  bool threw = false;
  try {
    build_boundary_system(sc.system, Point{0, 0}, 2);
  } catch (const GeometryError&) {
    threw = true;
  }
  o.require(threw, "construction refused at x = 0");
}

// 11. Intrinsic vs extrinsic near non-characteristic boundary probes.
void intrinsic_extrinsic(Outcome& o) {
  for (const char* name : {"heisenberg_halfspace", "grushin_straightened"}) {
    auto sc = load_scenario(fixture(name));
    std::vector<Point> boundary_probes;
    for (const auto& p : sc.probes)
      if (p.back() == 0.0) boundary_probes.push_back(p);
    sc.probes = boundary_probes;
    auto pairs = probe_pairs(sc, 8, 0.25, sc.seed);
    // Pairs on the boundary itself, where free paths tend to dip below it.
    for (const auto& p : boundary_probes)
      for (double step : {0.1, 0.2}) {
        Point q = p;
        q[0] += step;
        pairs.emplace_back(p, q);
      }
    double top = 0;
    bool ordered = true;
    for (const auto& [x, y] : pairs) {
      auto di = cc_distance(sc.system, x, y, Mode::Intrinsic, 0.01);
      auto de = cc_distance(sc.system, x, y, Mode::Extrinsic, 0.01);
      ordered = ordered && de.lower <= di.upper * (1 + 1e-9);
      top = std::max(top, di.mid() / de.mid());
    }
    double limit = sc.reg("intrinsic_C", 4.0);
    o.detail << " " << name << " intrinsic/extrinsic max=" << top;
    o.require(ordered, std::string(name) + " extrinsic <= intrinsic");
    o.require(top <= limit, std::string(name) + " intrinsic <= C extrinsic");
  }
}

// 12. Weak-equivalence invariance under adding the bracket.
void weak_equivalence(Outcome& o) {
  auto st = load_scenario(fixture("grushin_straightened"));
  auto aug = with_brackets(st.system);
  int changed = 0, tested = 0;
  for (int i = 0; i <= 20; ++i) {
    Point x{-0.8 + 0.08 * i, 0};
    int a = deg_boundary(st.system, x, 2).deg, b = deg_boundary(aug, x, 2).deg;
    changed += a != b;
    ++tested;
  }
  o.detail << " deg changes=" << changed << "/" << tested;
  o.require(changed == 0, "deg invariance");
  auto r = cmd_verify(load_scenario(fixture("grushin")), "equivalence", defaults());
  require_verdicts(o, r, {"weak_equivalence_C"});
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number.
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  struct Criterion {
    int id;
    const char* name;
    std::function<void(Outcome&)> run;
  };
  std::vector<Criterion> criteria{
      {1, "bracket algebra and derivatives", bracket_algebra},
      {2, "Hormander certification", hormander},
      {3, "flow-commutator limits", flow_limits},
      {4, "elliptic metric identity", elliptic_metric},
      {5, "Grushin ball anisotropy", ball_shape},
      {6, "volume comparable to Lambda", volume_lambda},
      {7, "doubling", doubling},
      {8, "scaling-map items", scaling_items},
      {9, "sandwich containments", sandwich},
      {10, "boundary system and metric", boundary_system},
      {11, "intrinsic vs extrinsic", intrinsic_extrinsic},
      {12, "weak-equivalence invariance", weak_equivalence},
  };
  int failed = 0;
  int ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    ++ran;
    Outcome o;
    auto start = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [error: " << e.what() << "]";
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %2d %s: %s (%.1fs)%s\n", c.id, o.pass ? "PASS" : "FAIL", c.name, secs,
                o.detail.str().c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return failed;
}

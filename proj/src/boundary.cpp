#include "ccgeo/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace ccgeo {

namespace {

constexpr double kTangentTol = 1e-10;

bool near_zero(double v, double scale) { return std::abs(v) <= kTangentTol * std::max(scale, 1.0); }

double field_scale(const std::vector<CommutatorEntry>& entries, std::span<const double> x) {
  double s = 0;
  for (const auto& e : entries) {
    if (e.zero) continue;
    for (double v : e.field.eval(x)) s = std::max(s, std::abs(v));
  }
  return s;
}

// Degree and witness at one boundary point, or deg = 0 if all entries are tangent.
int degree_at(const std::vector<CommutatorEntry>& entries, std::span<const double> x,
              int* witness) {
  const double scale = field_scale(entries, x);
  int best = 0;
  double best_mag = 0;
  for (int i = 0; i < static_cast<int>(entries.size()); ++i) {
    const auto& e = entries[i];
    if (e.zero) continue;
    double a = std::abs(e.field.eval(x).back());
    if (near_zero(a, scale)) continue;
    if (best == 0 || e.degree < best || (e.degree == best && a > best_mag)) {
      best = e.degree;
      best_mag = a;
      if (witness) *witness = i;
    }
  }
  return best;
}

// Simplified a / b for the common shapes a = b, a = -b, a = c * b.
Expr quotient(const Expr& a, const Expr& b) {
  if (a.is_zero()) return Expr(0.0);
  if (a.structurally_equal(b)) return Expr(1.0);
  if (structurally_negated(a, b)) return Expr(-1.0);
  if (a.op() == Op::Mul) {
    if (a.child(1).structurally_equal(b)) return a.child(0);
    if (a.child(0).structurally_equal(b)) return a.child(1);
  }
  if (a.op() == Op::Neg) {
    Expr q = quotient(a.child(0), b);
    if (q.op() != Op::Div) return -q;
  }
  if (b.is_constant()) return a * Expr(1.0 / b.constant_value());
  return a / b;
}

void check_boundary_point(const WeightedSystem& sys, std::span<const double> x) {
  if (!sys.has_boundary()) throw GeometryError("the system has no boundary");
  if (static_cast<int>(x.size()) != sys.dim()) throw DimensionError("point arity does not match");
  if (std::abs(x.back()) > 1e-12) throw GeometryError("boundary point must have x_n = 0");
  if (!sys.contains(x, 1e-12)) throw GeometryError("boundary point lies outside the chart");
}

}  // namespace

std::vector<Point> boundary_grid(const Point& lo, const Point& hi, int per_axis, bool with_normal) {
  const std::size_t d = lo.size();
  std::vector<Point> out;
  if (d == 0) {
    out.push_back(with_normal ? Point{0.0} : Point{});
    return out;
  }
  per_axis = std::max(per_axis, 1);
  std::vector<int> idx(d, 0);
  for (;;) {
    Point p(d);
    for (std::size_t k = 0; k < d; ++k)
      p[k] = per_axis == 1 ? 0.5 * (lo[k] + hi[k]) : lo[k] + (hi[k] - lo[k]) * idx[k] / (per_axis - 1);
    if (with_normal) p.push_back(0.0);
    out.push_back(std::move(p));
    std::size_t k = 0;
    while (k < d && ++idx[k] == per_axis) idx[k++] = 0;
    if (k == d) break;
  }
  return out;
}

BoundaryDegreeReport deg_boundary(const WeightedSystem& sys, std::span<const double> x, int m,
                                  double probe_radius) {
  check_boundary_point(sys, x);
  auto entries = enumerate_commutators(sys, m);
  if (!check_span_at(entries, x).valid)
    throw GeometryError("Hormander condition of order " + std::to_string(m) + " fails at the point");
  BoundaryDegreeReport rep;
  rep.point.assign(x.begin(), x.end());
  int w = -1;
  rep.deg = degree_at(entries, x, &w);
  if (rep.deg == 0) throw GeometryError("characteristic up to order " + std::to_string(m));
  rep.witness = entries[w];

  const int n = sys.dim();
  Point lo(n - 1), hi(n - 1);
  for (int k = 0; k < n - 1; ++k) {
    lo[k] = std::max(sys.lower()[k], x[k] - probe_radius);
    hi[k] = std::min(sys.upper()[k], x[k] + probe_radius);
  }
  rep.locally_constant = true;
  for (const auto& p : boundary_grid(lo, hi, 5, true))
    if (degree_at(entries, p, nullptr) != rep.deg) {
      rep.locally_constant = false;
      break;
    }
  const double scale = field_scale(entries, x);
  for (int j = 0; j < sys.size(); ++j)
    if (sys.degree(j) == rep.deg && !near_zero(sys.field(j).eval(x).back(), scale))
      rep.generator_transversal = true;
  rep.noncharacteristic = rep.locally_constant && rep.generator_transversal;
  return rep;
}

BoundarySystem build_boundary_system(const WeightedSystem& sys, std::span<const double> x0, int m) {
  auto rep = deg_boundary(sys, x0, m);
  if (!rep.noncharacteristic)
    throw GeometryError("characteristic boundary point (degree " + std::to_string(rep.deg) +
                        " is not locally constant or not attained by a generator)");
  const int n = sys.dim();
  BoundarySystem b;
  b.x0.assign(x0.begin(), x0.end());
  b.order = m;
  b.deg = rep.deg;
  b.chart_lower = sys.lower();
  b.chart_upper = sys.upper();

  // Distinguished field: transversal generator of degree deg, preferring the
  // most normal direction relative to its length.
  double best = -1;
  for (int j = 0; j < sys.size(); ++j) {
    if (sys.degree(j) != rep.deg) continue;
    auto v = sys.field(j).eval(x0);
    double norm = 0;
    for (double c : v) norm = std::max(norm, std::abs(c));
    if (norm == 0) continue;
    double ratio = std::abs(v.back()) / std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (near_zero(v.back(), norm)) continue;
    if (ratio > best + 1e-12) {
      best = ratio;
      b.j0 = j;
    }
  }
  b.X0 = sys.field(b.j0);
  b.d0 = sys.degree(b.j0);
  const Expr a0 = substitute(b.X0.normal_component(), n - 1, 0.0);

  auto Z = build_Z_system(sys, m);
  for (const auto& z : Z) {
    BoundaryField f;
    f.degree = z.degree;
    f.origin = z.word_string();
    const bool is_x0 = z.word.size() == 1 && z.word[0] == b.j0;
    if (z.degree < b.d0)
      f.b = Expr(0.0);
    else if (is_x0)
      f.b = Expr(1.0);
    else
      f.b = quotient(substitute(z.field.normal_component(), n - 1, 0.0), a0);
    if (is_x0) {
      f.field = VField::zero(n);
      f.zero = true;
    } else {
      std::vector<Expr> c(n);
      for (int k = 0; k < n; ++k) c[k] = z.field[k] - f.b * b.X0[k];
      f.field = VField(n, std::move(c));
      f.zero = f.field.is_structurally_zero();
    }
    b.X.push_back(f);

    BoundaryField v;
    v.degree = f.degree;
    v.origin = f.origin;
    v.b = f.b;
    std::vector<Expr> c(n - 1);
    for (int k = 0; k < n - 1; ++k) c[k] = substitute(f.field[k], n - 1, 0.0);
    v.field = VField(n - 1, std::move(c));
    v.zero = f.zero || v.field.is_structurally_zero();
    b.V.push_back(std::move(v));
  }

  // Shrink the boundary box until X_0 stays transversal (no sign change of
  // its normal component) and every b_j evaluates.
  double r = 0;
  for (int k = 0; k < n - 1; ++k) r = std::max(r, 0.5 * (sys.upper()[k] - sys.lower()[k]));
  if (n == 1) r = 1e-3;
  const double sign0 = eval(a0, x0) > 0 ? 1.0 : -1.0;
  const int per_axis = n - 1 <= 2 ? 33 : 9;
  for (;; r *= 0.5) {
    if (r < 1e-3) throw GeometryError("distinguished field is tangent arbitrarily close to x0");
    Point lo(n - 1), hi(n - 1);
    for (int k = 0; k < n - 1; ++k) {
      lo[k] = std::max(sys.lower()[k], x0[k] - r);
      hi[k] = std::min(sys.upper()[k], x0[k] + r);
    }
    bool ok = true;
    for (const auto& p : boundary_grid(lo, hi, per_axis, true)) {
      try {
        double a = eval(a0, p) * sign0;
        double s = 0;
        for (double c : b.X0.eval(p)) s = std::max(s, std::abs(c));
        if (a <= 0 || near_zero(a, s)) ok = false;
        for (const auto& f : b.X)
          if (!f.zero) f.field.eval(p);
      } catch (const DomainError&) {
        ok = false;
      }
      if (!ok) break;
    }
    if (ok) {
      b.box_lower = lo;
      b.box_upper = hi;
      b.radius = r;
      break;
    }
  }
  return b;
}

WeightedSystem BoundarySystem::v_system() const {
  std::vector<WeightedField> f;
  for (const auto& v : V)
    if (!v.zero) f.push_back({v.field, v.degree});
  if (f.empty()) throw GeometryError("boundary system has no nonzero fields");
  return WeightedSystem(f, box_lower, box_upper, false);
}

WeightedSystem BoundarySystem::x_system(const WeightedSystem& base) const {
  std::vector<WeightedField> f{{X0, d0}};
  for (const auto& x : X)
    if (!x.zero) f.push_back({x.field, x.degree});
  return WeightedSystem(f, base.lower(), base.upper(), base.has_boundary(), base.density());
}

std::string BoundarySystem::to_scenario(const std::string& name) const {
  std::ostringstream os;
  auto list = [&](const Point& p) {
    std::string s;
    char buf[32];
    for (std::size_t k = 0; k < p.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", p[k]);
      s += (k ? " " : "") + std::string(buf);
    }
    return s;
  };
  os << "# Boundary system induced at x0 = (" << list(x0) << ") on {x" << dim() << " = 0}\n";
  os << "# deg = " << deg << ", distinguished field W" << j0 + 1 << " (degree " << d0
     << "), Z built with m = " << order << "\n";
  os << "name = " << name << "\n";
  os << "dim = " << dim() - 1 << "\n";
  os << "lower = " << list(box_lower) << "\n";
  os << "upper = " << list(box_upper) << "\n";
  os << "boundary = false\n";
  os << "order = " << order << "\n";
  for (const auto& v : V) {
    if (v.zero) {
      os << "# zero field from Z entry " << v.origin << " (degree " << v.degree << ")\n";
      continue;
    }
    os << "# from Z entry " << v.origin << "\n";
    os << "field = \"" << v.field.to_string() << "\" degree=" << v.degree << "\n";
  }
  return os.str();
}

double tangency_residual(const BoundarySystem& bsys, int per_axis) {
  double worst = 0;
  for (const auto& p : boundary_grid(bsys.box_lower, bsys.box_upper, per_axis, true))
    for (const auto& f : bsys.X)
      if (!f.zero) worst = std::max(worst, std::abs(f.field.eval(p).back()));
  return worst;
}

double boundary_span_floor(const BoundarySystem& bsys, int per_axis) {
  const int d = bsys.dim() - 1;
  double floor = std::numeric_limits<double>::infinity();
  std::vector<const BoundaryField*> live;
  for (const auto& v : bsys.V)
    if (!v.zero) live.push_back(&v);
  for (const auto& p : boundary_grid(bsys.box_lower, bsys.box_upper, per_axis, false)) {
    Eigen::MatrixXd cols(d, live.size());
    for (std::size_t c = 0; c < live.size(); ++c) {
      auto v = live[c]->field.eval(p);
      for (int k = 0; k < d; ++k) cols(k, c) = v[k];
    }
    floor = std::min(floor, max_minor(cols).first);
  }
  return floor;
}

double bracket_closure_residual(const BoundarySystem& bsys, int per_axis) {
  const int d = bsys.dim() - 1;
  std::vector<const BoundaryField*> live;
  for (const auto& v : bsys.V)
    if (!v.zero) live.push_back(&v);
  double worst = 0;
  for (std::size_t j = 0; j < live.size(); ++j)
    for (std::size_t k = j + 1; k < live.size(); ++k) {
      VField br = lie_bracket(live[j]->field, live[k]->field);
      const int cap = live[j]->degree + live[k]->degree;
      for (const auto& p : boundary_grid(bsys.box_lower, bsys.box_upper, per_axis, false)) {
        auto bv = br.eval(p);
        Eigen::Map<const Eigen::VectorXd> target(bv.data(), d);
        std::vector<Eigen::VectorXd> cols;
        double scale = target.norm();
        for (const auto* l : live)
          if (l->degree <= cap) {
            auto v = l->field.eval(p);
            cols.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), d));
            scale = std::max(scale, cols.back().norm());
          }
        if (scale == 0) continue;
        Eigen::MatrixXd A(d, cols.size());
        for (std::size_t c = 0; c < cols.size(); ++c) A.col(c) = cols[c];
        Eigen::VectorXd coef = A.completeOrthogonalDecomposition().solve(target);
        worst = std::max(worst, (A * coef - target).norm() / scale);
      }
    }
  return worst;
}

MetricEstimate boundary_metric(const BoundarySystem& bsys, std::span<const double> x,
                               std::span<const double> y, double tol,
                               const ShootingOptions& opt) {
  const int n = bsys.dim();
  auto strip = [&](std::span<const double> p) {
    if (static_cast<int>(p.size()) == n) {
      if (std::abs(p.back()) > 1e-12) throw GeometryError("boundary point must have x_n = 0");
      return Point(p.begin(), p.end() - 1);
    }
    if (static_cast<int>(p.size()) == n - 1) return Point(p.begin(), p.end());
    throw DimensionError("boundary point arity does not match");
  };
  Point xs = strip(x), ys = strip(y);
  auto est = cc_distance(bsys.v_system(), xs, ys, Mode::Extrinsic, tol, opt);
  est.method = "boundary-shooting";
  return est;
}

}  // namespace ccgeo

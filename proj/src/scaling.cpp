#include "ccgeo/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ccgeo {

namespace {

void combinations(int q, int k, const std::function<void(const std::vector<int>&)>& fn) {
  if (k > q) return;
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  for (;;) {
    fn(idx);
    int i = k - 1;
    while (i >= 0 && idx[i] == q - k + i) --i;
    if (i < 0) return;
    ++idx[i];
    for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

double abs_det(const std::vector<Eigen::VectorXd>& cols, const std::vector<int>& pick) {
  const int n = static_cast<int>(cols.front().size());
  Eigen::MatrixXd M(n, n);
  for (int c = 0; c < n; ++c) M.col(c) = cols[pick[c]];
  return std::abs(M.determinant());
}

double inf_norm(std::span<const double> v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// per_axis nodes in [-1, 1] on the first n-1 axes and in [c0, 1] on the last.
std::vector<Point> cube_grid(int n, int per_axis, double c0) {
  Point lo(n, -1.0), hi(n, 1.0);
  lo[n - 1] = c0;
  std::vector<Point> out;
  std::vector<int> idx(n, 0);
  for (;;) {
    Point s(n);
    for (int k = 0; k < n; ++k)
      s[k] = per_axis == 1 ? 0.5 * (lo[k] + hi[k]) : lo[k] + (hi[k] - lo[k]) * idx[k] / (per_axis - 1);
    out.push_back(std::move(s));
    int k = 0;
    while (k < n && ++idx[k] == per_axis) idx[k++] = 0;
    if (k == n) break;
  }
  return out;
}

}  // namespace

int minimal_order(const WeightedSystem& sys, std::span<const double> x, int m_max) {
  for (int m = 1; m <= m_max; ++m)
    if (check_span_at(enumerate_commutators(sys, m), x).valid) return m;
  throw GeometryError("Hormander condition fails at the point up to order " + std::to_string(m_max));
}

LambdaReport compute_lambda(const WeightedSystem& sys, std::span<const double> x, double delta, int m) {
  if (delta < 0) throw DimensionError("delta must be >= 0");
  LambdaReport rep;
  rep.x.assign(x.begin(), x.end());
  rep.delta = delta;
  auto Z = build_Z_system(sys, m);
  if (!check_span_at(Z, x).valid)
    throw GeometryError("Hormander certificate of order " + std::to_string(m) + " is invalid at x");
  if (delta == 0) return rep;
  const int n = sys.dim();
  std::vector<Eigen::VectorXd> cols;
  for (const auto& z : Z) {
    auto v = z.field.eval(x);
    cols.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), n) * std::pow(delta, z.degree));
  }
  const double h = sys.density_at(x);
  combinations(static_cast<int>(Z.size()), n, [&](const std::vector<int>& pick) {
    double d = h * abs_det(cols, pick);
    rep.table.emplace_back(pick, d);
    if (d > rep.value) {
      rep.value = d;
      rep.argmax = pick;
    }
  });
  return rep;
}

double doubling_ratio(const WeightedSystem& sys, std::span<const double> x, double delta, int m) {
  if (!(delta > 0)) throw DimensionError("doubling ratio needs delta > 0");
  double a = compute_lambda(sys, x, delta, m).value;
  if (a == 0) throw GeometryError("Lambda(x, delta) vanishes");
  return compute_lambda(sys, x, 2 * delta, m).value / a;
}

BasisChoice select_basis(const std::vector<WeightedField>& candidates, std::span<const double> x,
                         double delta, double zeta, int distinguished,
                         const std::vector<int>* previous) {
  if (!(zeta > 0 && zeta <= 1)) throw DimensionError("zeta must lie in (0, 1]");
  if (candidates.empty()) throw DimensionError("no candidate fields");
  const int n = candidates.front().field.dim();
  std::vector<Eigen::VectorXd> cols;
  for (const auto& c : candidates) {
    auto v = c.field.eval(x);
    cols.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), n) * std::pow(delta, c.degree));
  }
  BasisChoice best;
  double global = 0;
  combinations(static_cast<int>(candidates.size()), n, [&](const std::vector<int>& pick) {
    double d = abs_det(cols, pick);
    global = std::max(global, d);
    if (distinguished >= 0 && std::find(pick.begin(), pick.end(), distinguished) == pick.end()) return;
    if (d > best.det) {
      best.det = d;
      best.slots = pick;
    }
  });
  best.max_det = global;
  if (best.slots.empty() || best.det <= 0) throw GeometryError("no spanning subset of the candidates");
  auto order = [&](std::vector<int> s) {
    if (distinguished >= 0) {
      s.erase(std::find(s.begin(), s.end(), distinguished));
      s.push_back(distinguished);
    }
    return s;
  };
  if (previous && static_cast<int>(previous->size()) == n) {
    std::vector<int> p = *previous;
    bool ok = std::all_of(p.begin(), p.end(), [&](int i) { return i >= 0 && i < static_cast<int>(cols.size()); });
    if (ok && (distinguished < 0 || p.back() == distinguished)) {
      double d = abs_det(cols, p);
      if (d >= zeta * global && d > 0) {
        best.slots = p;
        best.det = d;
        return best;
      }
    }
  }
  best.slots = order(best.slots);
  return best;
}

double ScalingConfig::sigma_for(int n) const { return sigma > 0 ? sigma : 0.5 / std::sqrt(double(n)); }

bool ball_touches_boundary(const WeightedSystem& sys, std::span<const double> x, double delta,
                           int samples, std::uint64_t seed) {
  if (!sys.has_boundary()) return false;
  if (x.back() <= 0) return true;
  auto rs = sample_ball(sys.ambient(), x, delta, samples, 8, seed, Mode::Extrinsic);
  for (const auto& e : rs.endpoints)
    if (e.back() <= 0) return true;
  return false;
}

ScalingMap::ScalingMap(const WeightedSystem& sys, const BoundarySystem* bsys,
                       std::span<const double> base, double delta, const ScalingConfig& cfg,
                       const std::vector<int>* previous)
    : n_(sys.dim()), base_(base.begin(), base.end()), delta_(delta), cfg_(cfg) {
  if (static_cast<int>(base.size()) != n_) throw DimensionError("base point arity does not match");
  if (!(delta > 0) || delta > cfg.delta_cap)
    throw GeometryError("delta must lie in (0, delta_cap]");
  sigma_ = cfg.sigma_for(n_);
  const int m = cfg.order > 0 ? cfg.order : minimal_order(sys, base);
  near_ = bsys && sys.has_boundary() &&
          (base_.back() <= 1e-12 || ball_touches_boundary(sys, base, delta, cfg.touch_samples));
  if (near_) {
    anchor_ = base_;
    anchor_.back() = 0.0;
    for (int k = 0; k < n_ - 1; ++k)
      if (anchor_[k] < bsys->box_lower[k] || anchor_[k] > bsys->box_upper[k])
        throw GeometryError("base point lies outside the boundary system's neighborhood");
    candidates_ = bsys->x_system(sys).fields();
    basis_ = select_basis(candidates_, anchor_, delta, cfg.zeta, 0, previous);
    omega_ = bsys->X0.normal_component().is_zero() ? 1 : (eval(bsys->X0.normal_component(), anchor_) > 0 ? 1 : -1);
  } else {
    anchor_ = base_;
    for (const auto& z : build_Z_system(sys, m)) candidates_.push_back({z.field, z.degree});
    basis_ = select_basis(candidates_, base_, delta, cfg.zeta, -1, previous);
  }
  std::vector<VField> fields;
  for (int k = 0; k < n_; ++k) {
    const auto& c = candidates_[basis_.slots[k]];
    selected_.push_back(c);
    fields.push_back(c.field);
    scale_.push_back(std::pow(delta, c.degree));
  }
  if (near_) scale_.back() *= omega_;
  bundle_ = std::make_shared<FieldBundle>(fields, n_);
  integ_ = std::make_unique<Integrator>(*bundle_, FlowConfig::guarded(sys, 16));

  tau_.assign(n_, 0.0);
  if (near_) {
    auto t = invert(base_, Point(n_, 0.0));
    if (!t) throw GeometryError("could not place the base point in the boundary chart");
    tau_ = *t;
    c0_ = std::clamp(-tau_.back() / sigma_, -1.0, 0.0);
  }
}

Point ScalingMap::psi(std::span<const double> t) const {
  Point x = anchor_;
  std::vector<double> c(n_, 0.0);
  if (near_) {
    for (int k = 0; k < n_ - 1; ++k) c[k] = t[k] * scale_[k];
    integ_->flow_steps(c, 1.0, cfg_.flow_steps, x);
    std::fill(c.begin(), c.end(), 0.0);
    c[n_ - 1] = t[n_ - 1] * scale_[n_ - 1];
    integ_->flow_steps(c, 1.0, cfg_.flow_steps, x);
  } else {
    for (int k = 0; k < n_; ++k) c[k] = t[k] * scale_[k];
    integ_->flow_steps(c, 1.0, cfg_.flow_steps, x);
  }
  return x;
}

Point ScalingMap::t_of(std::span<const double> s) const {
  Point t(n_);
  for (int k = 0; k < n_; ++k) t[k] = tau_[k] + sigma_ * s[k];
  return t;
}

Point ScalingMap::Psi(std::span<const double> s) const { return psi(t_of(s)); }

Eigen::MatrixXd ScalingMap::jacobian(std::span<const double> t) const {
  Eigen::MatrixXd J(n_, n_);
  Point tp(t.begin(), t.end()), tm(t.begin(), t.end());
  for (int k = 0; k < n_; ++k) {
    const double h = cfg_.fd_step * (1.0 + std::abs(t[k]));
    tp[k] = t[k] + h;
    tm[k] = t[k] - h;
    auto a = psi(tp), b = psi(tm);
    for (int i = 0; i < n_; ++i) J(i, k) = (a[i] - b[i]) / (2 * h);
    tp[k] = tm[k] = t[k];
  }
  return J;
}

namespace {

Eigen::VectorXd solve_pullback(const Eigen::MatrixXd& J, const Eigen::VectorXd& v,
                               std::span<const double> t) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
  if (lu.rank() < J.rows()) {
    std::string where;
    for (double x : t) where += (where.empty() ? "" : ", ") + std::to_string(x);
    throw GeometryError("singular scaling-map Jacobian at t = (" + where + ")");
  }
  return lu.solve(v);
}

}  // namespace

Eigen::VectorXd ScalingMap::pullback(const VField& V, double scale, std::span<const double> t) const {
  auto p = psi(t);
  auto v = V.eval(p);
  Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(v.data(), n_) * scale;
  return solve_pullback(jacobian(t), rhs, t);
}

std::optional<Point> ScalingMap::invert(std::span<const double> p, const Point& start) const {
  Point t = start.empty() ? tau_ : start;
  Eigen::Map<const Eigen::VectorXd> target(p.data(), n_);
  try {
    for (int it = 0; it < 50; ++it) {
      Point x = psi(t);
      Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(x.data(), n_) - target;
      Eigen::FullPivLU<Eigen::MatrixXd> lu(jacobian(t));
      if (lu.rank() < n_) return std::nullopt;
      Eigen::VectorXd dt = lu.solve(r);
      double lambda = 1.0;
      Point trial(n_);
      for (;;) {
        for (int k = 0; k < n_; ++k) trial[k] = t[k] - lambda * dt(k);
        Point y = psi(trial);
        double rn = (Eigen::Map<const Eigen::VectorXd>(y.data(), n_) - target).norm();
        if (rn <= r.norm() || lambda < 1.0 / 64) break;
        lambda *= 0.5;
      }
      t = trial;
      if (lambda * dt.lpNorm<Eigen::Infinity>() < 1e-10) {
        Point y = psi(t);
        double miss = (Eigen::Map<const Eigen::VectorXd>(y.data(), n_) - target).lpNorm<Eigen::Infinity>();
        if (miss > 1e-8 * (1.0 + target.lpNorm<Eigen::Infinity>())) return std::nullopt;
        return t;
      }
    }
  } catch (const FlowError&) {
  } catch (const DomainError&) {
  }
  return std::nullopt;
}

std::optional<Point> ScalingMap::invert_s(std::span<const double> p) const {
  auto t = invert(p, tau_);
  if (!t) return std::nullopt;
  Point s(n_);
  for (int k = 0; k < n_; ++k) s[k] = ((*t)[k] - tau_[k]) / sigma_;
  return s;
}

PullbackReport check_pullbacks(const ScalingMap& map, const WeightedSystem& sys,
                               const BoundarySystem* bsys, int per_axis) {
  PullbackReport rep;
  const int n = map.dim();
  {
    Point zero(n, 0.0);
    auto p = map.Psi(zero);
    for (int k = 0; k < n; ++k) rep.psi0_error = std::max(rep.psi0_error, std::abs(p[k] - map.base()[k]));
  }
  const int m = minimal_order(sys, map.base());
  const double lambda = compute_lambda(sys, map.base(), map.delta(), m).value;
  rep.density_min = std::numeric_limits<double>::infinity();
  rep.density_max = 0;
  std::vector<Point> images;
  for (const auto& s : cube_grid(n, per_axis, map.c0())) {
    auto t = map.t_of(s);
    auto p = map.psi(t);
    auto J = map.jacobian(t);
    for (int j = 0; j < sys.size(); ++j) {
      auto v = sys.field(j).eval(p);
      Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(v.data(), n) * std::pow(map.delta(), sys.degree(j));
      Eigen::VectorXd w = solve_pullback(J, rhs, t);
      double denom = std::max(rhs.norm(), 1e-300);
      if (rhs.norm() > 0) rep.identity_residual = std::max(rep.identity_residual, (J * w - rhs).norm() / denom);
    }
    if (map.near_boundary() && bsys) {
      auto v = bsys->X0.eval(p);
      Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(v.data(), n) * std::pow(map.delta(), bsys->d0);
      Eigen::VectorXd w = solve_pullback(J, rhs, t);
      Eigen::VectorXd target = Eigen::VectorXd::Zero(n);
      target(n - 1) = map.omega();
      rep.distinguished_residual = std::max(rep.distinguished_residual, (w - target).lpNorm<Eigen::Infinity>());
    }
    double h = sys.ambient().density_at(p);
    double dens = std::abs(J.determinant()) * h / lambda;
    rep.density_min = std::min(rep.density_min, dens);
    rep.density_max = std::max(rep.density_max, dens);
    images.push_back(p);
  }
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = i + 1; j < images.size(); ++j) {
      double d = 0;
      for (int k = 0; k < n; ++k) d = std::max(d, std::abs(images[i][k] - images[j][k]));
      if (d < 1e-9) rep.injective = false;
    }
  // Boundary slice t_n = 0.
  if (map.near_boundary() && bsys) {
    for (const auto& s : cube_grid(n, per_axis, map.c0())) {
      auto t = map.t_of(s);
      t[n - 1] = 0.0;
      auto p = map.psi(t);
      auto J = map.jacobian(t);
      for (const auto& f : bsys->X) {
        if (f.zero) continue;
        auto v = f.field.eval(p);
        Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(v.data(), n) * std::pow(map.delta(), f.degree);
        Eigen::VectorXd w = solve_pullback(J, rhs, t);
        rep.tangential_normal = std::max(rep.tangential_normal, std::abs(w(n - 1)));
      }
    }
  }
  return rep;
}

NumField numeric_bracket(NumField a, NumField b, double h) {
  return [a = std::move(a), b = std::move(b), h](const Eigen::VectorXd& u) {
    const int n = static_cast<int>(u.size());
    Eigen::VectorXd av = a(u), bv = b(u);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd up = u, um = u;
    for (int i = 0; i < n; ++i) {
      up(i) = u(i) + h;
      um(i) = u(i) - h;
      Eigen::VectorXd db = (b(up) - b(um)) / (2 * h);
      Eigen::VectorXd da = (a(up) - a(um)) / (2 * h);
      out += av(i) * db - bv(i) * da;
      up(i) = um(i) = u(i);
    }
    return out;
  };
}

UniformSpanReport uniform_span(const ScalingMap& map, const WeightedSystem& sys, int m, int per_axis) {
  const int n = map.dim();
  std::vector<NumField> gens;
  for (int j = 0; j < sys.size(); ++j) {
    const VField W = sys.field(j);
    const double scale = std::pow(map.delta(), sys.degree(j)) / map.sigma();
    gens.push_back([&map, W, scale, n](const Eigen::VectorXd& s) {
      Point sp(s.data(), s.data() + n);
      return Eigen::VectorXd(map.pullback(W, scale, map.t_of(sp)));
    });
  }
  // Right-nested words, innermost pair increasing, as in the symbolic enumeration.
  std::vector<NumField> words = gens;
  std::vector<std::pair<NumField, int>> level;  // (field, innermost letter) for the previous length
  for (int j = 0; j < sys.size(); ++j) level.emplace_back(gens[j], j);
  const double h = 1e-3;
  for (int len = 2; len <= m; ++len) {
    std::vector<std::pair<NumField, int>> next;
    for (const auto& [inner, first] : level)
      for (int a = 0; a < sys.size(); ++a) {
        if (len == 2 && a >= first) continue;
        next.emplace_back(numeric_bracket(gens[a], inner, h), a);
      }
    for (const auto& [f, first] : next) words.push_back(f);
    level = std::move(next);
  }
  UniformSpanReport rep;
  rep.floor = std::numeric_limits<double>::infinity();
  for (const auto& s : cube_grid(n, per_axis, map.c0())) {
    Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(s.data(), n);
    Eigen::MatrixXd cols(n, words.size());
    for (std::size_t w = 0; w < words.size(); ++w) {
      cols.col(w) = words[w](u);
      if (static_cast<int>(w) < sys.size()) rep.sup_norm = std::max(rep.sup_norm, cols.col(w).lpNorm<Eigen::Infinity>());
    }
    double d = max_minor(cols).first;
    if (d < rep.floor) {
      rep.floor = d;
      rep.argmin = s;
    }
  }
  return rep;
}

double SandwichReport::inner_fraction_at(double xi) const {
  for (const auto& [x, f] : inner_fractions)
    if (x == xi) return f;
  return -1.0;
}

double sandwich_inner_fraction(const ScalingMap& map, const WeightedSystem& sys, double xi,
                               const SandwichOptions& opt, int* newton_failures) {
  const int n = map.dim();
  // Saturated controls (each segment on the 0.999-sphere) reach the edge of
  // the ball, which uniform-in-ball controls rarely do.
  const auto amb = sys.ambient();
  const auto fcfg = FlowConfig::guarded(sys, 256);
  std::mt19937_64 rng(stream_seed(opt.seed, 7));
  std::normal_distribution<double> gauss;
  int count = 0, pass = 0;
  for (int i = 0; i < opt.inner_samples; ++i) {
    ControlPath path(1 << (i % 4), sys.size());
    for (int k = 0; k < path.segments; ++k) {
      auto seg = path.segment(k);
      double norm = 0;
      for (auto& a : seg) {
        a = gauss(rng);
        norm += a * a;
      }
      norm = std::sqrt(norm);
      for (auto& a : seg) a *= 0.999 / std::max(norm, 1e-300);
    }
    auto res = integrate_control(amb, map.base(), xi * map.delta(), path, Mode::Extrinsic, fcfg);
    if (!res.feasible) continue;
    const auto& e = res.endpoint;
    if (sys.has_boundary() && e.back() < 0) continue;
    auto s = map.invert_s(e);
    if (!s) {
      if (newton_failures) ++*newton_failures;
      continue;
    }
    ++count;
    if (inf_norm(*s) < opt.eta1 + 1e-9 && (*s)[n - 1] >= map.c0() - 1e-9) ++pass;
  }
  return count == 0 ? 1.0 : static_cast<double>(pass) / count;
}

SandwichReport verify_sandwich(const ScalingMap& map, const WeightedSystem& sys,
                               const SandwichOptions& opt) {
  SandwichReport rep;
  rep.eta1 = opt.eta1;
  rep.c0 = map.c0();
  const int n = map.dim();
  const Mode mode = sys.has_boundary() ? Mode::Intrinsic : Mode::Extrinsic;
  ReachGrid grid = ball_grid(sys, map.base(), map.delta() * (1 + opt.outer_tol), mode, 0,
                             stream_seed(opt.seed, 3), opt.jobs);
  std::mt19937_64 rng(stream_seed(opt.seed, 5));
  std::uniform_real_distribution<double> unif(-1.0, 1.0), last(map.c0(), 1.0);
  std::vector<Point> samples;
  for (int c = 0; c < (1 << n); ++c) {
    Point s(n);
    for (int k = 0; k < n; ++k) s[k] = (c >> k) & 1 ? 1.0 : -1.0;
    s[n - 1] = (c >> (n - 1)) & 1 ? 1.0 : map.c0();
    samples.push_back(s);
  }
  for (int i = 0; i < opt.outer_samples; ++i) {
    Point s(n);
    for (int k = 0; k < n - 1; ++k) s[k] = unif(rng);
    s[n - 1] = last(rng);
    samples.push_back(s);
  }
  int inside = 0;
  for (const auto& s : samples) {
    bool ok = false;
    try {
      auto p = map.Psi(s);
      ok = grid.contains(p, 1.0, 1) && (mode == Mode::Extrinsic || p.back() >= -1e-9);
      if (!ok) rep.outer_failures.push_back(p);
    } catch (const FlowError&) {
    }
    inside += ok;
  }
  rep.outer_fraction = static_cast<double>(inside) / samples.size();
  rep.outer_pass = rep.outer_fraction >= opt.pass_fraction;
  for (double xi : opt.xi_ladder) {
    double f = sandwich_inner_fraction(map, sys, xi, opt, &rep.newton_failures);
    rep.inner_fractions.emplace_back(xi, f);
    if (f >= opt.pass_fraction) {
      rep.xi1 = xi;
      break;
    }
  }
  return rep;
}

}  // namespace ccgeo

#include "ccgeo/ccmetric.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <tuple>
#include <queue>
#include <random>
#include <sstream>

#include <json.hpp>

#include "ccgeo/parallel.hpp"

namespace ccgeo {

const char* mode_name(Mode mode) { return mode == Mode::Intrinsic ? "intrinsic" : "extrinsic"; }

Mode parse_mode(const std::string& text) {
  if (text == "intrinsic") return Mode::Intrinsic;
  if (text == "extrinsic") return Mode::Extrinsic;
  throw DimensionError("unknown mode '" + text + "' (expected intrinsic or extrinsic)");
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

FlowConfig effective_config(const WeightedSystem& sys, const FlowConfig& cfg) {
  if (!cfg.guard_lower.empty()) return cfg;
  return FlowConfig::guarded(sys, cfg.steps_per_unit);
}

void watch_domain(Integrator& integ, const WeightedSystem& sys, Mode mode) {
  Point lo = sys.lower(), hi = sys.upper();
  for (auto& v : lo) v -= kBoundaryTolerance;
  for (auto& v : hi) v += kBoundaryTolerance;
  if (mode == Mode::Intrinsic && sys.has_boundary())
    lo.back() = std::max(sys.lower().back(), 0.0) - kBoundaryTolerance;
  integ.set_watch(std::move(lo), std::move(hi));
}

bool start_ok(const WeightedSystem& sys, std::span<const double> x, Mode mode) {
  if (mode == Mode::Intrinsic) return sys.contains(x, kBoundaryTolerance);
  return sys.ambient().contains(x, kBoundaryTolerance);
}

std::vector<double> delta_powers(const WeightedSystem& sys, double delta) {
  std::vector<double> out(sys.size());
  for (int j = 0; j < sys.size(); ++j) out[j] = std::pow(delta, sys.degree(j));
  return out;
}

double dist(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

ControlResult run_control(Integrator& integ, const WeightedSystem& sys,
                          std::span<const double> x, const std::vector<double>& scale,
                          const ControlPath& path, Mode mode) {
  ControlResult res;
  res.endpoint.assign(x.begin(), x.end());
  std::vector<double> c(sys.size());
  double lowest = std::numeric_limits<double>::infinity();
  watch_domain(integ, sys, mode);
  bool ok = true;
  try {
    for (int k = 0; k < path.segments; ++k) {
      auto seg = path.segment(k);
      for (int j = 0; j < sys.size(); ++j) c[j] = seg[j] * scale[j];
      integ.flow(c, 1.0 / path.segments, res.endpoint, &lowest);
    }
  } catch (const FlowError&) {
    ok = false;
  }
  res.feasible = ok && !integ.watch_violated();
  if (mode == Mode::Intrinsic && sys.has_boundary() && lowest < -kBoundaryTolerance)
    res.feasible = false;
  return res;
}

}  // namespace

// ---------------------------------------------------------------------------
// Controls

ControlPath::ControlPath(int segments_, int controls_)
    : segments(segments_), controls(controls_), a(static_cast<std::size_t>(segments_) * controls_) {
  if (segments < 1) throw DimensionError("a control path needs K >= 1 segments");
}

double ControlPath::peak_energy() const {
  double peak = 0;
  for (int k = 0; k < segments; ++k) {
    double e = 0;
    for (double v : segment(k)) e += v * v;
    peak = std::max(peak, e);
  }
  return peak;
}

ControlResult integrate_control(const WeightedSystem& sys, std::span<const double> x, double delta,
                                const ControlPath& path, Mode mode, const FlowConfig& cfg) {
  if (path.controls != sys.size()) throw DimensionError("control path has the wrong width");
  if (!path.admissible()) throw GeometryError("inadmissible control: sum of squares must be < 1");
  if (!start_ok(sys, x, mode)) throw GeometryError("start point is outside the domain");
  Integrator integ(sys.bundle(), effective_config(sys, cfg));
  return run_control(integ, sys, x, delta_powers(sys, delta), path, mode);
}

// ---------------------------------------------------------------------------
// Sampling

std::pair<Point, Point> ReachSample::extents() const {
  Point lo = base, hi = base;
  for (std::size_t i = 0; i < endpoints.size(); ++i) {
    if (!feasible[i]) continue;
    for (std::size_t k = 0; k < lo.size(); ++k) {
      lo[k] = std::min(lo[k], endpoints[i][k]);
      hi[k] = std::max(hi[k], endpoints[i][k]);
    }
  }
  return {lo, hi};
}

std::string ReachSample::to_csv() const {
  std::string out;
  for (std::size_t k = 0; k < base.size(); ++k) out += "x" + std::to_string(k + 1) + ",";
  out += "feasible\n";
  char buf[40];
  for (std::size_t i = 0; i < endpoints.size(); ++i) {
    for (double v : endpoints[i]) {
      std::snprintf(buf, sizeof(buf), "%.17g,", v);
      out += buf;
    }
    out += feasible[i] ? "1\n" : "0\n";
  }
  return out;
}

ReachSample sample_ball(const WeightedSystem& sys, std::span<const double> x, double delta,
                        int n_samples, int segments, std::uint64_t seed, Mode mode, int jobs,
                        const FlowConfig* cfg) {
  if (n_samples < 1 || segments < 1) throw DimensionError("sample_ball needs samples >= 1 and K >= 1");
  if (!start_ok(sys, x, mode)) throw GeometryError("start point is outside the domain");
  ReachSample rs;
  rs.base.assign(x.begin(), x.end());
  rs.delta = delta;
  rs.segments = segments;
  rs.samples = n_samples;
  rs.seed = seed;
  rs.mode = mode;
  rs.endpoints.resize(n_samples);
  std::vector<char> feasible(n_samples, 0);

  const FlowConfig fc = effective_config(sys, cfg ? *cfg : FlowConfig{});
  const auto scale = delta_powers(sys, delta);
  const int r = sys.size();
  jobs = std::max(1, jobs);
  std::vector<std::unique_ptr<Integrator>> workers;
  for (int w = 0; w < jobs; ++w) workers.push_back(std::make_unique<Integrator>(sys.bundle(), fc));

  parallel_for(static_cast<std::size_t>(n_samples), jobs, [&](int w, std::size_t i) {
    std::mt19937_64 rng(stream_seed(seed, i));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    ControlPath path(segments, r);
    for (int k = 0; k < segments; ++k) {
      auto seg = path.segment(k);
      double norm = 0;
      do {
        norm = 0;
        for (int j = 0; j < r; ++j) {
          seg[j] = gauss(rng);
          norm += seg[j] * seg[j];
        }
      } while (norm == 0.0);
      double mag = 0.999 * std::pow(unif(rng), 1.0 / r) / std::sqrt(norm);
      for (int j = 0; j < r; ++j) seg[j] *= mag;
    }
    auto res = run_control(*workers[w], sys, x, scale, path, mode);
    rs.endpoints[i] = std::move(res.endpoint);
    feasible[i] = res.feasible;
  });
  rs.feasible.assign(feasible.begin(), feasible.end());
  return rs;
}

// ---------------------------------------------------------------------------
// Metric estimates

std::string MetricEstimate::to_json(const std::string& params_json) const {
  nlohmann::json j;
  j["lower"] = lower;
  if (std::isfinite(upper))
    j["upper"] = upper;
  else
    j["upper"] = nullptr;
  j["method"] = method;
  j["converged"] = converged;
  j["params"] = nlohmann::json::parse(params_json);
  return j.dump();
}

// ---------------------------------------------------------------------------
// Reach grid

ReachGrid::ReachGrid(Point anchor, Point spacing)
    : anchor_(std::move(anchor)), spacing_(std::move(spacing)) {
  if (anchor_.size() != spacing_.size() || anchor_.empty())
    throw DimensionError("grid anchor and spacing disagree");
  for (double h : spacing_)
    if (!(h > 0.0)) throw DimensionError("grid spacing must be positive");
  bits_ = static_cast<int>(64 / anchor_.size());
}

std::int64_t ReachGrid::key(std::span<const double> p) const {
  std::uint64_t k = 0;
  const std::int64_t offset = std::int64_t{1} << (bits_ - 1);
  for (std::size_t a = 0; a < anchor_.size(); ++a) {
    double c = std::floor((p[a] - anchor_[a]) / spacing_[a] + 0.5);
    if (!(std::abs(c) < static_cast<double>(offset - 1))) throw DimensionError("point is off the grid");
    k = (k << bits_) | static_cast<std::uint64_t>(static_cast<std::int64_t>(c) + offset);
  }
  return static_cast<std::int64_t>(k);
}

std::vector<int> ReachGrid::cell_index(std::int64_t key) const {
  const std::int64_t offset = std::int64_t{1} << (bits_ - 1);
  const std::uint64_t mask = bits_ == 64 ? ~0ULL : ((1ULL << bits_) - 1);
  std::vector<int> idx(anchor_.size());
  auto k = static_cast<std::uint64_t>(key);
  for (std::size_t a = anchor_.size(); a-- > 0;) {
    idx[a] = static_cast<int>(static_cast<std::int64_t>(k & mask) - offset);
    k >>= bits_;
  }
  return idx;
}

double ReachGrid::time_of(std::int64_t k) const {
  auto it = cells_.find(k);
  return it == cells_.end() ? std::numeric_limits<double>::infinity() : it->second;
}

bool ReachGrid::relax(std::int64_t k, double time) {
  auto [it, inserted] = cells_.try_emplace(k, time);
  if (inserted) return true;
  if (time < it->second) {
    it->second = time;
    return true;
  }
  return false;
}

bool ReachGrid::contains(std::span<const double> p, double budget, int slack) const {
  if (slack == 0) return time_of(key(p)) <= budget;
  const std::size_t n = anchor_.size();
  std::vector<int> off(n, -slack);
  Point q(n);
  for (;;) {
    for (std::size_t a = 0; a < n; ++a) q[a] = p[a] + off[a] * spacing_[a];
    if (time_of(key(q)) <= budget) return true;
    std::size_t a = 0;
    while (a < n && ++off[a] > slack) off[a++] = -slack;
    if (a == n) return false;
  }
}

std::pair<Point, Point> ReachGrid::bounds(double budget) const {
  const std::size_t n = anchor_.size();
  Point lo(n, std::numeric_limits<double>::infinity()), hi(n, -std::numeric_limits<double>::infinity());
  for (const auto& [k, t] : cells_) {
    if (t > budget) continue;
    auto idx = cell_index(k);
    for (std::size_t a = 0; a < n; ++a) {
      double c = anchor_[a] + idx[a] * spacing_[a];
      lo[a] = std::min(lo[a], c - 0.5 * spacing_[a]);
      hi[a] = std::max(hi[a], c + 0.5 * spacing_[a]);
    }
  }
  return {lo, hi};
}

std::vector<std::vector<double>> control_directions(int r) {
  std::vector<std::vector<double>> dirs;
  if (r == 1) return {{1.0}, {-1.0}};
  if (r == 2) {
    for (int i = 0; i < 16; ++i) {
      double th = 2.0 * M_PI * i / 16.0;
      dirs.push_back({std::cos(th), std::sin(th)});
    }
    return dirs;
  }
  for (int i = 0; i < r; ++i)
    for (double s : {1.0, -1.0}) {
      std::vector<double> d(r, 0.0);
      d[i] = s;
      dirs.push_back(d);
    }
  const double c = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < r; ++i)
    for (int j = i + 1; j < r; ++j)
      for (double si : {1.0, -1.0})
        for (double sj : {1.0, -1.0}) {
          std::vector<double> d(r, 0.0);
          d[i] = si * c;
          d[j] = sj * c;
          dirs.push_back(d);
        }
  return dirs;
}

ReachGrid reach_search(const WeightedSystem& sys, std::span<const double> x, double delta,
                       Mode mode, const Point& anchor, const Point& spacing, double budget,
                       const Point* target, std::size_t max_cells, ReachRun* run,
                       int cells_per_edge) {
  if (cells_per_edge < 1) throw DimensionError("cells_per_edge must be >= 1");
  ReachRun local;
  ReachRun& info = run ? *run : local;
  info = ReachRun{};
  ReachGrid grid(anchor, spacing);
  const int n = sys.dim();
  const auto scale = delta_powers(sys, delta);
  auto dirs = control_directions(sys.size());
  std::vector<std::vector<double>> coeffs;
  for (const auto& u : dirs) {
    std::vector<double> c(u.size());
    for (std::size_t j = 0; j < u.size(); ++j) c[j] = u[j] * scale[j];
    coeffs.push_back(std::move(c));
  }
  Integrator integ(sys.bundle(), FlowConfig::guarded(sys, 16));
  watch_domain(integ, sys, mode);

  std::vector<Point> points{Point(x.begin(), x.end())};
  std::unordered_map<std::int64_t, std::size_t> rep;
  using Item = std::tuple<double, std::int64_t, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  const std::int64_t start = grid.key(x);
  grid.relax(start, 0.0);
  rep[start] = 0;
  pq.emplace(0.0, start, 0);
  const std::int64_t tkey = target ? grid.key(*target) : 0;
  std::vector<double> v(n);

  auto cell_step = [&](const Point& p, int d) {
    integ.velocity(coeffs[d], p, v);
    double tau = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k)
      if (std::abs(v[k]) > 1e-300) tau = std::min(tau, spacing[k] / std::abs(v[k]));
    return std::min(tau, 0.25 / cells_per_edge);
  };
  const double cell_edge = cells_per_edge;

  while (!pq.empty()) {
    auto [t, k, idx] = pq.top();
    pq.pop();
    if (rep[k] != idx || t > grid.time_of(k)) continue;
    const Point p = points[idx];
    if (target && k == tkey) {
      info.target_time = t;
      double s = std::numeric_limits<double>::infinity();
      for (std::size_t d = 0; d < coeffs.size(); ++d) s = std::min(s, cell_step(p, d));
      info.target_step = s;
      break;
    }
    ++info.expanded;
    for (std::size_t d = 0; d < coeffs.size(); ++d) {
      try {
        double tau = cell_edge * cell_step(p, d);
        if (!std::isfinite(tau)) continue;
        // The last edge is cut to the remaining budget.
        tau = std::min(tau, budget - t);
        if (!(tau > 1e-12)) continue;
        Point q = p;
        double lowest = std::numeric_limits<double>::infinity();
        integ.reset_watch();
        integ.flow_steps(coeffs[d], tau, 2 * cells_per_edge, q, &lowest);
        if (integ.watch_violated()) continue;
        if (mode == Mode::Intrinsic && sys.has_boundary() && lowest < -kBoundaryTolerance) continue;
        const std::int64_t kq = grid.key(q);
        if (grid.relax(kq, t + tau)) {
          rep[kq] = points.size();
          points.push_back(std::move(q));
          pq.emplace(t + tau, kq, points.size() - 1);
        }
      } catch (const FlowError&) {
      } catch (const DomainError&) {
      }
    }
    if (grid.size() > max_cells) {
      info.truncated = true;
      break;
    }
  }
  return grid;
}

namespace {

// Smallest true / largest false of a predicate assumed monotone in delta,
// located by doubling/halving from `guess` and geometric bisection.
std::pair<double, double> bracket(const std::function<bool(double)>& pred, double guess,
                                  double lo_limit, double hi_limit, double rel) {
  double f = 0.0, t = std::numeric_limits<double>::infinity();
  double d = std::clamp(guess, lo_limit, hi_limit);
  if (pred(d)) {
    t = d;
    while (d > lo_limit) {
      d = std::max(d / 2, lo_limit);
      if (pred(d)) {
        t = d;
      } else {
        f = d;
        break;
      }
      if (d == lo_limit) break;
    }
    if (f == 0.0) return {0.0, t};
  } else {
    f = d;
    while (d < hi_limit) {
      d = std::min(d * 2, hi_limit);
      if (pred(d)) {
        t = d;
        break;
      }
      f = d;
    }
    if (!std::isfinite(t)) return {f, t};
  }
  while (t / f > 1.0 + rel) {
    double m = std::sqrt(f * t);
    if (pred(m))
      t = m;
    else
      f = m;
  }
  return {f, t};
}

double initial_guess(const WeightedSystem& sys, std::span<const double> x,
                     std::span<const double> y) {
  double d = dist(x, y);
  int D = sys.size() < sys.dim() ? 2 * sys.max_degree() : sys.max_degree();
  return std::pow(d, 1.0 / D);
}

}  // namespace

MetricEstimate oracle_distance(const WeightedSystem& sys, std::span<const double> x,
                               std::span<const double> y, Mode mode, const OracleOptions& opt) {
  MetricEstimate est;
  est.method = "oracle";
  if (dist(x, y) == 0.0) {
    est.upper = 0.0;
    return est;
  }
  if (!start_ok(sys, x, mode) || !start_ok(sys, y, mode))
    throw GeometryError("oracle endpoints must lie in the domain");
  const Point anchor(y.begin(), y.end());
  const Point spacing(sys.dim(), opt.resolution);
  const double res = opt.resolution;

  struct Eval {
    bool upper_ok, lower_ok;
  };
  std::vector<std::pair<double, Eval>> cache;
  auto evaluate = [&](double delta) -> Eval {
    for (const auto& [d, e] : cache)
      if (d == delta) return e;
    ReachRun run;
    reach_search(sys, x, delta, mode, anchor, spacing, 1.0 + res + 0.25, &anchor, opt.max_cells,
                 &run);
    Eval e{};
    if (std::isfinite(run.target_time)) {
      e.upper_ok = run.target_time + run.target_step <= 1.0;
      e.lower_ok = run.target_time <= 1.0 + res + run.target_step;
    } else {
      e.upper_ok = false;
      e.lower_ok = run.truncated;
    }
    cache.emplace_back(delta, e);
    return e;
  };
  const double guess = initial_guess(sys, x, y);
  const double lo_limit = 1e-6;
  auto up = bracket([&](double d) { return evaluate(d).upper_ok; }, guess, lo_limit,
                    opt.delta_max, opt.rel_width);
  auto lw = bracket([&](double d) { return evaluate(d).lower_ok; }, guess, lo_limit,
                    opt.delta_max, opt.rel_width);
  est.upper = up.second;
  est.lower = std::min(lw.first, est.upper);
  est.converged = std::isfinite(est.upper);
  return est;
}

// ---------------------------------------------------------------------------
// Shooting

ControlPath control_from_params(std::span<const double> v, int segments, int controls) {
  ControlPath path(segments, controls);
  for (int k = 0; k < segments; ++k) {
    const double* vk = v.data() + k * controls;
    double rho = 0;
    for (int j = 0; j < controls; ++j) rho += vk[j] * vk[j];
    rho = std::sqrt(rho);
    double f = rho < 1e-12 ? 0.999 : 0.999 * std::tanh(rho) / rho;
    for (int j = 0; j < controls; ++j) path.a[k * controls + j] = f * vk[j];
  }
  return path;
}

namespace {

// Fields and their Jacobians on one tape, with the augmented forward pass
// that yields the endpoint sensitivity to each segment's controls.
class ShootModel {
 public:
  ShootModel(const WeightedSystem& sys, int segments, int steps_per_unit)
      : sys_(sys), n_(sys.dim()), r_(sys.size()), K_(segments) {
    std::vector<Expr> out;
    for (int j = 0; j < r_; ++j)
      for (int k = 0; k < n_; ++k) out.push_back(sys.field(j)[k]);
    for (int j = 0; j < r_; ++j)
      for (int i = 0; i < n_; ++i)
        for (int k = 0; k < n_; ++k) out.push_back(diff(sys.field(j)[k], i));
    tape_ = Tape(std::span<const Expr>(out), n_);
    scratch_.resize(tape_.scratch_size());
    values_.resize(out.size());
    steps_ = std::max(1, (steps_per_unit + segments - 1) / segments);
    FlowConfig g = FlowConfig::guarded(sys);
    guard_lo_ = g.guard_lower;
    guard_hi_ = g.guard_upper;
  }

  struct Pass {
    Point end;
    std::vector<double> seg_last;                 // x_n at each segment end
    std::vector<Eigen::MatrixXd> G;               // sum of Minv B per segment
    std::vector<Eigen::MatrixXd> M_at;            // M(t_k) at segment ends
    double lowest = std::numeric_limits<double>::infinity();
    bool in_box = true;
  };

  // Throws FlowError when the guard is left.
  Pass forward(std::span<const double> x, const ControlPath& path, const std::vector<double>& scale,
               bool jacobian) {
    Pass pass;
    pass.end.assign(x.begin(), x.end());
    Eigen::MatrixXd Minv = Eigen::MatrixXd::Identity(n_, n_);
    Eigen::VectorXd c(r_);
    const double h = 1.0 / (K_ * steps_);
    Eigen::VectorXd xs = Eigen::Map<const Eigen::VectorXd>(x.data(), n_);
    pass.lowest = xs(n_ - 1);
    for (int k = 0; k < K_; ++k) {
      for (int j = 0; j < r_; ++j) c(j) = path.a[k * r_ + j] * scale[j];
      Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n_, r_);
      Eigen::MatrixXd integrand_prev;
      if (jacobian) integrand_prev = Minv * B(xs, scale);
      for (int s = 0; s < steps_; ++s) {
        Eigen::VectorXd k1x, k2x, k3x, k4x;
        Eigen::MatrixXd k1m, k2m, k3m, k4m;
        rhs(xs, Minv, c, jacobian, k1x, k1m);
        rhs(xs + 0.5 * h * k1x, Minv + 0.5 * h * k1m, c, jacobian, k2x, k2m);
        rhs(xs + 0.5 * h * k2x, Minv + 0.5 * h * k2m, c, jacobian, k3x, k3m);
        rhs(xs + h * k3x, Minv + h * k3m, c, jacobian, k4x, k4m);
        xs += h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x);
        if (jacobian) Minv += h / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m);
        for (int a = 0; a < n_; ++a) {
          if (!std::isfinite(xs(a)) || xs(a) < guard_lo_[a] || xs(a) > guard_hi_[a])
            throw FlowError("shooting trajectory left the guard");
          if (xs(a) < sys_.lower()[a] - kBoundaryTolerance ||
              xs(a) > sys_.upper()[a] + kBoundaryTolerance)
            pass.in_box = false;
        }
        pass.lowest = std::min(pass.lowest, xs(n_ - 1));
        if (jacobian) {
          Eigen::MatrixXd integrand = Minv * B(xs, scale);
          G += 0.5 * h * (integrand_prev + integrand);
          integrand_prev = std::move(integrand);
        }
      }
      pass.seg_last.push_back(xs(n_ - 1));
      if (jacobian) {
        pass.G.push_back(std::move(G));
        pass.M_at.push_back(Minv.inverse());
      }
    }
    pass.end.assign(xs.data(), xs.data() + n_);
    return pass;
  }

 private:
  void load(const Eigen::VectorXd& x) { tape_.run(std::span<const double>(x.data(), n_), values_, scratch_); }

  double W(int j, int k) const { return values_[j * n_ + k]; }
  double DW(int j, int k, int i) const { return values_[r_ * n_ + (j * n_ + i) * n_ + k]; }

  Eigen::MatrixXd B(const Eigen::VectorXd& x, const std::vector<double>& scale) {
    load(x);
    Eigen::MatrixXd b(n_, r_);
    for (int j = 0; j < r_; ++j)
      for (int k = 0; k < n_; ++k) b(k, j) = W(j, k) * scale[j];
    return b;
  }

  void rhs(const Eigen::VectorXd& x, const Eigen::MatrixXd& Minv, const Eigen::VectorXd& c,
           bool jacobian, Eigen::VectorXd& dx, Eigen::MatrixXd& dm) {
    load(x);
    dx = Eigen::VectorXd::Zero(n_);
    for (int j = 0; j < r_; ++j)
      for (int k = 0; k < n_; ++k) dx(k) += c(j) * W(j, k);
    if (!jacobian) {
      dm = Eigen::MatrixXd::Zero(n_, n_);
      return;
    }
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n_, n_);
    for (int j = 0; j < r_; ++j)
      for (int i = 0; i < n_; ++i)
        for (int k = 0; k < n_; ++k) A(k, i) += c(j) * DW(j, k, i);
    dm = -Minv * A;
  }

  const WeightedSystem& sys_;
  int n_, r_, K_, steps_;
  Tape tape_;
  std::vector<double> scratch_, values_;
  Point guard_lo_, guard_hi_;
};

// d a / d v for one segment.
Eigen::MatrixXd param_jacobian(const double* v, int r) {
  Eigen::Map<const Eigen::VectorXd> vv(v, r);
  double rho = vv.norm();
  if (rho < 1e-12) return 0.999 * Eigen::MatrixXd::Identity(r, r);
  Eigen::VectorXd u = vv / rho;
  double th = std::tanh(rho);
  Eigen::MatrixXd P = u * u.transpose();
  return 0.999 * ((th / rho) * (Eigen::MatrixXd::Identity(r, r) - P) + (1.0 - th * th) * P);
}

}  // namespace

ShotResult shoot(const WeightedSystem& sys, std::span<const double> x, std::span<const double> y,
                 double delta, Mode mode, const ShootingOptions& opt,
                 const std::vector<double>* warm) {
  const int n = sys.dim(), r = sys.size(), K = opt.segments;
  const auto scale = delta_powers(sys, delta);
  const bool penalize = mode == Mode::Intrinsic && sys.has_boundary();
  const int m = n + (penalize ? K : 0);
  const double target_miss = 1e-7 * std::max(dist(x, y), 1e-6);
  ShootModel model(sys, K, opt.steps_per_unit);
  Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);

  auto residual = [&](const ShootModel::Pass& pass) {
    Eigen::VectorXd R(m);
    for (int k = 0; k < n; ++k) R(k) = pass.end[k] - yv(k);
    if (penalize)
      for (int k = 0; k < K; ++k) R(n + k) = std::min(0.0, pass.seg_last[k]);
    return R;
  };
  auto feasible = [&](const ShootModel::Pass& pass) {
    if (mode == Mode::Extrinsic) return pass.in_box;
    return pass.in_box && (!sys.has_boundary() || pass.lowest >= -kBoundaryTolerance);
  };

  std::vector<std::vector<double>> starts;
  if (warm && static_cast<int>(warm->size()) == r * K) starts.push_back(*warm);
  {
    // Constant control solving the linearized problem at x.
    Eigen::MatrixXd Bx = sys.bundle().matrix(x);
    for (int j = 0; j < r; ++j) Bx.col(j) *= scale[j];
    Eigen::VectorXd a = Bx.completeOrthogonalDecomposition().solve(yv - Eigen::Map<const Eigen::VectorXd>(x.data(), n));
    double na = a.norm();
    if (na > 0.95) a *= 0.95 / na;
    na = a.norm();
    std::vector<double> v(r * K, 0.0);
    if (na > 0) {
      double rho = std::atanh(na / 0.999);
      for (int k = 0; k < K; ++k)
        for (int j = 0; j < r; ++j) v[k * r + j] = rho * a(j) / na;
    }
    starts.push_back(std::move(v));
  }
  std::mt19937_64 rng(stream_seed(opt.seed, static_cast<std::uint64_t>(std::llround(delta * 1e12))));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int s = 0; s < opt.random_starts; ++s) {
    std::vector<double> v(r * K);
    for (double& e : v) e = gauss(rng);
    starts.push_back(std::move(v));
  }

  ShotResult best;
  best.miss = std::numeric_limits<double>::infinity();
  for (auto v : starts) {
    ShootModel::Pass pass;
    try {
      pass = model.forward(x, control_from_params(v, K, r), scale, true);
    } catch (const FlowError&) {
      continue;
    }
    Eigen::VectorXd R = residual(pass);
    double lambda = -1.0;
    std::vector<double> history;
    for (int it = 0; it < opt.max_iterations; ++it) {
      double miss = (R.head(n)).norm();
      if (miss <= target_miss && feasible(pass)) break;
      history.push_back(R.norm());
      if (it >= 20 && history[it] > 0.7 * history[it - 10]) break;
      // Jacobian wrt v.
      Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, r * K);
      const Eigen::MatrixXd& M1 = pass.M_at.back();
      for (int k = 0; k < K; ++k) {
        Eigen::MatrixXd da = param_jacobian(v.data() + k * r, r);
        J.block(0, k * r, n, r) = M1 * pass.G[k] * da;
        if (penalize)
          for (int e = k; e < K; ++e)
            if (pass.seg_last[e] < 0.0)
              J.block(n + e, k * r, 1, r) = (pass.M_at[e] * pass.G[k]).row(n - 1) * da;
      }
      Eigen::MatrixXd JJ = J * J.transpose();
      if (lambda < 0) lambda = 1e-3 * std::max(JJ.diagonal().maxCoeff(), 1e-12);
      bool accepted = false;
      for (int tries = 0; tries < 12 && !accepted; ++tries) {
        Eigen::MatrixXd Aug = JJ;
        Aug.diagonal().array() += lambda;
        Eigen::VectorXd z = Aug.ldlt().solve(R);
        Eigen::VectorXd dv = -J.transpose() * z;
        std::vector<double> vt(v);
        for (int i = 0; i < r * K; ++i) vt[i] += dv(i);
        try {
          auto trial = model.forward(x, control_from_params(vt, K, r), scale, true);
          Eigen::VectorXd Rt = residual(trial);
          if (Rt.norm() < R.norm()) {
            v = std::move(vt);
            pass = std::move(trial);
            R = Rt;
            lambda = std::max(lambda / 3.0, 1e-15);
            accepted = true;
            break;
          }
        } catch (const FlowError&) {
        }
        lambda *= 4.0;
      }
      if (!accepted) break;
    }
    double miss = R.head(n).norm();
    bool ok = miss <= target_miss && feasible(pass);
    if (ok || (!best.success && miss < best.miss)) {
      best.success = ok;
      best.miss = miss;
      best.v = v;
      best.path = control_from_params(v, K, r);
    }
    if (ok) break;
  }
  return best;
}

MetricEstimate cc_distance(const WeightedSystem& sys, std::span<const double> x,
                           std::span<const double> y, Mode mode, double tol,
                           const ShootingOptions& opt) {
  if (!(tol > 0.0 && tol < 0.5)) throw DimensionError("tol must lie in (0, 0.5)");
  MetricEstimate est;
  est.method = "shooting";
  if (dist(x, y) == 0.0) {
    est.upper = 0.0;
    return est;
  }
  if (!start_ok(sys, x, mode) || !start_ok(sys, y, mode))
    throw GeometryError("shooting endpoints must lie in the domain");
  std::vector<double> warm;
  double warm_delta = 0;
  const bool try_intrinsic = mode == Mode::Extrinsic && sys.has_boundary() &&
                             start_ok(sys, x, Mode::Intrinsic) && start_ok(sys, y, Mode::Intrinsic);
  auto pred = [&](double delta) {
    // Warm starts only come from larger deltas, where the control is smaller.
    const std::vector<double>* w = (!warm.empty() && warm_delta >= delta) ? &warm : nullptr;
    ShotResult res = shoot(sys, x, y, delta, mode, opt, w);
    // An intrinsic path is also an extrinsic one; the constrained problem
    // sometimes converges where the free one wanders off.
    if (!res.success && try_intrinsic) res = shoot(sys, x, y, delta, Mode::Intrinsic, opt, w);
    if (res.success && (warm.empty() || delta < warm_delta)) {
      warm = res.v;
      warm_delta = delta;
    }
    return res.success;
  };
  auto [f, t] = bracket(pred, initial_guess(sys, x, y), 1e-6, opt.delta_max, tol);
  est.lower = 0.999 * f;
  est.upper = t;
  est.converged = std::isfinite(t);
  return est;
}

// ---------------------------------------------------------------------------
// Volume

namespace {

struct BallFrame {
  Point lower, upper, spacing;
};

BallFrame ball_frame(const WeightedSystem& sys, std::span<const double> x, double delta, Mode mode,
                     int cells_per_axis, std::uint64_t seed, int jobs, int samples, int segments) {
  auto rs = sample_ball(sys, x, delta, samples, segments, seed, mode, jobs);
  auto [lo, hi] = rs.extents();
  const int n = sys.dim();
  BallFrame f;
  double wmax = 0;
  for (int k = 0; k < n; ++k) wmax = std::max(wmax, hi[k] - lo[k]);
  if (!(wmax > 0)) throw GeometryError("sampled ball has no extent");
  for (int k = 0; k < n; ++k) {
    double c = 0.5 * (lo[k] + hi[k]);
    double w = 0.5 * std::max(hi[k] - lo[k], 1e-6 * wmax) * 1.2;
    f.lower.push_back(c - w);
    f.upper.push_back(c + w);
    f.spacing.push_back(2 * w / cells_per_axis);
  }
  return f;
}

int default_cells(int n) { return n <= 2 ? 64 : 32; }

}  // namespace

ReachGrid ball_grid(const WeightedSystem& sys, std::span<const double> x, double delta, Mode mode,
                    int cells_per_axis, std::uint64_t seed, int jobs) {
  if (!(delta > 0)) throw DimensionError("ball grid needs delta > 0");
  if (cells_per_axis <= 0) cells_per_axis = default_cells(sys.dim());
  auto f = ball_frame(sys, x, delta, mode, cells_per_axis, seed, jobs, 2000, 16);
  return reach_search(sys, x, delta, mode, Point(x.begin(), x.end()), f.spacing, 1.0, nullptr,
                      OracleOptions{}.max_cells, nullptr);
}

VolumeEstimate ball_volume(const WeightedSystem& sys, std::span<const double> x, double delta,
                           Mode mode, int n_samples, std::uint64_t seed, const VolumeOptions& opt) {
  VolumeEstimate est;
  if (!(delta > 0)) throw DimensionError("ball_volume needs delta > 0");
  const int n = sys.dim();
  const int cells = opt.cells_per_axis > 0 ? opt.cells_per_axis : default_cells(n);
  auto f = ball_frame(sys, x, delta, mode, cells, seed, opt.jobs, opt.reach_samples, opt.segments);
  ReachGrid grid = reach_search(sys, x, delta, mode, Point(x.begin(), x.end()), f.spacing, 1.0,
                                nullptr, OracleOptions{}.max_cells, nullptr);
  auto [glo, ghi] = grid.bounds(1.0);
  for (int k = 0; k < n; ++k) {
    f.lower[k] = std::min(f.lower[k], glo[k]);
    f.upper[k] = std::max(f.upper[k], ghi[k]);
  }
  double measure = 1;
  for (int k = 0; k < n; ++k) measure *= f.upper[k] - f.lower[k];

  std::mt19937_64 rng(stream_seed(seed, 1ULL << 40));
  std::vector<std::uniform_real_distribution<double>> axis;
  for (int k = 0; k < n; ++k) axis.emplace_back(f.lower[k], f.upper[k]);
  const bool intrinsic = mode == Mode::Intrinsic && sys.has_boundary();
  const WeightedSystem ambient = sys.ambient();
  double sum = 0, sum2 = 0;
  int hits = 0;
  Point p(n);
  for (int i = 0; i < n_samples; ++i) {
    for (int k = 0; k < n; ++k) p[k] = axis[k](rng);
    bool inside = intrinsic ? sys.contains(p) : ambient.contains(p);
    if (!inside || !grid.contains(p, 1.0)) continue;
    double h = sys.density_at(p);
    ++hits;
    sum += h;
    sum2 += h * h;
  }
  const double N = n_samples;
  double mean = sum / N;
  double var = std::max(0.0, sum2 / N - mean * mean);
  est.volume = measure * mean;
  est.std_error = measure * std::sqrt(var / N);
  est.hit_fraction = hits / N;
  est.degenerate = hits == 0;
  est.box_lower = f.lower;
  est.box_upper = f.upper;
  return est;
}

}  // namespace ccgeo

#include "ccgeo/flows.hpp"

#include <algorithm>
#include <cmath>

namespace ccgeo {

FlowConfig FlowConfig::guarded(const WeightedSystem& sys, int steps_per_unit) {
  FlowConfig cfg;
  cfg.steps_per_unit = steps_per_unit;
  for (int k = 0; k < sys.dim(); ++k) {
    double w = sys.upper()[k] - sys.lower()[k];
    cfg.guard_lower.push_back(sys.lower()[k] - 0.25 * w);
    cfg.guard_upper.push_back(sys.upper()[k] + 0.25 * w);
  }
  return cfg;
}

void FlowConfig::validate() const {
  if (steps_per_unit < 16) throw FlowError("steps per unit time must be >= 16");
  if (guard_lower.size() != guard_upper.size()) throw FlowError("guard box is malformed");
  for (std::size_t k = 0; k < guard_lower.size(); ++k)
    if (!(guard_lower[k] < guard_upper[k])) throw FlowError("guard box is empty");
}

// ---------------------------------------------------------------------------
// Integrator

Integrator::Integrator(const FieldBundle& bundle, FlowConfig cfg)
    : bundle_(&bundle), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (!cfg_.guard_lower.empty() && static_cast<int>(cfg_.guard_lower.size()) != bundle.dim())
    throw DimensionError("guard box dimension does not match fields");
  const int n = bundle.dim();
  scratch_.resize(bundle.scratch_size());
  cols_.resize(static_cast<std::size_t>(n) * bundle.count());
  for (auto* v : {&k1_, &k2_, &k3_, &k4_, &tmp_}) v->resize(n);
  unit_.assign(bundle.count(), 0.0);
}

void Integrator::velocity(std::span<const double> coeffs, std::span<const double> x,
                          std::span<double> out) {
  const int n = bundle_->dim();
  const int q = bundle_->count();
  bundle_->eval(x, cols_.data(), scratch_);
  std::fill(out.begin(), out.begin() + n, 0.0);
  for (int j = 0; j < q; ++j) {
    const double c = coeffs[j];
    if (c == 0.0) continue;
    const double* col = cols_.data() + static_cast<std::size_t>(j) * n;
    for (int k = 0; k < n; ++k) out[k] += c * col[k];
  }
}

void Integrator::set_watch(Point lo, Point hi) {
  watch_lo_ = std::move(lo);
  watch_hi_ = std::move(hi);
  violated_ = false;
}

void Integrator::check(std::span<const double> x) {
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!std::isfinite(x[k])) throw FlowError("non-finite state during integration");
    if (!cfg_.guard_lower.empty() && (x[k] < cfg_.guard_lower[k] || x[k] > cfg_.guard_upper[k]))
      throw FlowError("trajectory left the guarded domain");
    if (!watch_lo_.empty() && (x[k] < watch_lo_[k] || x[k] > watch_hi_[k])) violated_ = true;
  }
}

void Integrator::flow(std::span<const double> coeffs, double t, std::span<double> x,
                      double* min_last) {
  const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(t) * cfg_.steps_per_unit)));
  flow_steps(coeffs, t, steps, x, min_last);
}

void Integrator::flow_steps(std::span<const double> coeffs, double t, int steps,
                            std::span<double> x, double* min_last) {
  const int n = bundle_->dim();
  if (static_cast<int>(x.size()) != n) throw DimensionError("state arity does not match fields");
  if (min_last) *min_last = std::min(*min_last, x[n - 1]);
  if (t == 0.0) return;
  const double h = t / steps;
  for (int s = 0; s < steps; ++s) {
    velocity(coeffs, x, k1_);
    for (int k = 0; k < n; ++k) tmp_[k] = x[k] + 0.5 * h * k1_[k];
    velocity(coeffs, tmp_, k2_);
    for (int k = 0; k < n; ++k) tmp_[k] = x[k] + 0.5 * h * k2_[k];
    velocity(coeffs, tmp_, k3_);
    for (int k = 0; k < n; ++k) tmp_[k] = x[k] + h * k3_[k];
    velocity(coeffs, tmp_, k4_);
    for (int k = 0; k < n; ++k) x[k] += h / 6.0 * (k1_[k] + 2.0 * k2_[k] + 2.0 * k3_[k] + k4_[k]);
    check(x);
    if (min_last) *min_last = std::min(*min_last, x[n - 1]);
  }
}

void Integrator::flow_one(int j, double c, double t, std::span<double> x, double* min_last) {
  unit_[j] = c;
  try {
    flow(unit_, t, x, min_last);
  } catch (...) {
    unit_[j] = 0.0;
    throw;
  }
  unit_[j] = 0.0;
}

Point exp_flow(const VField& X, double t, std::span<const double> p, const FlowConfig& cfg) {
  FieldBundle bundle(std::span<const VField>(&X, 1), X.dim());
  Integrator integ(bundle, cfg);
  Point x(p.begin(), p.end());
  integ.flow_one(0, 1.0, t, x);
  return x;
}

// ---------------------------------------------------------------------------
// Commutator flows

std::vector<FlowStep> commutator_steps(int l) {
  if (l < 1) throw DimensionError("commutator flow order must be >= 1");
  std::vector<FlowStep> seq{{0, +1}};
  for (int k = 1; k < l; ++k) {
    std::vector<FlowStep> next = seq;
    next.push_back({k, +1});
    for (auto it = seq.rbegin(); it != seq.rend(); ++it) next.push_back({it->field, -it->sign});
    next.push_back({k, -1});
    seq = std::move(next);
  }
  return seq;
}

namespace {

void run_steps(Integrator& integ, const std::vector<FlowStep>& steps, double t,
               std::span<double> x, double* min_last) {
  for (const auto& s : steps) integ.flow_one(s.field, static_cast<double>(s.sign), t, x, min_last);
}

}  // namespace

Point commutator_flow_C(int l, double t, std::span<const VField> S, std::span<const double> p,
                        const FlowConfig& cfg) {
  if (static_cast<int>(S.size()) != l) throw DimensionError("C_l needs exactly l fields");
  FieldBundle bundle(S, S.front().dim());
  Integrator integ(bundle, cfg);
  Point x(p.begin(), p.end());
  run_steps(integ, commutator_steps(l), t, x, nullptr);
  return x;
}

BracketWordFlow::BracketWordFlow(std::vector<VField> generators, std::vector<int> word)
    : generators_(std::move(generators)), word_(std::move(word)) {
  if (generators_.empty() || word_.empty()) throw DimensionError("empty bracket word");
  for (int a : word_)
    if (a < 0 || a >= static_cast<int>(generators_.size()))
      throw DimensionError("bracket word letter out of range");
  target_ = generators_[word_.back()];
  for (int i = static_cast<int>(word_.size()) - 2; i >= 0; --i)
    target_ = lie_bracket(generators_[word_[i]], target_);
  bundle_ = std::make_shared<const FieldBundle>(generators_, generators_.front().dim());
}

std::vector<FlowStep> BracketWordFlow::steps(int sign) const {
  const int k = length();
  // commutator_steps(k) realizes the left-nested bracket of its slots;
  // [a1,[a2,...,ak]] equals (-1)^{k-1} times the left-nested bracket of the
  // reversed word.
  std::vector<int> slots = word_;
  int parity = 1;
  if (k >= 3) {
    std::reverse(slots.begin(), slots.end());
    if (k % 2 == 0) parity = -1;
  }
  std::vector<int> slot_sign(k, 1);
  const int flip = parity * sign;
  if (flip < 0) {
    int target = -1;
    for (int i = 0; i < k; ++i)
      if (slots[i] != 0) {
        target = i;
        break;
      }
    if (target < 0) throw GeometryError("D^- needs a non-distinguished generator in the word");
    slot_sign[target] = -1;
  }
  std::vector<FlowStep> out;
  for (const auto& s : commutator_steps(k)) out.push_back({slots[s.field], s.sign * slot_sign[s.field]});
  return out;
}

Point flow_D(const BracketWordFlow& word, int sign, double t, std::span<const double> p,
             const FlowConfig& cfg, double* trace_min_last) {
  if (t < 0.0) throw DimensionError("flow_D takes t >= 0");
  Integrator integ(word.bundle(), cfg);
  Point x(p.begin(), p.end());
  run_steps(integ, word.steps(sign >= 0 ? 1 : -1), t, x, trace_min_last);
  return x;
}

Point flow_E(const BracketWordFlow& word, double t, std::span<const double> p,
             const FlowConfig& cfg) {
  if (t == 0.0) return Point(p.begin(), p.end());
  double s = std::pow(std::abs(t), 1.0 / word.length());
  return flow_D(word, t > 0 ? 1 : -1, s, p, cfg);
}

Point map_F(std::span<const double> y, const std::vector<BracketWordFlow>& basis,
            std::span<const double> t, const FlowConfig& cfg) {
  const int n = static_cast<int>(y.size());
  if (static_cast<int>(basis.size()) != n || static_cast<int>(t.size()) != n)
    throw DimensionError("map_F needs n basis words and n parameters");
  if (basis[0].length() != 1 || basis[0].word()[0] != 0)
    throw DimensionError("map_F basis must start with the distinguished field");
  Point x(y.begin(), y.end());
  for (int j = n - 1; j >= 1; --j) x = flow_E(basis[j], t[j], x, cfg);
  Integrator integ(basis[0].bundle(), cfg);
  integ.flow_one(0, 1.0, t[0], x);
  return x;
}

std::vector<VField> normalize_boundary_frame(const VField& X0, const std::vector<VField>& W) {
  const int n = X0.dim();
  const Expr& a = X0.normal_component();
  std::vector<Expr> g0(n);
  for (int k = 0; k < n - 1; ++k) g0[k] = X0[k] / a;
  g0[n - 1] = Expr(1.0);
  VField G0(n, g0);
  std::vector<VField> out{G0};
  for (const auto& w : W) {
    std::vector<Expr> c(n);
    for (int k = 0; k < n - 1; ++k) c[k] = w[k] - w.normal_component() * G0[k];
    c[n - 1] = Expr(0.0);
    out.emplace_back(n, std::move(c));
  }
  return out;
}

}  // namespace ccgeo

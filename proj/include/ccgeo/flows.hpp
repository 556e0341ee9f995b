#ifndef CCGEO_FLOWS_HPP_
#define CCGEO_FLOWS_HPP_

#include <span>
#include <vector>

#include "ccgeo/hormander.hpp"

namespace ccgeo {

/// Fixed-step RK4 settings. Steps for a flow of duration t are
/// max(1, ceil(|t| * steps_per_unit)).
struct FlowConfig {
  int steps_per_unit = 256;
  // Integration aborts outside this box; empty means unguarded.
  Point guard_lower;
  Point guard_upper;

  /// Guard = chart box inflated by 25% of its width on each side.
  static FlowConfig guarded(const WeightedSystem& sys, int steps_per_unit = 256);
  void validate() const;
};

/// Integrates x' = sum_j c_j X_j(x) for a bundle of fields. Holds scratch
/// buffers, so one instance per thread.
class Integrator {
 public:
  Integrator(const FieldBundle& bundle, FlowConfig cfg);

  const FlowConfig& config() const noexcept { return cfg_; }
  int dim() const noexcept { return bundle_->dim(); }

  /// Flows `x` in place for time t. If `min_last` is given it receives the
  /// minimum of x_n over the step states (including the start).
  void flow(std::span<const double> coeffs, double t, std::span<double> x,
            double* min_last = nullptr);

  /// Same with an explicit number of RK4 steps.
  void flow_steps(std::span<const double> coeffs, double t, int steps, std::span<double> x,
                  double* min_last = nullptr);

  /// Single field j with coefficient `c`.
  void flow_one(int j, double c, double t, std::span<double> x, double* min_last = nullptr);

  /// Records (without throwing) whether any step state leaves [lo, hi].
  void set_watch(Point lo, Point hi);
  bool watch_violated() const noexcept { return violated_; }
  void reset_watch() noexcept { violated_ = false; }

  /// Velocity sum_j c_j X_j(x).
  void velocity(std::span<const double> coeffs, std::span<const double> x, std::span<double> out);

 private:
  void check(std::span<const double> x);

  const FieldBundle* bundle_;
  FlowConfig cfg_;
  std::vector<double> scratch_, cols_, k1_, k2_, k3_, k4_, tmp_, unit_;
  Point watch_lo_, watch_hi_;
  bool violated_ = false;
};

/// Endpoint of x' = X(x) after time t from p.
Point exp_flow(const VField& X, double t, std::span<const double> p, const FlowConfig& cfg);

/// One flow in a composite: field index and sign of its time.
struct FlowStep {
  int field;
  int sign;
};

/// C_l in application order: C_1 = [S_1]; C_l = C_{l-1}, S_l, C_{l-1}^{-1}, -S_l.
std::vector<FlowStep> commutator_steps(int l);

/// e^{-tS_l} C_{l-1}^{-1} e^{tS_l} C_{l-1} applied to p. To leading order
/// this moves p by t^l [[...[S_1,S_2],...],S_l](p).
Point commutator_flow_C(int l, double t, std::span<const VField> S, std::span<const double> p,
                        const FlowConfig& cfg);

/// A bracket word [G_{a1},[G_{a2},[...,G_{ak}]]] over generators G, where
/// G_0 is the distinguished field.
class BracketWordFlow {
 public:
  BracketWordFlow(std::vector<VField> generators, std::vector<int> word);

  const std::vector<VField>& generators() const noexcept { return generators_; }
  const std::vector<int>& word() const noexcept { return word_; }
  int length() const noexcept { return static_cast<int>(word_.size()); }
  const VField& target() const noexcept { return target_; }
  const FieldBundle& bundle() const noexcept { return *bundle_; }

  /// Composite steps (signed generator indices) realizing sign * t^k * target.
  std::vector<FlowStep> steps(int sign) const;

 private:
  std::vector<VField> generators_;
  std::vector<int> word_;
  VField target_;
  std::shared_ptr<const FieldBundle> bundle_;
};

/// D^{+}(t) or D^{-}(t), t >= 0. `trace_min_last` receives min x_n over all
/// intermediate states.
Point flow_D(const BracketWordFlow& word, int sign, double t, std::span<const double> p,
             const FlowConfig& cfg, double* trace_min_last = nullptr);

/// E(t) = D^+(|t|^{1/k}) for t >= 0 and D^-(|t|^{1/k}) for t < 0.
Point flow_E(const BracketWordFlow& word, double t, std::span<const double> p,
             const FlowConfig& cfg);

/// F_y(t) = e^{t_1 G_0} E_2(t_2) ... E_n(t_n) y, with E_n applied first.
/// basis[0] must be the single-letter word of the distinguished field.
Point map_F(std::span<const double> y, const std::vector<BracketWordFlow>& basis,
            std::span<const double> t, const FlowConfig& cfg);

/// Normalized frame: G_0 = X0 / X0^n and G_j = W_j - W_j^n G_0, so that
/// G_0 has n-th component 1 and the others have n-th component 0.
std::vector<VField> normalize_boundary_frame(const VField& X0, const std::vector<VField>& W);

}  // namespace ccgeo

#endif  // CCGEO_FLOWS_HPP_

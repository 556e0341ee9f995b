#include "ccgeo/hormander.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

namespace ccgeo {

// ---------------------------------------------------------------------------
// FieldBundle

FieldBundle::FieldBundle(std::span<const VField> fields, int dim)
    : dim_(dim), count_(static_cast<int>(fields.size())) {
  std::vector<Expr> outputs;
  outputs.reserve(fields.size() * dim);
  for (const auto& f : fields) {
    if (f.dim() != dim) throw DimensionError("field dimension does not match bundle");
    for (int k = 0; k < dim; ++k) outputs.push_back(f[k]);
  }
  tape_ = std::make_shared<const Tape>(outputs, dim);
}

void FieldBundle::eval(std::span<const double> p, double* out, std::span<double> scratch) const {
  tape_->run(p, std::span<double>(out, static_cast<std::size_t>(dim_) * count_), scratch);
}

Eigen::MatrixXd FieldBundle::matrix(std::span<const double> p) const {
  Eigen::MatrixXd m(dim_, count_);
  std::vector<double> scratch(scratch_size());
  eval(p, m.data(), scratch);
  return m;
}

// ---------------------------------------------------------------------------
// WeightedSystem

WeightedSystem::WeightedSystem(std::vector<WeightedField> fields, Point lower, Point upper,
                               bool has_boundary, Expr density)
    : fields_(std::move(fields)),
      lower_(std::move(lower)),
      upper_(std::move(upper)),
      has_boundary_(has_boundary),
      density_(std::move(density)) {
  if (fields_.empty()) throw DimensionError("a weighted system needs at least one field");
  dim_ = fields_.front().field.dim();
  for (const auto& wf : fields_) {
    if (wf.field.dim() != dim_) throw DimensionError("fields of a system must share dimension");
    if (wf.degree < 1) throw DimensionError("degree must be >= 1");
  }
  if (static_cast<int>(lower_.size()) != dim_ || static_cast<int>(upper_.size()) != dim_)
    throw DimensionError("domain box has the wrong dimension");
  for (int k = 0; k < dim_; ++k)
    if (!(lower_[k] < upper_[k])) throw DimensionError("domain box is empty along an axis");
  if (has_boundary_ && !(upper_.back() > 0.0))
    throw DimensionError("half-space chart needs upper bound > 0 on the last axis");
  if (density_.max_variable() >= dim_) throw DimensionError("density uses too many variables");

  std::vector<VField> vf;
  for (const auto& wf : fields_) vf.push_back(wf.field);
  bundle_ = std::make_shared<const FieldBundle>(vf, dim_);

  for (const auto& p : domain_grid(*this, dim_ <= 2 ? 9 : 5)) {
    double h = ccgeo::eval(density_, p);
    if (!(h > 0.0)) throw DimensionError("density must be positive on the domain");
  }
}

int WeightedSystem::max_degree() const {
  int d = 0;
  for (const auto& wf : fields_) d = std::max(d, wf.degree);
  return d;
}

int WeightedSystem::min_degree() const {
  int d = fields_.front().degree;
  for (const auto& wf : fields_) d = std::min(d, wf.degree);
  return d;
}

bool WeightedSystem::contains(std::span<const double> p, double tol) const {
  for (int k = 0; k < dim_; ++k)
    if (p[k] < lower_[k] - tol || p[k] > upper_[k] + tol) return false;
  if (has_boundary_ && p[dim_ - 1] < -tol) return false;
  return true;
}

double WeightedSystem::density_at(std::span<const double> p) const {
  return ccgeo::eval(density_, p);
}

WeightedSystem WeightedSystem::with_box(Point lower, Point upper) const {
  return WeightedSystem(fields_, std::move(lower), std::move(upper), has_boundary_, density_);
}

WeightedSystem WeightedSystem::ambient() const {
  WeightedSystem copy = *this;
  copy.has_boundary_ = false;
  return copy;
}

std::vector<Point> domain_grid(const WeightedSystem& sys, int per_axis) {
  const int n = sys.dim();
  std::vector<double> lo = sys.lower(), hi = sys.upper();
  if (sys.has_boundary()) lo[n - 1] = std::max(lo[n - 1], 0.0);
  std::vector<Point> out;
  std::vector<int> idx(n, 0);
  for (;;) {
    Point p(n);
    for (int k = 0; k < n; ++k)
      p[k] = per_axis == 1 ? 0.5 * (lo[k] + hi[k])
                           : lo[k] + (hi[k] - lo[k]) * idx[k] / (per_axis - 1);
    out.push_back(std::move(p));
    int k = 0;
    while (k < n && ++idx[k] == per_axis) idx[k++] = 0;
    if (k == n) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commutators

std::string CommutatorEntry::word_string() const {
  std::string out;
  for (std::size_t i = 0; i + 1 < word.size(); ++i) out += "[" + std::to_string(word[i] + 1) + ",";
  out += std::to_string(word.back() + 1);
  out += std::string(word.size() - 1, ']');
  return out;
}

namespace {

std::vector<Point> probe_points(const WeightedSystem& sys) {
  std::mt19937_64 rng(0x5eedULL);
  std::vector<Point> pts;
  for (int i = 0; i < 8; ++i) {
    Point p(sys.dim());
    for (int k = 0; k < sys.dim(); ++k)
      p[k] = std::uniform_real_distribution<double>(sys.lower()[k], sys.upper()[k])(rng);
    pts.push_back(std::move(p));
  }
  return pts;
}

// Zero at every probe where the field can be evaluated.
bool numerically_zero(const VField& f, const std::vector<Point>& probes) {
  if (f.is_structurally_zero()) return true;
  int evaluated = 0;
  for (const auto& p : probes) {
    try {
      for (double v : f.eval(p))
        if (std::abs(v) > 1e-14) return false;
      ++evaluated;
    } catch (const DomainError&) {
    }
  }
  return evaluated > 0;
}

bool numerically_equal_up_to_sign(const VField& a, const VField& b,
                                  const std::vector<Point>& probes) {
  bool same = true, opposite = true;
  int evaluated = 0;
  for (const auto& p : probes) {
    try {
      auto u = a.eval(p), w = b.eval(p);
      for (std::size_t k = 0; k < u.size(); ++k) {
        double scale = 1e-12 * std::max({1.0, std::abs(u[k]), std::abs(w[k])});
        if (std::abs(u[k] - w[k]) > scale) same = false;
        if (std::abs(u[k] + w[k]) > scale) opposite = false;
      }
      ++evaluated;
    } catch (const DomainError&) {
    }
  }
  return evaluated > 0 && (same || opposite);
}

// Right-nested words with degree <= cap and length <= max_len.
std::vector<CommutatorEntry> words_up_to(const WeightedSystem& sys, int max_len, int cap) {
  const int r = sys.size();
  const auto probes = probe_points(sys);
  std::map<std::vector<int>, VField> memo;
  std::vector<CommutatorEntry> out;

  // Length-2 seeds [a,b] with a<b, then prepend letters.
  std::vector<std::vector<int>> layer;
  for (int j = 0; j < r; ++j) {
    if (sys.degree(j) > cap) continue;
    memo[{j}] = sys.field(j);
    out.push_back({sys.field(j), sys.degree(j), {j}, numerically_zero(sys.field(j), probes)});
  }
  auto degree_of = [&](const std::vector<int>& w) {
    int d = 0;
    for (int a : w) d += sys.degree(a);
    return d;
  };
  for (int len = 2; len <= max_len; ++len) {
    std::vector<std::vector<int>> words;
    if (len == 2) {
      for (int a = 0; a < r; ++a)
        for (int b = a + 1; b < r; ++b) words.push_back({a, b});
    } else {
      for (const auto& w : layer)
        for (int a = 0; a < r; ++a) {
          std::vector<int> nw{a};
          nw.insert(nw.end(), w.begin(), w.end());
          words.push_back(std::move(nw));
        }
    }
    std::vector<std::vector<int>> next;
    for (auto& w : words) {
      if (degree_of(w) > cap) continue;
      std::vector<int> tail(w.begin() + 1, w.end());
      VField f = lie_bracket(sys.field(w[0]), memo.at(tail));
      memo[w] = f;
      out.push_back({f, degree_of(w), w, numerically_zero(f, probes)});
      next.push_back(w);
    }
    std::sort(next.begin(), next.end());
    layer = std::move(next);
    if (layer.empty()) break;
  }
  std::stable_sort(out.begin(), out.end(), [](const CommutatorEntry& a, const CommutatorEntry& b) {
    if (a.word.size() != b.word.size()) return a.word.size() < b.word.size();
    return a.word < b.word;
  });
  return out;
}

}  // namespace

std::vector<CommutatorEntry> enumerate_commutators(const WeightedSystem& sys, int m) {
  if (m < 1) throw DimensionError("commutator order must be >= 1");
  return words_up_to(sys, m, std::numeric_limits<int>::max());
}

std::vector<CommutatorEntry> build_Z_system(const WeightedSystem& sys, int m) {
  if (m < 1) throw DimensionError("commutator order must be >= 1");
  const int cap = m * sys.max_degree();
  const int max_len = cap / sys.min_degree();
  const auto probes = probe_points(sys);
  std::vector<CommutatorEntry> out;
  for (auto& e : words_up_to(sys, max_len, cap)) {
    if (e.zero) continue;
    bool duplicate = false;
    for (const auto& kept : out) {
      if (kept.field.structurally_equal(e.field) || kept.field.structurally_negated(e.field) ||
          numerically_equal_up_to_sign(kept.field, e.field, probes)) {
        duplicate = true;
        break;
      }
    }
    // Generators are always kept so (W,d) is a subset.
    if (!duplicate || e.word.size() == 1) out.push_back(std::move(e));
  }
  return out;
}

WeightedSystem as_system(const std::vector<CommutatorEntry>& entries, const WeightedSystem& base) {
  std::vector<WeightedField> wf;
  for (const auto& e : entries) wf.push_back({e.field, e.degree});
  return WeightedSystem(std::move(wf), base.lower(), base.upper(), base.has_boundary(),
                        base.density());
}

// ---------------------------------------------------------------------------
// Span certificates

namespace {

double abs_det(const Eigen::MatrixXd& cols, const std::vector<int>& pick) {
  const int n = static_cast<int>(cols.rows());
  Eigen::MatrixXd m(n, n);
  for (int k = 0; k < n; ++k) m.col(k) = cols.col(pick[k]);
  return std::abs(m.determinant());
}

std::pair<double, std::vector<int>> exhaustive(const Eigen::MatrixXd& cols) {
  const int n = static_cast<int>(cols.rows());
  const int q = static_cast<int>(cols.cols());
  std::vector<int> pick(n);
  for (int k = 0; k < n; ++k) pick[k] = k;
  double best = -1.0;
  std::vector<int> arg;
  for (;;) {
    double d = abs_det(cols, pick);
    if (d > best) {
      best = d;
      arg = pick;
    }
    int k = n - 1;
    while (k >= 0 && pick[k] == q - n + k) --k;
    if (k < 0) break;
    ++pick[k];
    for (int i = k + 1; i < n; ++i) pick[i] = pick[i - 1] + 1;
  }
  return {best, arg};
}

// Volume-greedy pivoting from a given first column, then single-swap ascent.
std::pair<double, std::vector<int>> greedy_from(const Eigen::MatrixXd& cols, int first) {
  const int n = static_cast<int>(cols.rows());
  const int q = static_cast<int>(cols.cols());
  Eigen::MatrixXd r = cols;
  std::vector<int> pick{first};
  std::vector<bool> used(q, false);
  used[first] = true;
  auto project_out = [&](int c) {
    double nn = r.col(c).norm();
    if (nn == 0.0) return;
    Eigen::VectorXd u = r.col(c) / nn;
    for (int j = 0; j < q; ++j)
      if (!used[j]) r.col(j) -= u * u.dot(r.col(j));
  };
  project_out(first);
  while (static_cast<int>(pick.size()) < n) {
    int best = -1;
    double bn = -1.0;
    for (int j = 0; j < q; ++j)
      if (!used[j] && r.col(j).norm() > bn) {
        bn = r.col(j).norm();
        best = j;
      }
    pick.push_back(best);
    used[best] = true;
    project_out(best);
  }
  double value = abs_det(cols, pick);
  for (bool improved = true; improved;) {
    improved = false;
    for (int slot = 0; slot < n; ++slot)
      for (int j = 0; j < q; ++j) {
        if (std::find(pick.begin(), pick.end(), j) != pick.end()) continue;
        auto trial = pick;
        trial[slot] = j;
        double d = abs_det(cols, trial);
        if (d > value * (1.0 + 1e-14)) {
          value = d;
          pick = trial;
          improved = true;
        }
      }
  }
  std::sort(pick.begin(), pick.end());
  return {value, pick};
}

std::pair<double, std::vector<int>> greedy(const Eigen::MatrixXd& cols) {
  const int q = static_cast<int>(cols.cols());
  std::vector<int> order(q);
  for (int j = 0; j < q; ++j) order[j] = j;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return cols.col(a).norm() > cols.col(b).norm(); });
  std::pair<double, std::vector<int>> best{-1.0, {}};
  for (int s = 0; s < std::min(3, q); ++s) {
    auto cand = greedy_from(cols, order[s]);
    if (cand.first > best.first) best = cand;
  }
  return best;
}

}  // namespace

std::pair<double, std::vector<int>> max_minor(const Eigen::MatrixXd& columns,
                                              SpanStrategy strategy) {
  const int n = static_cast<int>(columns.rows());
  const int q = static_cast<int>(columns.cols());
  if (q < n) return {0.0, {}};
  if (strategy == SpanStrategy::Exhaustive || (strategy == SpanStrategy::Auto && q <= 12))
    return exhaustive(columns);
  return greedy(columns);
}

HormanderCertificate check_span_at(const std::vector<CommutatorEntry>& entries,
                                   std::span<const double> p, SpanStrategy strategy) {
  if (entries.empty()) throw DimensionError("check_span_at needs at least one entry");
  const int n = entries.front().field.dim();
  if (static_cast<int>(p.size()) != n) throw DimensionError("point arity does not match fields");
  std::vector<int> live;
  for (int j = 0; j < static_cast<int>(entries.size()); ++j)
    if (!entries[j].zero) live.push_back(j);

  HormanderCertificate cert;
  cert.point.assign(p.begin(), p.end());
  for (const auto& e : entries) cert.order = std::max(cert.order, static_cast<int>(e.word.size()));
  if (static_cast<int>(live.size()) < n) return cert;

  Eigen::MatrixXd cols(n, live.size());
  double max_norm = 0.0;
  for (std::size_t c = 0; c < live.size(); ++c) {
    auto v = entries[live[c]].field.eval(p);
    for (int k = 0; k < n; ++k) cols(k, c) = v[k];
    max_norm = std::max(max_norm, cols.col(c).norm());
  }
  auto [value, pick] = max_minor(cols, strategy);
  cert.gamma0 = std::max(value, 0.0);
  for (int c : pick) cert.witness.push_back(live[c]);
  cert.valid = cert.gamma0 > 1e-12 * std::pow(max_norm, n);
  return cert;
}

HormanderReport check_hormander(const WeightedSystem& sys, int m_max,
                                const std::vector<Point>& grid) {
  HormanderReport report;
  for (int m = 1; m <= m_max; ++m) {
    auto entries = enumerate_commutators(sys, m);
    report = HormanderReport{};
    report.min_gamma0 = std::numeric_limits<double>::infinity();
    for (const auto& p : grid) {
      auto cert = check_span_at(entries, p);
      if (cert.gamma0 < report.min_gamma0) {
        report.min_gamma0 = cert.gamma0;
        report.argmin = p;
      }
      if (!cert.valid) report.failures.push_back(p);
    }
    if (report.failures.empty()) {
      report.ok = true;
      report.order = m;
      return report;
    }
  }
  return report;
}

}  // namespace ccgeo

#include <gtest/gtest.h>

#include <cmath>

#include "ccgeo/flows.hpp"

using namespace ccgeo;

namespace {

VField F(const char* text, int n = 2) { return VField::parse(text, n); }

FlowConfig cfg() { return FlowConfig{}; }

Point sub(const Point& a, const Point& b) {
  Point d(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) d[k] = a[k] - b[k];
  return d;
}

double norm(const Point& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Two-level Richardson limit of q(t) = q0 + q1 t + q2 t^2 + ... from t, t/2, t/4.
template <class Q>
Point richardson(Q q, double t) {
  Point a = q(t), b = q(t / 2), c = q(t / 4);
  Point out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    double r1 = 2 * b[k] - a[k], r2 = 2 * c[k] - b[k];
    out[k] = (4 * r2 - r1) / 3;
  }
  return out;
}

double direction_error(const Point& got, const Point& want) {
  double ng = norm(got), nw = norm(want);
  Point d(got.size());
  for (std::size_t k = 0; k < got.size(); ++k) d[k] = got[k] / ng - want[k] / nw;
  return norm(d);
}

}  // namespace

TEST(ExpFlow, Examples) {
  auto a = exp_flow(F("1, 0"), 0.3, Point{0, 0}, cfg());
  EXPECT_NEAR(a[0], 0.3, 1e-15);
  EXPECT_NEAR(a[1], 0.0, 1e-15);
  auto b = exp_flow(F("0, x1"), 0.7, Point{1, 0}, cfg());
  EXPECT_NEAR(b[0], 1.0, 1e-15);
  EXPECT_NEAR(b[1], 0.7, 1e-14);
  auto c = exp_flow(F("x1", 1), 1.0, Point{1}, cfg());
  EXPECT_NEAR(c[0], std::exp(1.0), 1e-8);
}

TEST(ExpFlow, GuardAndConfig) {
  FlowConfig g;
  g.guard_lower = {-1, -1};
  g.guard_upper = {1, 1};
  EXPECT_THROW(exp_flow(F("1, 0"), 3.0, Point{0, 0}, g), FlowError);
  FlowConfig bad;
  bad.steps_per_unit = 8;
  EXPECT_THROW(exp_flow(F("1, 0"), 1.0, Point{0, 0}, bad), FlowError);
  EXPECT_THROW(exp_flow(F("x1^2", 1), 2.0, Point{1}, cfg()), FlowError);
}

TEST(ExpFlow, GroupLawAndReversibility) {
  VField X = F("-x2 + sin(x1), x1*x2 + 1");
  Point p{0.2, -0.1};
  auto ab = exp_flow(X, 0.25, exp_flow(X, 0.35, p, cfg()), cfg());
  auto c = exp_flow(X, 0.6, p, cfg());
  EXPECT_LE(norm(sub(ab, c)), 1e-9);
  auto back = exp_flow(X, -0.6, c, cfg());
  EXPECT_LE(norm(sub(back, p)), 1e-9 * 0.6);
}

TEST(ExpFlow, StepHalvingOrder) {
  VField X = F("-x2 + sin(x1), x1*x2 + 1");
  Point p{0.2, -0.1};
  auto run = [&](int steps) {
    FlowConfig c;
    c.steps_per_unit = steps;
    return exp_flow(X, 1.0, p, c);
  };
  double e1 = norm(sub(run(16), run(256)));
  double e2 = norm(sub(run(32), run(256)));
  EXPECT_GE(std::log2(e1 / e2), 3.5);
}

TEST(CommutatorSteps, Structure) {
  auto s2 = commutator_steps(2);
  ASSERT_EQ(s2.size(), 4u);
  EXPECT_EQ(s2[0].field, 0);
  EXPECT_EQ(s2[1].field, 1);
  EXPECT_EQ(s2[2].sign, -1);
  EXPECT_EQ(s2[3].field, 1);
  EXPECT_EQ(commutator_steps(3).size(), 10u);
}

TEST(CommutatorC, OrderOneAndCommuting) {
  std::vector<VField> one{F("1, 0")};
  auto a = commutator_flow_C(1, 0.4, one, Point{0, 0}, cfg());
  EXPECT_NEAR(a[0], 0.4, 1e-15);
  std::vector<VField> comm{F("1, 0"), F("0, 1")};
  auto b = commutator_flow_C(2, 0.37, comm, Point{0.1, 0.2}, cfg());
  EXPECT_NEAR(b[0], 0.1, 1e-13);
  EXPECT_NEAR(b[1], 0.2, 1e-13);
}

TEST(CommutatorC, GrushinLeadingTerm) {
  std::vector<VField> S{F("1, 0"), F("0, x1")};
  Point p{0, 0};
  auto q = [&](double t) {
    Point d = sub(commutator_flow_C(2, t, S, p, cfg()), p);
    for (double& v : d) v /= t * t;
    return d;
  };
  Point lim = richardson(q, 0.1);
  EXPECT_LE(direction_error(lim, {0, 1}), 1e-2);
  EXPECT_NEAR(lim[1], 1.0, 1e-2);
}

TEST(CommutatorC, ThirdOrderMatchesLeftNestedBracket) {
  std::vector<VField> S{F("1, 0, 0", 3), F("0, x1, x2", 3), F("x2, 0, x1*x1", 3)};
  Point p{0.1, 0.2, -0.1};
  VField B = lie_bracket(lie_bracket(S[0], S[1]), S[2]);
  auto q = [&](double t) {
    Point d = sub(commutator_flow_C(3, t, S, p, cfg()), p);
    for (double& v : d) v /= t * t * t;
    return d;
  };
  Point lim = richardson(q, 0.08);
  Point want = B.eval(p);
  EXPECT_LE(direction_error(lim, want), 1e-2);
  EXPECT_NEAR(norm(lim), norm(want), 1e-2 * norm(want));
}

TEST(BracketWord, TargetsAndSigns) {
  std::vector<VField> G{F("1, 0, 0", 3), F("0, x1, x2", 3), F("x2, 0, x1*x1", 3)};
  for (std::vector<int> w : {std::vector<int>{0, 1}, {1, 2, 0}, {0, 1, 2}, {2, 0, 1, 1}}) {
    BracketWordFlow word(G, w);
    Point p{0.1, 0.2, -0.1};
    Point want = word.target().eval(p);
    if (norm(want) < 1e-6) continue;
    const int k = word.length();
    for (int sign : {1, -1}) {
      auto q = [&](double t) {
        Point d = sub(flow_D(word, sign, t, p, cfg()), p);
        for (double& v : d) v /= std::pow(t, k);
        return d;
      };
      Point lim = richardson(q, k == 4 ? 0.2 : 0.08);
      Point sw = want;
      for (double& v : sw) v *= sign;
      EXPECT_LE(direction_error(lim, sw), 2e-2) << "word length " << k << " sign " << sign;
    }
  }
}

TEST(FlowD, SingleLetterIsExp) {
  std::vector<VField> G{F("0, 1"), F("x2, 0")};
  BracketWordFlow w(G, {1});
  auto a = flow_D(w, 1, 0.3, Point{0.1, 0.5}, cfg());
  auto b = exp_flow(G[1], 0.3, Point{0.1, 0.5}, cfg());
  EXPECT_LE(norm(sub(a, b)), 1e-15);
  EXPECT_THROW(flow_D(BracketWordFlow(G, {0}), -1, 0.3, Point{0, 0}, cfg()), GeometryError);
}

TEST(FlowD, PreservesBoundaryCoordinate) {
  // Normalized frame: G0 = d/dx2, G1 = x2 d/dx1; [G0,G1] = d/dx1.
  auto G = normalize_boundary_frame(F("0, 1"), {F("x2, 0")});
  BracketWordFlow w(G, {0, 1});
  Point p{0.5, 0.2};
  for (int sign : {1, -1}) {
    double lowest = p[1];
    auto y = flow_D(w, sign, 0.3, p, cfg(), &lowest);
    EXPECT_NEAR(y[1], p[1], 1e-9);
    EXPECT_NEAR(y[0], p[0] + sign * 0.09, 1e-9);
    EXPECT_GE(lowest, p[1] - 1e-12);
  }
}

TEST(FlowE, OneSidedDerivative) {
  std::vector<VField> G{F("1, 0"), F("0, x1")};
  BracketWordFlow w(G, {0, 1});
  Point p{0.3, 0};
  EXPECT_EQ(flow_E(w, 0.0, p, cfg()), p);
  for (double t : {0.01, -0.01}) {
    Point d = sub(flow_E(w, t, p, cfg()), p);
    EXPECT_NEAR(d[0] / t, 0.0, 0.1);
    EXPECT_NEAR(d[1] / t, 1.0, 0.1);
  }
  for (int k = 4; k <= 10; ++k)
    for (double s : {1.0, -1.0}) {
      double t = s * std::ldexp(1.0, -k);
      Point d = sub(flow_E(w, t, p, cfg()), p);
      EXPECT_NEAR(d[1] / t, 1.0, 0.05 + 2.0 * std::sqrt(std::abs(t)));
    }
}

TEST(MapF, ElementaryCases) {
  std::vector<VField> G{F("0, 1"), F("1, 0")};
  std::vector<BracketWordFlow> basis{BracketWordFlow(G, {0}), BracketWordFlow(G, {1})};
  Point y{0.1, 0.2};
  EXPECT_EQ(map_F(y, basis, Point{0, 0}, cfg()), y);
  auto z = map_F(y, basis, Point{0.3, -0.4}, cfg());
  EXPECT_NEAR(z[0], 0.1 - 0.4, 1e-14);
  EXPECT_NEAR(z[1], 0.2 + 0.3, 1e-14);
}

TEST(MapF, JacobianAtZero) {
  auto G = normalize_boundary_frame(F("0, 1"), {F("x2, 0")});
  std::vector<BracketWordFlow> basis{BracketWordFlow(G, {0}), BracketWordFlow(G, {0, 1})};
  Point y{0, 0.1};
  const double h = 1e-4;
  Eigen::Matrix2d J;
  for (int c = 0; c < 2; ++c) {
    Point tp{0, 0}, tm{0, 0};
    tp[c] = h;
    tm[c] = -h;
    auto a = map_F(y, basis, tp, cfg()), b = map_F(y, basis, tm, cfg());
    for (int k = 0; k < 2; ++k) J(k, c) = (a[k] - b[k]) / (2 * h);
  }
  Eigen::Matrix2d Y;
  for (int c = 0; c < 2; ++c) {
    auto v = basis[c].target().eval(y);
    Y(0, c) = v[0];
    Y(1, c) = v[1];
  }
  EXPECT_NEAR(J.determinant(), Y.determinant(), 1e-4);
  EXPECT_NEAR(Y.determinant(), -1.0, 1e-15);
}

TEST(NormalizeFrame, NormalComponents) {
  auto G = normalize_boundary_frame(F("x1, 2+x1"), {F("1, -2*x1"), F("0, x1")});
  EXPECT_TRUE(G[0][1].is_one());
  EXPECT_TRUE(G[1][1].is_zero());
  EXPECT_TRUE(G[2][1].is_zero());
  auto v = G[1].eval(Point{0.5, 0.3});
  EXPECT_NEAR(v[0], 1.0 + 2 * 0.5 * 0.5 / 2.5, 1e-15);
}

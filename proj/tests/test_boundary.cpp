#include <gtest/gtest.h>

#include <cmath>

#include "ccgeo/boundary.hpp"

using namespace ccgeo;

namespace {

WeightedSystem make(std::vector<std::pair<const char*, int>> fields, int n, bool boundary = true) {
  std::vector<WeightedField> wf;
  for (auto& [text, d] : fields) wf.push_back({VField::parse(text, n), d});
  return WeightedSystem(wf, Point(n, -1.0), Point(n, 1.0), boundary);
}

WeightedSystem straightened() { return make({{"1, -2*x1", 1}, {"0, x1", 1}}, 2); }
WeightedSystem elliptic3() { return make({{"1, 0, 0", 1}, {"0, 1, 0", 1}, {"0, 0, 1", 1}}, 3); }
WeightedSystem heat() { return make({{"1, 0", 1}, {"0, 1", 2}}, 2); }

}  // namespace

TEST(Degree, StraightenedGrushinAwayFromZero) {
  auto rep = deg_boundary(straightened(), Point{0.5, 0}, 2);
  EXPECT_EQ(rep.deg, 1);
  EXPECT_TRUE(rep.noncharacteristic);
  EXPECT_TRUE(rep.locally_constant);
}

TEST(Degree, StraightenedGrushinAtZeroIsCharacteristic) {
  auto rep = deg_boundary(straightened(), Point{0, 0}, 2);
  EXPECT_EQ(rep.deg, 2);
  EXPECT_EQ(rep.witness.word_string(), "[1,2]");
  EXPECT_FALSE(rep.noncharacteristic);
  EXPECT_THROW(build_boundary_system(straightened(), Point{0, 0}, 2), GeometryError);
}

TEST(Degree, TangentUpToOrderThrows) {
  // Order 1 does not span at the origin, so the precondition fails.
  EXPECT_THROW(deg_boundary(straightened(), Point{0, 0}, 1), GeometryError);
  // Interior-tangent system: nothing crosses x2 = 0 at x1 = 0.
  auto tangent = make({{"1, 0", 1}, {"0, x1^2", 1}}, 2);
  EXPECT_THROW(deg_boundary(tangent, Point{0, 0}, 2), GeometryError);
}

TEST(Degree, EllipticEverywhere) {
  for (double a : {-0.7, 0.0, 0.4}) {
    auto rep = deg_boundary(elliptic3(), Point{a, -a / 2, 0}, 1);
    EXPECT_EQ(rep.deg, 1);
    EXPECT_TRUE(rep.noncharacteristic);
  }
}

TEST(Degree, UpperSemicontinuousOnGrid) {
  auto sys = straightened();
  for (int refine : {9, 17, 33}) {
    std::vector<int> deg;
    for (int i = 0; i < refine; ++i) {
      double x = -0.8 + 1.6 * i / (refine - 1);
      deg.push_back(deg_boundary(sys, Point{x, 0}, 2).deg);
    }
    for (int i = 1; i + 1 < refine; ++i)
      EXPECT_FALSE(deg[i] < deg[i - 1] && deg[i] < deg[i + 1]);
  }
}

TEST(Degree, InvariantUnderAddingBracket) {
  auto base = straightened();
  auto fields = base.fields();
  fields.push_back({lie_bracket(base.field(0), base.field(1)), 2});
  WeightedSystem aug(fields, base.lower(), base.upper(), true);
  for (double x : {-0.6, -0.2, 0.0, 0.3, 0.7})
    EXPECT_EQ(deg_boundary(base, Point{x, 0}, 2).deg, deg_boundary(aug, Point{x, 0}, 2).deg);
}

TEST(Construction, StraightenedGrushin) {
  auto b = build_boundary_system(straightened(), Point{0.5, 0}, 2);
  EXPECT_EQ(b.j0, 1);
  EXPECT_EQ(b.X0.to_string(), "0, x1");
  ASSERT_GE(b.X.size(), 2u);
  ASSERT_TRUE(b.X[0].b.is_constant());
  EXPECT_EQ(b.X[0].b.constant_value(), -2.0);
  EXPECT_EQ(b.V[0].field.to_string(), "1");
  EXPECT_EQ(b.V[0].degree, 1);
  EXPECT_TRUE(b.X[1].zero);
  EXPECT_LE(tangency_residual(b), 1e-10);
  EXPECT_GT(boundary_span_floor(b), 0.0);
  EXPECT_LE(bracket_closure_residual(b), 1e-8);
  EXPECT_LE(b.box_lower[0], 0.3);
  EXPECT_GE(b.box_upper[0], 0.7);
  EXPECT_GT(b.box_lower[0], 0.0);
}

TEST(Construction, EllipticHalfSpace) {
  auto b = build_boundary_system(elliptic3(), Point{0.1, 0.2, 0}, 1);
  EXPECT_EQ(b.X0.to_string(), "0, 0, 1");
  int nonzero = 0;
  for (const auto& v : b.V)
    if (!v.zero) {
      ++nonzero;
      EXPECT_EQ(v.degree, 1);
      EXPECT_TRUE(v.b.is_zero());
    }
  EXPECT_EQ(nonzero, 2);
  EXPECT_EQ(b.V[0].field.to_string(), "1, 0");
  EXPECT_EQ(b.V[1].field.to_string(), "0, 1");
}

TEST(Construction, HeatType) {
  auto sys = heat();
  auto rep = deg_boundary(sys, Point{0.2, 0}, 1);
  EXPECT_EQ(rep.deg, 2);
  EXPECT_TRUE(rep.noncharacteristic);
  auto b = build_boundary_system(sys, Point{0.2, 0}, 1);
  EXPECT_EQ(b.X0.to_string(), "0, 1");
  EXPECT_EQ(b.d0, 2);
  EXPECT_EQ(b.V[0].field.to_string(), "1");
  EXPECT_TRUE(b.X[0].b.is_zero());
  EXPECT_TRUE(b.V[1].zero);
}

TEST(Construction, ExportIsScenarioText) {
  auto b = build_boundary_system(straightened(), Point{0.5, 0}, 2);
  auto text = b.to_scenario("grushin_boundary");
  EXPECT_NE(text.find("dim = 1\n"), std::string::npos);
  EXPECT_NE(text.find("field = \"1\" degree=1\n"), std::string::npos);
  EXPECT_NE(text.find("boundary = false\n"), std::string::npos);
}

TEST(Metric, StraightenedGrushinIsEuclidean) {
  auto b = build_boundary_system(straightened(), Point{0.5, 0}, 2);
  auto est = boundary_metric(b, Point{0.3, 0}, Point{0.5, 0}, 0.01);
  EXPECT_TRUE(est.contains(0.2)) << est.lower << " " << est.upper;
  auto same = boundary_metric(b, Point{0.4, 0}, Point{0.4, 0}, 0.01);
  EXPECT_EQ(same.upper, 0.0);
}

TEST(Metric, EllipticBoundaryIsEuclidean) {
  auto b = build_boundary_system(elliptic3(), Point{0, 0, 0}, 1);
  Point x{0.1, 0.1, 0}, y{-0.1, 0.25, 0};
  double d = std::hypot(0.2, 0.15);
  auto est = boundary_metric(b, x, y, 0.01);
  EXPECT_NEAR(est.mid(), d, 0.05 * d);
}

TEST(Metric, RejectsOffBoundaryPoints) {
  auto b = build_boundary_system(straightened(), Point{0.5, 0}, 2);
  EXPECT_THROW(boundary_metric(b, Point{0.3, 0.1}, Point{0.5, 0}, 0.01), GeometryError);
}

#include <gtest/gtest.h>

#include <cmath>

#include "ccgeo/hormander.hpp"

using namespace ccgeo;

namespace {

WeightedSystem make(std::vector<std::pair<const char*, int>> fields, int n, double a = 1.0,
                    bool boundary = false) {
  std::vector<WeightedField> wf;
  for (auto& [text, d] : fields) wf.push_back({VField::parse(text, n), d});
  return WeightedSystem(wf, Point(n, -a), Point(n, a), boundary);
}

WeightedSystem grushin() { return make({{"1, 0", 1}, {"0, x1", 1}}, 2); }
WeightedSystem elliptic() { return make({{"1, 0", 1}, {"0, 1", 1}}, 2); }

}  // namespace

TEST(System, Validation) {
  EXPECT_THROW(make({{"1, 0", 0}}, 2), DimensionError);
  std::vector<WeightedField> wf{{VField::parse("1, 0", 2), 1}};
  EXPECT_THROW(WeightedSystem(wf, {-1, -1}, {1, 1}, false, parse_expr("x1", 2)), DimensionError);
  auto sys = make({{"1, 0", 1}}, 2, 1.0, true);
  EXPECT_TRUE(sys.contains(std::vector<double>{0.2, 0.0}));
  EXPECT_FALSE(sys.contains(std::vector<double>{0.2, -0.1}));
  EXPECT_TRUE(sys.ambient().contains(std::vector<double>{0.2, -0.1}));
}

TEST(Enumerate, OrderOneIsGenerators) {
  auto e = enumerate_commutators(grushin(), 1);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].word_string(), "1");
  EXPECT_EQ(e[1].word_string(), "2");
}

TEST(Enumerate, GrushinBracket) {
  auto e = enumerate_commutators(grushin(), 2);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[2].word_string(), "[1,2]");
  EXPECT_EQ(e[2].degree, 2);
  EXPECT_TRUE(e[2].field.structurally_equal(VField::coordinate(2, 1)));
  EXPECT_FALSE(e[2].zero);
}

TEST(Enumerate, CommutingFieldsGiveFlaggedZero) {
  auto e = enumerate_commutators(make({{"1, 0", 1}, {"0, 1", 2}}, 2), 2);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[2].degree, 3);
  EXPECT_TRUE(e[2].zero);
}

TEST(Enumerate, DegreeAdditivity) {
  auto sys = make({{"1, 0, -x2/2", 1}, {"0, 1, x1/2", 2}}, 3);
  for (const auto& e : enumerate_commutators(sys, 4)) {
    int sum = 0;
    for (int a : e.word) sum += sys.degree(a);
    EXPECT_EQ(e.degree, sum) << e.word_string();
  }
}

TEST(ZSystem, Grushin) {
  auto z = build_Z_system(grushin(), 2);
  ASSERT_EQ(z.size(), 3u);
  EXPECT_EQ(z[2].degree, 2);
  EXPECT_TRUE(z[2].field.structurally_equal(VField::coordinate(2, 1)));
  // Oracle: each entry must equal its own iterated bracket.
  auto sys = grushin();
  EXPECT_TRUE(lie_bracket(sys.field(0), sys.field(1)).structurally_equal(z[2].field));
}

TEST(ZSystem, CapsAtMaxDegree) {
  auto el = build_Z_system(elliptic(), 1);
  EXPECT_EQ(el.size(), 2u);
  auto heat = build_Z_system(make({{"1, 0", 1}, {"0, 1", 2}}, 2), 1);
  ASSERT_EQ(heat.size(), 2u);
  EXPECT_EQ(heat[1].degree, 2);
}

TEST(ZSystem, DropsSignedDuplicates) {
  // [1,[1,2]] = 0 and [2,[1,2]] = 0 for Grushin; keeps only nonzero, distinct.
  auto z = build_Z_system(grushin(), 4);
  for (std::size_t a = 0; a < z.size(); ++a)
    for (std::size_t b = a + 1; b < z.size(); ++b)
      EXPECT_FALSE(z[a].field.structurally_negated(z[b].field));
  for (const auto& e : z) EXPECT_FALSE(e.zero);
}

TEST(Span, Examples) {
  auto cert = check_span_at(enumerate_commutators(grushin(), 2), std::vector<double>{0, 0});
  EXPECT_TRUE(cert.valid);
  EXPECT_NEAR(cert.gamma0, 1.0, 1e-15);
  EXPECT_EQ(cert.witness, (std::vector<int>{0, 2}));

  auto el = check_span_at(enumerate_commutators(elliptic(), 1), std::vector<double>{0.3, -0.2});
  EXPECT_DOUBLE_EQ(el.gamma0, 1.0);

  auto line = make({{"x1", 1}}, 1);
  auto c = check_span_at(enumerate_commutators(line, 1), std::vector<double>{0.0});
  EXPECT_FALSE(c.valid);
  EXPECT_EQ(c.gamma0, 0.0);
}

TEST(Span, ExhaustiveAgreesWithGreedy) {
  auto sys = make({{"1, 0, -x2/2", 1}, {"0, 1, x1/2", 1}, {"x3, x1, 1", 1}}, 3);
  auto entries = enumerate_commutators(sys, 2);
  entries.push_back(enumerate_commutators(sys, 3)[6]);
  ASSERT_LE(entries.size(), 12u);
  for (const auto& p : domain_grid(sys, 4)) {
    auto a = check_span_at(entries, p, SpanStrategy::Exhaustive);
    auto b = check_span_at(entries, p, SpanStrategy::Greedy);
    EXPECT_EQ(a.valid, b.valid);
    EXPECT_NEAR(a.gamma0, b.gamma0, 1e-10);
  }
}

TEST(Span, MonotoneInOrder) {
  auto sys = make({{"1, 0, -x2/2", 1}, {"0, 1, x1/2", 1}}, 3);
  for (const auto& p : domain_grid(sys, 3)) {
    double prev = 0.0;
    for (int m = 1; m <= 3; ++m) {
      double g = check_span_at(enumerate_commutators(sys, m), p).gamma0;
      EXPECT_GE(g, prev);
      prev = g;
    }
  }
}

TEST(Span, RescalingCovariance) {
  const double c = 3.0;
  auto base = grushin();
  auto scaled = make({{"3, 0", 1}, {"0, 3*x1", 1}}, 2);
  for (const auto& p : domain_grid(base, 5)) {
    auto e0 = enumerate_commutators(base, 2);
    auto e1 = enumerate_commutators(scaled, 2);
    for (std::size_t a = 0; a < e0.size(); ++a)
      for (std::size_t b = a + 1; b < e0.size(); ++b) {
        auto u0 = e0[a].field.eval(p), v0 = e0[b].field.eval(p);
        auto u1 = e1[a].field.eval(p), v1 = e1[b].field.eval(p);
        double d0 = u0[0] * v0[1] - u0[1] * v0[0];
        double d1 = u1[0] * v1[1] - u1[1] * v1[0];
        int occ = static_cast<int>(e0[a].word.size() + e0[b].word.size());
        EXPECT_NEAR(d1, std::pow(c, occ) * d0, 1e-12);
      }
    EXPECT_EQ(check_span_at(enumerate_commutators(base, 2), p).valid,
              check_span_at(enumerate_commutators(scaled, 2), p).valid);
  }
}

TEST(Hormander, Grushin) {
  auto sys = grushin();
  auto rep = check_hormander(sys, 4, domain_grid(sys, 21));
  EXPECT_TRUE(rep.ok);
  EXPECT_EQ(rep.order, 2);
  EXPECT_NEAR(rep.min_gamma0, 1.0, 1e-12);
}

TEST(Hormander, Elliptic) {
  auto sys = elliptic();
  auto rep = check_hormander(sys, 3, domain_grid(sys, 5));
  EXPECT_TRUE(rep.ok);
  EXPECT_EQ(rep.order, 1);
  EXPECT_DOUBLE_EQ(rep.min_gamma0, 1.0);
}

TEST(Hormander, DegenerateRejected) {
  auto sys = make({{"x1, 0", 1}, {"0, x1", 1}}, 2);
  auto rep = check_hormander(sys, 4, domain_grid(sys, 11));
  EXPECT_FALSE(rep.ok);
  EXPECT_EQ(rep.min_gamma0, 0.0);
  EXPECT_FALSE(rep.failures.empty());
  for (const auto& p : rep.failures) EXPECT_EQ(p[0], 0.0);
}

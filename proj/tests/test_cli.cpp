#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ccgeo/commands.hpp"

using namespace ccgeo;

namespace {

std::string fixture(const std::string& name) { return std::string(CCGEO_FIXTURES) + "/" + name + ".scn"; }

const char* kMinimal =
    "name = t\n"
    "dim = 2\n"
    "field = \"1, 0\" degree=1\n"
    "field = \"0, x1\" degree=1\n";

int run_cli(const std::string& args, std::string* out = nullptr) {
  std::string cmd = std::string(CCGEO_CLI) + " " + args + " > /tmp/ccgeo_cli_test.out 2>&1";
  int status = std::system(cmd.c_str());
  if (out) {
    std::ifstream f("/tmp/ccgeo_cli_test.out");
    std::stringstream ss;
    ss << f.rdbuf();
    *out = ss.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int error_line(const std::string& text) {
  try {
    parse_scenario(text);
  } catch (const ScenarioError& e) {
    return e.line();
  }
  return -1;
}

}  // namespace

TEST(Scenario, LoadsEllipticFixture) {
  auto sc = load_scenario(fixture("elliptic"));
  EXPECT_EQ(sc.name, "elliptic");
  EXPECT_EQ(sc.dim, 2);
  EXPECT_TRUE(sc.boundary);
  ASSERT_EQ(sc.system.size(), 2);
  EXPECT_EQ(sc.system.field(0).to_string(), "1, 0");
  EXPECT_EQ(sc.system.field(1).to_string(), "0, 1");
  EXPECT_EQ(sc.system.degree(0), 1);
  EXPECT_EQ(sc.system.degree(1), 1);
}

TEST(Scenario, LoadsStraightenedGrushin) {
  auto sc = load_scenario(fixture("grushin_straightened"));
  ASSERT_EQ(sc.field_texts.size(), 2u);
  EXPECT_EQ(sc.field_texts[0].first, "1, -2*x1");
  EXPECT_EQ(sc.field_texts[1].first, "0, x1");
  EXPECT_TRUE(sc.system.has_boundary());
  EXPECT_GT(sc.reg("xi1", 0), 0.0);
}

TEST(Scenario, DegreeZeroRejectedWithLine) {
  std::string text = std::string(kMinimal) + "field = \"1, 1\" degree=0\n";
  try {
    parse_scenario(text);
    FAIL();
  } catch (const ScenarioError& e) {
    EXPECT_EQ(e.line(), 5);
    EXPECT_NE(std::string(e.what()).find("degree must be >= 1"), std::string::npos);
  }
}

TEST(Scenario, Diagnostics) {
  EXPECT_EQ(error_line(std::string(kMinimal) + "colour = red\n"), 5);
  EXPECT_EQ(error_line(std::string(kMinimal) + "dim = 3\n"), 5);
  EXPECT_EQ(error_line(std::string(kMinimal) + "deltas = 0.1, 0.2\n"), 5);
  EXPECT_EQ(error_line(std::string(kMinimal) + "probe = 2, 0\n"), 5);
  EXPECT_EQ(error_line(std::string(kMinimal) + "probe = 0\n"), 5);
  EXPECT_EQ(error_line(std::string(kMinimal) + "density = \"x1\"\n"), 5);
  EXPECT_EQ(error_line("name = t\ndim = 2\nfield = \"1, y\" degree=1\n"), 3);
  EXPECT_EQ(error_line("name = t\ndim = 2\n"), 0);
  EXPECT_EQ(error_line(kMinimal), -1);
}

TEST(Scenario, CommentsAndDefaults) {
  auto sc = parse_scenario(std::string("# header\n") + kMinimal + "seed = 7   # trailing\nregression.C = 2.5\n");
  EXPECT_EQ(sc.seed, 7u);
  EXPECT_EQ(sc.lower, (Point{-1, -1}));
  EXPECT_EQ(sc.reg("C", 0), 2.5);
}

TEST(Scenario, WithBracketsAppendsDegreeTwo) {
  auto sc = load_scenario(fixture("grushin"));
  auto aug = with_brackets(sc.system);
  ASSERT_EQ(aug.size(), 3);
  EXPECT_EQ(aug.field(2).to_string(), "0, 1");
  EXPECT_EQ(aug.degree(2), 2);
}

TEST(Report, CsvQuotingAndJsonKeysSorted) {
  EXPECT_EQ(csv_field(nlohmann::json("a,b")), "\"a,b\"");
  EXPECT_EQ(csv_field(nlohmann::json("say \"hi\"")), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_field(nlohmann::json(0.5)), "0.5");
  Report r;
  r.scenario = "s";
  r.command = "c";
  r.add_row({{"zeta", 1}, {"alpha", "x"}});
  auto j = r.to_json();
  EXPECT_LT(j.find("\"command\""), j.find("\"scenario\""));
  EXPECT_LT(j.find("\"alpha\""), j.find("\"zeta\""));
  EXPECT_EQ(r.to_csv().find('\r'), std::string::npos);
}

TEST(Commands, BracketOfGrushin) {
  auto sc = load_scenario(fixture("grushin"));
  CommandOptions opt;
  opt.bracket = {1, 2};
  auto r = cmd_bracket(sc, opt);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0]["components"], "0, 1");
  EXPECT_EQ(r.rows[0]["degree"], 2);
  EXPECT_EQ(r.rows[0]["operator"], "∂x2");
  opt.bracket = {1, 3};
  EXPECT_THROW(cmd_bracket(sc, opt), ScenarioError);
}

TEST(Commands, BoundaryExport) {
  auto sc = load_scenario(fixture("grushin_straightened"));
  CommandOptions opt;
  opt.x = Point{0.5, 0};
  std::string text;
  auto r = cmd_boundary(sc, opt, &text);
  EXPECT_TRUE(r.pass());
  EXPECT_EQ(r.rows[0]["deg"], 1);
  EXPECT_NE(text.find("field = \"1\" degree=1"), std::string::npos);
  auto exported = parse_scenario(text);
  EXPECT_EQ(exported.dim, 1);
  opt.x = Point{0, 0};
  EXPECT_FALSE(cmd_boundary(sc, opt).pass());
}

TEST(Commands, BallIsDeterministic) {
  auto sc = load_scenario(fixture("grushin"));
  CommandOptions opt;
  opt.x = Point{0, 0};
  opt.delta = 0.3;
  opt.samples = 300;
  opt.seed = 7;
  auto a = cmd_ball(sc, opt).to_csv();
  opt.jobs = 2;
  auto b = cmd_ball(sc, opt).to_csv();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.substr(0, a.find('\n')), "index,x1,x2,feasible");
}

TEST(Commands, CheckFixtures) {
  EXPECT_TRUE(cmd_check(load_scenario(fixture("grushin")), {}).pass());
  EXPECT_FALSE(cmd_check(load_scenario(fixture("degenerate")), {}).pass());
  EXPECT_EQ(scenario_order(load_scenario(fixture("grushin"))), 2);
}

TEST(Commands, VerifyDoublingElliptic) {
  auto sc = load_scenario(fixture("elliptic"));
  CommandOptions opt;
  opt.samples = 500;
  auto r = cmd_verify(sc, "doubling", opt);
  for (const auto& row : r.rows)
    if (row["kind"] == "lambda") EXPECT_NEAR(row["ratio"].get<double>(), 4.0, 1e-12);
  EXPECT_TRUE(r.verdicts.front().pass);
  EXPECT_THROW(cmd_verify(sc, "nonsense", opt), ScenarioError);
  EXPECT_THROW(cmd_verify(load_scenario(fixture("grushin")), "boundary-metric", opt), ScenarioError);
}

TEST(Cli, ExitCodes) {
  std::string out;
  EXPECT_EQ(run_cli("--version", &out), 0);
  EXPECT_NE(out.find("v0.1.0"), std::string::npos);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("check /nonexistent.scn"), 1);
  EXPECT_EQ(run_cli("check " + fixture("grushin")), 0);
  EXPECT_EQ(run_cli("check " + fixture("degenerate")), 2);
  EXPECT_EQ(run_cli("bracket " + fixture("grushin") + " 1 2", &out), 0);
  EXPECT_NE(out.find("\"0, 1\""), std::string::npos);
}

TEST(Cli, RerunIsByteIdentical) {
  std::string a, b;
  std::string args = "ball " + fixture("grushin") + " --x 0 0 --delta 0.3 --samples 500 --seed 7";
  ASSERT_EQ(run_cli(args, &a), 0);
  ASSERT_EQ(run_cli(args + " --jobs 3", &b), 0);
  EXPECT_EQ(a, b);
}

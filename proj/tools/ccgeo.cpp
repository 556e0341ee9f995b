// ccgeo: command-line front end for scenarios (see README for the format).

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "ccgeo/commands.hpp"
#include "ccgeo/parallel.hpp"

using namespace ccgeo;

namespace {

struct Args {
  std::string scenario;
  std::vector<double> x, y;
  double delta = 0;
  int samples = 0;
  long long seed = -1;
  std::string mode;
  std::string out;
  std::string format;
  std::string export_path;
  int jobs = default_jobs();
  double tol = 0.01;
  int pairs = 0;
  std::string suite;
  std::vector<int> indices;
};

void add_common(CLI::App* sub, Args& a) {
  sub->add_option("scenario", a.scenario, "Scenario file")->required();
  sub->add_option("--x", a.x, "Base point coordinates")->expected(1, -1);
  sub->add_option("--delta", a.delta, "Radius");
  sub->add_option("--samples", a.samples, "Sample count");
  sub->add_option("--seed", a.seed, "RNG seed");
  sub->add_option("--mode", a.mode, "intrinsic or extrinsic")->check(CLI::IsMember({"intrinsic", "extrinsic"}));
  sub->add_option("--out", a.out, "Write the report to a .json or .csv file");
  sub->add_option("--format", a.format, "Stdout format")->check(CLI::IsMember({"json", "csv", "text"}));
  sub->add_option("--jobs", a.jobs, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--tol", a.tol, "Relative tolerance for distance intervals")->check(CLI::PositiveNumber);
}

CommandOptions to_options(const Args& a) {
  CommandOptions o;
  if (!a.x.empty()) o.x = a.x;
  if (!a.y.empty()) o.y = a.y;
  if (a.delta > 0) o.delta = a.delta;
  if (a.samples > 0) o.samples = a.samples;
  if (a.seed >= 0) o.seed = static_cast<std::uint64_t>(a.seed);
  if (!a.mode.empty()) o.mode = parse_mode(a.mode);
  o.jobs = a.jobs;
  o.tol = a.tol;
  o.pairs = a.pairs;
  o.bracket = a.indices;
  return o;
}

int emit(const Report& r, const Args& a, const std::string& fallback) {
  if (!a.out.empty()) r.write(a.out);
  std::string fmt = a.format.empty() ? fallback : a.format;
  if (fmt == "json") std::cout << r.to_json();
  else if (fmt == "csv") std::cout << r.to_csv();
  else {
    std::cout << r.command << " " << r.scenario << " (" << r.version << ")\n" << r.summary();
    std::cout << (r.pass() ? "PASS" : "FAIL") << "\n";
  }
  return r.pass() ? kExitPass : kExitFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Carnot-Caratheodory geometry toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Args a;

  auto* verify = app.add_subcommand("verify", "Run a verification suite");
  add_common(verify, a);
  verify->add_option("suite", a.suite, "Suite name")->required()->check(CLI::IsMember(kSuites));
  verify->add_option("--pairs", a.pairs, "Pair count for distance suites");

  auto* dist = app.add_subcommand("dist", "CC distance interval between --x and --y");
  add_common(dist, a);
  dist->add_option("--y", a.y, "Target point")->expected(1, -1);

  auto* ball = app.add_subcommand("ball", "Sampled ball endpoints");
  add_common(ball, a);
  auto* volume = app.add_subcommand("volume", "Monte-Carlo ball volume and Lambda");
  add_common(volume, a);
  auto* scale = app.add_subcommand("scale", "Scaling map diagnostics at (--x, --delta)");
  add_common(scale, a);
  auto* boundary = app.add_subcommand("boundary", "Boundary system at --x");
  add_common(boundary, a);
  boundary->add_option("--export", a.export_path, "Write the V-system scenario here");
  auto* bracket = app.add_subcommand("bracket", "Lie bracket of two generators (1-based)");
  add_common(bracket, a);
  bracket->add_option("indices", a.indices, "Two generator indices")->expected(2);
  auto* check = app.add_subcommand("check", "Hormander certification on the domain grid");
  add_common(check, a);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitPass : kExitUsage;
  }

  try {
    Scenario sc = load_scenario(a.scenario);
    CommandOptions opt = to_options(a);
    if (verify->parsed()) return emit(cmd_verify(sc, a.suite, opt), a, "text");
    if (dist->parsed()) return emit(cmd_dist(sc, opt), a, "json");
    if (ball->parsed()) return emit(cmd_ball(sc, opt), a, "csv");
    if (volume->parsed()) return emit(cmd_volume(sc, opt), a, "json");
    if (scale->parsed()) return emit(cmd_scale(sc, opt), a, "json");
    if (bracket->parsed()) return emit(cmd_bracket(sc, opt), a, "json");
    if (check->parsed()) return emit(cmd_check(sc, opt), a, "text");
    if (boundary->parsed()) {
      std::string text;
      Report r = cmd_boundary(sc, opt, &text);
      if (!a.export_path.empty() && !text.empty()) {
        std::ofstream f(a.export_path, std::ios::binary);
        if (!f) throw Error("cannot write " + a.export_path);
        f << text;
      }
      int code = emit(r, a, "text");
      if (a.export_path.empty() && a.format.empty() && !text.empty()) std::cout << text;
      return code;
    }
  } catch (const ScenarioError& e) {
    std::cerr << "ccgeo: " << a.scenario << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const FlowError& e) {
    std::cerr << "ccgeo: flow error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DomainError& e) {
    std::cerr << "ccgeo: numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "ccgeo: " << e.what() << "\n";
    return kExitFail;
  } catch (const std::exception& e) {
    std::cerr << "ccgeo: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}

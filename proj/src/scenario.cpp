#include "ccgeo/scenario.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace ccgeo {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strips a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

double number(const std::string& text, int line, const std::string& key) {
  std::string t = trim(text);
  if (t == "inf") return std::numeric_limits<double>::infinity();
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE)
    throw ScenarioError("'" + key + "': expected a number, got '" + t + "'", line);
  return v;
}

long integer(const std::string& text, int line, const std::string& key) {
  std::string t = trim(text);
  char* end = nullptr;
  long v = std::strtol(t.c_str(), &end, 10);
  if (t.empty() || end != t.c_str() + t.size())
    throw ScenarioError("'" + key + "': expected an integer, got '" + t + "'", line);
  return v;
}

std::vector<double> numbers(const std::string& text, int line, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(number(item, line, key));
  return out;
}

std::string unquote(const std::string& text, int line, const std::string& key) {
  std::string t = trim(text);
  if (t.size() < 2 || t.front() != '"' || t.back() != '"')
    throw ScenarioError("'" + key + "': expected a quoted string", line);
  return t.substr(1, t.size() - 2);
}

}  // namespace

double Scenario::reg(const std::string& key, double fallback) const {
  auto it = regression.find(key);
  return it == regression.end() ? fallback : it->second;
}

Scenario parse_scenario(const std::string& text, const std::string& source) {
  Scenario sc;
  sc.source = source;
  std::map<std::string, int> seen;
  int density_line = 0, fields_line = 0;
  std::vector<int> probe_lines, field_lines;
  std::stringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string body = trim(strip_comment(raw));
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string::npos) throw ScenarioError("expected 'key = value'", line);
    std::string key = trim(body.substr(0, eq));
    std::string value = trim(body.substr(eq + 1));
    bool repeatable = key == "field" || key == "probe";
    if (!repeatable && seen.count(key))
      throw ScenarioError("duplicate key '" + key + "' (first on line " + std::to_string(seen[key]) + ")", line);
    seen[key] = line;

    if (key == "name") {
      sc.name = value;
    } else if (key == "dim") {
      sc.dim = static_cast<int>(integer(value, line, key));
      if (sc.dim < 1) throw ScenarioError("dim must be >= 1", line);
    } else if (key == "lower") {
      sc.lower = numbers(value, line, key);
    } else if (key == "upper") {
      sc.upper = numbers(value, line, key);
    } else if (key == "boundary") {
      if (value != "true" && value != "false") throw ScenarioError("boundary must be true or false", line);
      sc.boundary = value == "true";
    } else if (key == "density") {
      sc.density = unquote(value, line, key);
      density_line = line;
    } else if (key == "order") {
      sc.order = static_cast<int>(integer(value, line, key));
      if (sc.order < 0) throw ScenarioError("order must be >= 0", line);
    } else if (key == "field") {
      auto close = value.rfind('"');
      if (value.empty() || value.front() != '"' || close == 0 || close == std::string::npos)
        throw ScenarioError("field needs a quoted component list", line);
      std::string comps = value.substr(1, close - 1);
      std::string rest = trim(value.substr(close + 1));
      int degree = 1;
      if (!rest.empty()) {
        if (rest.rfind("degree", 0) != 0) throw ScenarioError("unexpected text after field: '" + rest + "'", line);
        auto e2 = rest.find('=');
        if (e2 == std::string::npos) throw ScenarioError("expected degree=<k>", line);
        degree = static_cast<int>(integer(rest.substr(e2 + 1), line, "degree"));
      }
      if (degree < 1) throw ScenarioError("degree must be >= 1", line);
      sc.field_texts.emplace_back(comps, degree);
      field_lines.push_back(line);
      if (!fields_line) fields_line = line;
    } else if (key == "probe") {
      sc.probes.push_back(numbers(value, line, key));
      probe_lines.push_back(line);
    } else if (key == "deltas") {
      sc.deltas = numbers(value, line, key);
      for (std::size_t i = 0; i < sc.deltas.size(); ++i) {
        if (!(sc.deltas[i] > 0)) throw ScenarioError("deltas must be positive", line);
        if (i > 0 && !(sc.deltas[i] < sc.deltas[i - 1]))
          throw ScenarioError("deltas must be strictly decreasing", line);
      }
    } else if (key == "seed") {
      long s = integer(value, line, key);
      if (s < 0) throw ScenarioError("seed must be >= 0", line);
      sc.seed = static_cast<std::uint64_t>(s);
    } else if (key == "samples") {
      sc.samples = static_cast<int>(integer(value, line, key));
      if (sc.samples < 1) throw ScenarioError("samples must be >= 1", line);
    } else if (key == "delta_cap") {
      sc.delta_cap = number(value, line, key);
      if (!(sc.delta_cap > 0)) throw ScenarioError("delta_cap must be positive", line);
    } else if (key == "sigma") {
      sc.sigma = number(value, line, key);
      if (sc.sigma < 0) throw ScenarioError("sigma must be >= 0", line);
    } else if (key.rfind("regression.", 0) == 0) {
      sc.regression[key.substr(11)] = number(value, line, key);
    } else {
      throw ScenarioError("unknown key '" + key + "'", line);
    }
  }

  if (sc.name.empty()) throw ScenarioError("missing 'name'", 0);
  if (sc.dim == 0) throw ScenarioError("missing 'dim'", 0);
  if (sc.field_texts.empty()) throw ScenarioError("no 'field' entries", 0);
  const int n = sc.dim;
  if (sc.lower.empty()) sc.lower.assign(n, -1.0);
  if (sc.upper.empty()) sc.upper.assign(n, 1.0);
  if (static_cast<int>(sc.lower.size()) != n || static_cast<int>(sc.upper.size()) != n)
    throw ScenarioError("lower/upper need " + std::to_string(n) + " entries", seen.count("lower") ? seen["lower"] : seen["upper"]);

  std::vector<WeightedField> fields;
  for (std::size_t i = 0; i < sc.field_texts.size(); ++i) {
    try {
      fields.push_back({VField::parse(sc.field_texts[i].first, n), sc.field_texts[i].second});
    } catch (const Error& e) {
      throw ScenarioError(std::string("field: ") + e.what(), field_lines[i]);
    }
  }
  Expr density;
  try {
    density = parse_expr(sc.density, n);
  } catch (const Error& e) {
    throw ScenarioError(std::string("density: ") + e.what(), density_line);
  }
  try {
    sc.system = WeightedSystem(fields, sc.lower, sc.upper, sc.boundary, density);
  } catch (const Error& e) {
    std::string what = e.what();
    int at = what.find("density") != std::string::npos ? density_line : fields_line;
    throw ScenarioError(what, at);
  }
  for (std::size_t i = 0; i < sc.probes.size(); ++i) {
    if (static_cast<int>(sc.probes[i].size()) != n)
      throw ScenarioError("probe needs " + std::to_string(n) + " coordinates", probe_lines[i]);
    if (!sc.system.contains(sc.probes[i]))
      throw ScenarioError("probe lies outside the domain", probe_lines[i]);
  }
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ScenarioError("cannot open scenario file '" + path + "'", 0);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_scenario(ss.str(), path);
}

WeightedSystem with_brackets(const WeightedSystem& sys) {
  auto fields = sys.fields();
  for (int i = 0; i < sys.size(); ++i)
    for (int j = i + 1; j < sys.size(); ++j) {
      VField b = lie_bracket(sys.field(i), sys.field(j));
      if (!b.is_structurally_zero()) fields.push_back({b, sys.degree(i) + sys.degree(j)});
    }
  return WeightedSystem(fields, sys.lower(), sys.upper(), sys.has_boundary(), sys.density());
}

}  // namespace ccgeo

#include "ccgeo/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ccgeo/error.hpp"

namespace ccgeo {

namespace {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

bool Report::pass() const {
  for (const auto& v : verdicts)
    if (!v.pass) return false;
  return true;
}

void Report::add_row(nlohmann::json row) {
  for (auto it = row.begin(); it != row.end(); ++it)
    if (std::find(columns.begin(), columns.end(), it.key()) == columns.end()) columns.push_back(it.key());
  rows.push_back(std::move(row));
}

Verdict& Report::check(std::string name, bool pass, double value, double threshold, std::string detail) {
  verdicts.push_back({std::move(name), pass, value, threshold, std::move(detail)});
  return verdicts.back();
}

std::string Report::to_json() const {
  nlohmann::json j;
  j["scenario"] = scenario;
  j["command"] = command;
  j["version"] = version;
  j["params"] = params;
  j["rows"] = rows;
  nlohmann::json vs = nlohmann::json::array();
  for (const auto& v : verdicts) {
    nlohmann::json o;
    o["name"] = v.name;
    o["pass"] = v.pass;
    // JSON has no infinities; they are written as strings.
    if (std::isfinite(v.value)) o["value"] = v.value; else o["value"] = format_number(v.value);
    if (std::isfinite(v.threshold)) o["threshold"] = v.threshold; else o["threshold"] = format_number(v.threshold);
    o["detail"] = v.detail;
    vs.push_back(o);
  }
  j["verdicts"] = vs;
  j["pass"] = pass();
  return j.dump(2) + "\n";
}

std::string csv_field(const nlohmann::json& v) {
  std::string s;
  if (v.is_string()) {
    s = v.get<std::string>();
  } else if (v.is_number_float()) {
    s = format_number(v.get<double>());
  } else if (v.is_null()) {
    s = "";
  } else {
    s = v.dump();
  }
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string Report::to_csv() const {
  std::ostringstream out;
  for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << csv_field(columns[c]);
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (c) out << ",";
      auto it = row.find(columns[c]);
      if (it != row.end()) out << csv_field(*it);
    }
    out << "\n";
  }
  return out.str();
}

std::string Report::summary() const {
  std::ostringstream out;
  for (const auto& v : verdicts) {
    out << (v.pass ? "PASS " : "FAIL ") << v.name << " " << format_number(v.value) << " ("
        << format_number(v.threshold) << ")";
    if (!v.detail.empty()) out << " " << v.detail;
    out << "\n";
  }
  return out.str();
}

void Report::write(const std::string& path) const {
  auto ends = [&](const std::string& ext) {
    return path.size() >= ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0;
  };
  std::string text;
  if (ends(".json")) text = to_json();
  else if (ends(".csv")) text = to_csv();
  else throw Error("output path must end in .json or .csv: " + path);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f << text;
}

}  // namespace ccgeo

#ifndef CCGEO_REPORT_HPP_
#define CCGEO_REPORT_HPP_

#include <string>
#include <vector>

#include "json.hpp"

namespace ccgeo {

inline constexpr const char* kVersion = "v0.1.0";

struct Verdict {
  std::string name;
  bool pass = false;
  double value = 0;
  double threshold = 0;
  std::string detail;
};

/// Output of one command: parameter echo, result rows and verdicts. Rows
/// are JSON objects; the CSV form uses `columns` in order.
struct Report {
  std::string scenario;
  std::string command;
  std::string version = kVersion;
  nlohmann::json params = nlohmann::json::object();
  std::vector<std::string> columns;
  std::vector<nlohmann::json> rows;
  std::vector<Verdict> verdicts;

  bool pass() const;
  void add_row(nlohmann::json row);
  Verdict& check(std::string name, bool pass, double value, double threshold, std::string detail = "");

  /// Keys sorted, two-space indent, trailing newline.
  std::string to_json() const;
  /// RFC-4180 rows (LF line endings); verdicts are not included.
  std::string to_csv() const;
  /// One line per verdict: `PASS name value (threshold) detail`.
  std::string summary() const;
  /// Writes JSON or CSV by the extension of `path` (.json or .csv).
  void write(const std::string& path) const;
};

std::string csv_field(const nlohmann::json& v);

}  // namespace ccgeo

#endif  // CCGEO_REPORT_HPP_

#pragma once

#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "parametrix/common.hpp"

namespace parametrix {

// RFC-4180 CSV with a header row, '.' decimals, and a trailing
// `# config-hash: <hex>` metadata comment. Doubles print with 17 significant
// digits so identical runs produce byte-identical files.
class csv_writer {
 public:
  using field = std::variant<double, long long, std::string, bool>;

  explicit csv_writer(std::vector<std::string> header)
      : header_(std::move(header)) {}

  void add_row(std::vector<field> row) {
    if (row.size() != header_.size())
      throw invalid_param("csv row width does not match header");
    rows_.push_back(std::move(row));
  }

  std::string str(const std::string& hash) const {
    std::string out;
    for (std::size_t i = 0; i < header_.size(); ++i) {
      if (i) out += ',';
      out += quote(header_[i]);
    }
    out += '\n';
    for (const auto& row : rows_) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += format(row[i]);
      }
      out += '\n';
    }
    out += "# config-hash: " + hash + "\n";
    return out;
  }

  void write(const std::string& path, const std::string& hash) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw invalid_param("cannot open output file '" + path + "'");
    f << str(hash);
  }

  std::size_t row_count() const { return rows_.size(); }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    out += '"';
    return out;
  }

  static std::string format(const field& f) {
    if (std::holds_alternative<double>(f)) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", std::get<double>(f));
      return buf;
    }
    if (std::holds_alternative<long long>(f))
      return std::to_string(std::get<long long>(f));
    if (std::holds_alternative<bool>(f))
      return std::get<bool>(f) ? "true" : "false";
    return quote(std::get<std::string>(f));
  }

  std::vector<std::string> header_;
  std::vector<std::vector<field>> rows_;
};

}  // namespace parametrix

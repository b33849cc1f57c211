#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "elab/core/errors.hpp"

namespace elab {

// Doubles are written with 17 significant digits so a parsed log reproduces
// the run's values bit-exactly.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header, bool append = false)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw ConfigError("cannot open " + path + " for writing");
    const bool write_header = !append || out_.tellp() == 0;
    if (write_header) {
      for (size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
      out_ << "\n";
    }
    columns_ = header.size();
  }

  CsvWriter& field(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return raw(buf);
  }
  CsvWriter& field(long v) { return raw(std::to_string(v)); }
  CsvWriter& field(int v) { return raw(std::to_string(v)); }
  CsvWriter& field(const std::string& v) { return raw(v); }

  void end_row() {
    if (written_ != columns_) throw ContractError("csv row width mismatch");
    out_ << "\n";
    written_ = 0;
  }

  void flush() { out_.flush(); }

 private:
  CsvWriter& raw(const std::string& s) {
    out_ << (written_ ? "," : "") << s;
    ++written_;
    return *this;
  }

  std::ofstream out_;
  size_t columns_ = 0;
  size_t written_ = 0;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw ContractError("csv column not found: " + name);
  }
  double number(size_t row, int col) const { return std::stod(rows[row][col]); }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (first) {
      t.header = std::move(fields);
      first = false;
    } else {
      t.rows.push_back(std::move(fields));
    }
  }
  return t;
}

}  // namespace elab

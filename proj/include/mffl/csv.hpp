#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mffl/common.hpp"

namespace mffl {

// 17 significant digits: enough to make doubles round-trip, which is what
// keeps repeated runs byte-identical.
inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns)
      : out_(path) {
    require(out_.good(), "cannot open " + path.string() + " for writing");
    write_cells(columns);
  }

  template <typename... Cells>
  void row(const Cells&... cells) {
    std::vector<std::string> formatted;
    formatted.reserve(sizeof...(cells));
    (formatted.push_back(format(cells)), ...);
    write_cells(formatted);
  }

 private:
  static std::string format(double v) { return g17(v); }
  static std::string format(int v) { return std::to_string(v); }
  static std::string format(long v) { return std::to_string(v); }
  static std::string format(std::size_t v) { return std::to_string(v); }
  static std::string format(const std::string& v) { return v; }
  static std::string format(const char* v) { return v; }

  void write_cells(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  std::ofstream out_;
};

}  // namespace mffl

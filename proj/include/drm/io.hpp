#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "drm/errors.hpp"
#include "drm/qmsl.hpp"
#include "drm/state.hpp"

namespace drm::io {

// Shortest decimal form that round-trips a double.
inline std::string fmt(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  double back = 0.0;
  for (int p = 6; p <= 17; ++p) {
    std::ostringstream t;
    t.imbue(std::locale::classic());
    t << std::setprecision(p) << v;
    std::istringstream in(t.str());
    in >> back;
    if (back == v) return t.str();
  }
  return os.str();
}

struct Column {
  std::string name;
  std::string unit;  // "1" for dimensionless
};

inline std::string header_row(const std::vector<Column>& cols) {
  std::string s;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) s += ',';
    s += cols[i].name + " [" + cols[i].unit + "]";
  }
  return s;
}

class CsvTable {
public:
  explicit CsvTable(std::vector<Column> cols) : cols_(std::move(cols)) {}
  void add(const std::vector<double>& row) {
    require(row.size() == cols_.size(), "row width does not match the header");
    std::string s;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) s += ',';
      s += fmt(row[i]);
    }
    rows_.push_back(std::move(s));
  }
  // Pre-formatted row for mixed text/number content.
  void add_raw(std::string row) { rows_.push_back(std::move(row)); }
  std::string str(const std::vector<std::string>& preamble = {}) const {
    std::string out;
    for (const auto& p : preamble) out += "# " + p + "\n";
    out += header_row(cols_) + "\n";
    for (const auto& r : rows_) out += r + "\n";
    return out;
  }
  std::size_t size() const { return rows_.size(); }

private:
  std::vector<Column> cols_;
  std::vector<std::string> rows_;
};

// Complex array as interleaved (re, im) columns; one row per element.
inline CsvTable complex_array_csv(const Vec& v, const std::string& unit = "1") {
  CsvTable t({{"index", "1"}, {"re", unit}, {"im", unit}});
  for (Eigen::Index i = 0; i < v.size(); ++i) t.add({double(i), v[i].real(), v[i].imag()});
  return t;
}

inline CsvTable grid_state_csv(const GridWavefunction& g, const std::string& length_unit = "internal length") {
  CsvTable t({{"x", length_unit}, {"re", "length^-1/2"}, {"im", "length^-1/2"}});
  for (std::size_t j = 0; j < g.size(); ++j) t.add({g.x(j), g.psi[Eigen::Index(j)].real(), g.psi[Eigen::Index(j)].imag()});
  return t;
}

inline CsvTable hitting_events_csv(const std::vector<qmsl::HittingEvent>& ev, const std::string& time_unit = "internal time",
                                   const std::string& length_unit = "internal length") {
  CsvTable t({{"time", time_unit}, {"center", length_unit}, {"weight", "1"}});
  for (const auto& e : ev) t.add({e.time, e.center, e.pre_norm_sq});
  return t;
}

// Writes to a temporary sibling and renames it into place.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace drm::io

#include "expomap/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace expomap {

void write_map_csv(std::ostream& out, const Grid<double>& values) {
  char buf[32];
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.12g", values(r, c));
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

Grid<double> read_map_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) {
        throw Error(ErrorCode::FormatError, "map CSV cell is not numeric: '" + cell + "'");
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorCode::FormatError, "map CSV rows differ in length");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::FormatError, "map CSV is empty");
  Grid<double> g(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) g(r, c) = rows[r][c];
  }
  return g;
}

void write_map_pgm(std::ostream& out, const ExposureMap& map) {
  const auto& v = map.values;
  const bool has_excl = map.excluded.same_shape(v);
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (has_excl && map.excluded[i]) continue;
    lo = std::min(lo, v[i]);
    hi = std::max(hi, v[i]);
  }
  const bool degenerate = !(hi > lo);
  out << "P2\n" << v.cols() << ' ' << v.rows() << "\n255\n";
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (std::size_t c = 0; c < v.cols(); ++c) {
      const std::size_t i = r * v.cols() + c;
      int level = 0;
      if (!degenerate && !(has_excl && map.excluded[i])) {
        level = static_cast<int>(std::lround((v[i] - lo) / (hi - lo) * 255.0));
        level = std::clamp(level, 0, 255);
      }
      if (c) out << ' ';
      out << level;
    }
    out << '\n';
  }
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::IoError, "cannot open " + tmp + " for writing");
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw Error(ErrorCode::IoError, "failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot rename " + tmp + " to " + path + ": " + ec.message());
}

}  // namespace expomap

#pragma once

#include <istream>
#include <ostream>
#include <string>

#include "expomap/grid.hpp"

namespace expomap {

// M lines of N comma-separated values, row 0 first, 12 significant digits.
void write_map_csv(std::ostream& out, const Grid<double>& values);
Grid<double> read_map_csv(std::istream& in);

// Plain P2 greymap, maxval 255, row 0 on the first line. Values are min-max
// scaled over non-excluded pixels; excluded pixels render 0, as does every
// pixel of a constant map.
void write_map_pgm(std::ostream& out, const ExposureMap& map);

// Writes to `path` through a sibling temp file and a rename.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace expomap

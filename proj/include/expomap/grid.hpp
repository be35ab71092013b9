#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "expomap/error.hpp"

namespace expomap {

// Row-major M x N raster. Row 0 is the southern edge of the area.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }

  bool same_shape(std::size_t rows, std::size_t cols) const noexcept {
    return rows_ == rows && cols_ == cols;
  }
  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

struct Pixel {
  std::size_t row = 0;
  std::size_t col = 0;

  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

// Flat pixel index: row * cols + col.
using PixelIndex = std::uint32_t;

struct GridSpec {
  double origin_lat = 0.0;  // south-west corner
  double origin_lon = 0.0;
  double extent_m = 1000.0;
  std::size_t rows = 128;
  std::size_t cols = 128;

  // Throws InvalidArgument when the invariants do not hold.
  void validate() const;

  double pixel_width_m() const { return extent_m / static_cast<double>(cols); }
  double pixel_height_m() const { return extent_m / static_cast<double>(rows); }
  std::size_t pixel_count() const { return rows * cols; }
  PixelIndex index(Pixel p) const {
    return static_cast<PixelIndex>(p.row * cols + p.col);
  }
  Pixel pixel(PixelIndex i) const { return {i / cols, i % cols}; }
};

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

struct SensorReading {
  std::string sensor_id;
  Timestamp timestamp{};
  double lat = 0.0;
  double lon = 0.0;
  double e_field = 0.0;  // V/m
  std::optional<double> humidity;

  friend bool operator==(const SensorReading&, const SensorReading&) = default;
};

struct NormParams {
  double min_vpm = 0.0;
  double max_vpm = 1.0;

  void validate() const;
};

double normalize(double vpm, const NormParams& p);
double denormalize(double normalized, const NormParams& p);

struct ObservationGrid {
  Grid<double> values;        // normalized units, 0 where unobserved
  Grid<std::uint8_t> mask;    // 1 at observed pixels

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
  std::size_t observed_count() const;
  // Observed pixels in ascending flat-index order.
  std::vector<PixelIndex> observed_pixels() const;
  std::vector<double> observed_values() const;
};

enum class Units { Normalized, VoltsPerMeter };

struct ExposureMap {
  Grid<double> values;
  Units units = Units::Normalized;
  Grid<std::uint8_t> excluded;  // 1 where suppressed (building)

  static ExposureMap from_values(Grid<double> values, Units units);
  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
};

struct BuildingMask {
  Grid<std::uint8_t> blocked;
};

// Equirectangular local projection around the grid origin. Returns nullopt
// when the point falls outside [0, extent_m)^2.
std::optional<Pixel> latlon_to_pixel(const GridSpec& spec, double lat,
                                     double lon);

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

// Inverse of latlon_to_pixel evaluated at the pixel center.
LatLon pixel_center_latlon(const GridSpec& spec, Pixel p);

// Local metric coordinates (x east, y north) of a lat/lon point relative to
// the grid origin.
struct LocalXY {
  double x = 0.0;
  double y = 0.0;
};
LocalXY project_local(const GridSpec& spec, double lat, double lon);

struct RasterizeResult {
  ObservationGrid grid;
  std::size_t out_of_bounds_dropped = 0;
};

RasterizeResult rasterize_readings(std::span<const SensorReading> readings,
                                   const GridSpec& spec,
                                   const NormParams& norm);

// Zeroes blocked pixels and flags them excluded. Throws ShapeMismatch.
ExposureMap apply_building_mask(const ExposureMap& map,
                                const BuildingMask& buildings);

}  // namespace expomap

#include "expomap/grid.hpp"

#include <cmath>
#include <map>
#include <numbers>

namespace expomap {

namespace {

constexpr double kMetersPerDegreeLon = 111320.0;  // at the equator
constexpr double kMetersPerDegreeLat = 110574.0;
// Absorbs rounding when a point sits exactly on a pixel edge.
constexpr double kEdgeSnap = 1e-9;

double lon_scale(const GridSpec& spec) {
  return std::cos(spec.origin_lat * std::numbers::pi / 180.0) *
         kMetersPerDegreeLon;
}

}  // namespace

void GridSpec::validate() const {
  if (rows < 1 || cols < 1) {
    throw Error(ErrorCode::InvalidArgument, "grid must have at least 1x1 pixels");
  }
  if (!(extent_m > 0.0) || !std::isfinite(extent_m)) {
    throw Error(ErrorCode::InvalidArgument, "grid extent must be positive and finite");
  }
  if (!std::isfinite(origin_lat) || !std::isfinite(origin_lon) ||
      std::abs(origin_lat) >= 90.0) {
    throw Error(ErrorCode::InvalidArgument, "grid origin must be a finite lat/lon");
  }
}

void NormParams::validate() const {
  if (!std::isfinite(min_vpm) || !std::isfinite(max_vpm)) {
    throw Error(ErrorCode::DegenerateRange, "normalization bounds must be finite");
  }
  if (!(max_vpm > min_vpm)) {
    throw Error(ErrorCode::DegenerateRange,
                "normalization requires max > min (got " +
                    std::to_string(min_vpm) + ", " + std::to_string(max_vpm) + ")");
  }
}

double normalize(double vpm, const NormParams& p) {
  return (vpm - p.min_vpm) / (p.max_vpm - p.min_vpm);
}

double denormalize(double normalized, const NormParams& p) {
  return normalized * (p.max_vpm - p.min_vpm) + p.min_vpm;
}

std::size_t ObservationGrid::observed_count() const {
  std::size_t n = 0;
  for (auto m : mask.flat()) n += (m != 0);
  return n;
}

std::vector<PixelIndex> ObservationGrid::observed_pixels() const {
  std::vector<PixelIndex> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(static_cast<PixelIndex>(i));
  }
  return out;
}

std::vector<double> ObservationGrid::observed_values() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(values[i]);
  }
  return out;
}

ExposureMap ExposureMap::from_values(Grid<double> values, Units units) {
  ExposureMap map;
  map.excluded = Grid<std::uint8_t>(values.rows(), values.cols(), 0);
  map.values = std::move(values);
  map.units = units;
  return map;
}

LocalXY project_local(const GridSpec& spec, double lat, double lon) {
  return {(lon - spec.origin_lon) * lon_scale(spec),
          (lat - spec.origin_lat) * kMetersPerDegreeLat};
}

std::optional<Pixel> latlon_to_pixel(const GridSpec& spec, double lat,
                                     double lon) {
  const auto [x, y] = project_local(spec, lat, lon);
  if (!std::isfinite(x) || !std::isfinite(y)) return std::nullopt;
  const double fc = std::floor(x / spec.pixel_width_m() + kEdgeSnap);
  const double fr = std::floor(y / spec.pixel_height_m() + kEdgeSnap);
  if (fc < 0.0 || fr < 0.0 || fc >= static_cast<double>(spec.cols) ||
      fr >= static_cast<double>(spec.rows)) {
    return std::nullopt;
  }
  return Pixel{static_cast<std::size_t>(fr), static_cast<std::size_t>(fc)};
}

LatLon pixel_center_latlon(const GridSpec& spec, Pixel p) {
  const double x = (static_cast<double>(p.col) + 0.5) * spec.pixel_width_m();
  const double y = (static_cast<double>(p.row) + 0.5) * spec.pixel_height_m();
  return {spec.origin_lat + y / kMetersPerDegreeLat,
          spec.origin_lon + x / lon_scale(spec)};
}

RasterizeResult rasterize_readings(std::span<const SensorReading> readings,
                                   const GridSpec& spec,
                                   const NormParams& norm) {
  spec.validate();
  struct Acc {
    double sum = 0.0;
    std::size_t count = 0;
  };
  // Ordered by pixel so the per-pixel mean does not depend on input order
  // beyond floating-point summation within a pixel.
  std::map<PixelIndex, Acc> acc;
  RasterizeResult result;
  for (const auto& r : readings) {
    const auto px = latlon_to_pixel(spec, r.lat, r.lon);
    if (!px) {
      ++result.out_of_bounds_dropped;
      continue;
    }
    auto& a = acc[spec.index(*px)];
    a.sum += normalize(r.e_field, norm);
    ++a.count;
  }
  result.grid.values = Grid<double>(spec.rows, spec.cols, 0.0);
  result.grid.mask = Grid<std::uint8_t>(spec.rows, spec.cols, 0);
  for (const auto& [idx, a] : acc) {
    result.grid.values[idx] =
        a.count == 1 ? a.sum : a.sum / static_cast<double>(a.count);
    result.grid.mask[idx] = 1;
  }
  return result;
}

ExposureMap apply_building_mask(const ExposureMap& map,
                                const BuildingMask& buildings) {
  if (!map.values.same_shape(buildings.blocked)) {
    throw Error(ErrorCode::ShapeMismatch,
                "building mask shape does not match exposure map");
  }
  ExposureMap out = map;
  if (!out.excluded.same_shape(out.values)) {
    out.excluded = Grid<std::uint8_t>(out.rows(), out.cols(), 0);
  }
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (buildings.blocked[i]) {
      out.values[i] = 0.0;
      out.excluded[i] = 1;
    }
  }
  return out;
}

}  // namespace expomap

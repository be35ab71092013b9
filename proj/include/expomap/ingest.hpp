#pragma once

#include <chrono>
#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "expomap/grid.hpp"

namespace expomap {

struct MalformedRow {
  std::size_t row_index = 0;  // 1-based data row (header excluded)
  std::string reason;
};

struct ParseResult {
  std::vector<SensorReading> readings;
  std::vector<MalformedRow> malformed;
};

// Columns: sensor_id,timestamp,lat,lon,e_field_vpm[,humidity]. Columns are
// located by header name. A missing required column throws MissingColumn;
// bad rows are collected in `malformed`.
ParseResult parse_sensor_csv(std::istream& in);

// Accepts YYYY-MM-DDTHH:MM[:SS[.fff]] with optional Z or +HH:MM offset. A
// space may replace the 'T'.
std::optional<Timestamp> parse_iso8601(std::string_view text);
std::string format_iso8601(Timestamp t);

void write_sensor_csv(std::ostream& out, const std::vector<SensorReading>& readings);

struct CleaningOptions {
  double min_vpm = 0.0;
  double max_vpm = 10.0;
  double mad_multiplier = 6.0;
  // When set, readings projecting outside the grid are dropped and counted.
  std::optional<GridSpec> grid;
};

struct CleaningReport {
  std::size_t input = 0;
  std::size_t output = 0;
  std::size_t duplicates_dropped = 0;
  std::size_t nan_dropped = 0;
  std::size_t outliers_dropped = 0;
  std::size_t out_of_bounds_dropped = 0;

  std::size_t dropped() const {
    return duplicates_dropped + nan_dropped + outliers_dropped +
           out_of_bounds_dropped;
  }
};

struct CleanResult {
  std::vector<SensorReading> readings;
  CleaningReport report;
};

// Drops exact duplicates, non-finite fields, readings outside the physical
// bounds, and per-sensor spikes beyond mad_multiplier * MAD from the median.
// The MAD filter is repeated until nothing more is dropped, which makes the
// whole operation idempotent. Survivor order follows input order.
CleanResult clean_readings(const std::vector<SensorReading>& readings,
                           const CleaningOptions& options = {});

// Min-max over all readings. Throws DegenerateRange with fewer than two
// distinct values, EmptyInput when empty.
NormParams fit_norm(const std::vector<SensorReading>& readings);

struct Snapshot {
  Timestamp bin_start{};
  std::vector<SensorReading> readings;  // one per sensor, sorted by sensor_id
};

// Groups readings into consecutive period-aligned bins starting at the
// earliest timestamp. Within a bin only the latest reading of each sensor is
// kept. Empty bins are omitted.
std::vector<Snapshot> bin_snapshots(const std::vector<SensorReading>& readings,
                                    std::chrono::milliseconds period =
                                        std::chrono::hours(2));

struct Ring {
  std::vector<LatLon> vertices;  // closed: first == last
};

struct Polygon {
  std::vector<Ring> rings;  // outer ring followed by holes
};

// Reads GeoJSON Polygon / MultiPolygon geometries from a FeatureCollection,
// Feature, GeometryCollection or bare geometry. Coordinates are [lon, lat].
std::vector<Polygon> parse_building_geojson(std::istream& in);

struct BuildingRasterResult {
  BuildingMask mask;
  std::vector<std::string> warnings;
  std::size_t degenerate_skipped = 0;
};

// A pixel is blocked when its center lies inside any polygon (even-odd rule
// over all of that polygon's rings).
BuildingRasterResult rasterize_buildings(const std::vector<Polygon>& polygons,
                                         const GridSpec& spec);

}  // namespace expomap

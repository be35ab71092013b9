#include "expomap/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

namespace expomap {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' ||
                        s.back() == '\n')) {
    s.remove_suffix(1);
  }
  return s;
}

// Splits one CSV line. Double-quoted fields may contain commas; "" escapes a
// quote inside a quoted field.
std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.emplace_back(trim(cur));
  return fields;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  // from_chars rejects "nan"/"inf" spelled with a sign in some forms; strtod
  // handles both and we check that the whole field was consumed.
  std::string buf(s);
  char* end = nullptr;
  const double v = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size()) return std::nullopt;
  return v;
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + n / 2);
  return 0.5 * (lo + hi);
}

bool point_in_ring(const std::vector<LocalXY>& ring, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const auto& a = ring[i];
    const auto& b = ring[j];
    if ((a.y > y) != (b.y > y)) {
      const double xc = (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x;
      if (x < xc) inside = !inside;
    }
  }
  return inside;
}

Ring ring_from_json(const nlohmann::json& coords) {
  Ring ring;
  for (const auto& pt : coords) {
    if (!pt.is_array() || pt.size() < 2) {
      throw Error(ErrorCode::FormatError, "GeoJSON position must be [lon, lat]");
    }
    ring.vertices.push_back({pt[1].get<double>(), pt[0].get<double>()});
  }
  return ring;
}

Polygon polygon_from_json(const nlohmann::json& coords) {
  Polygon poly;
  for (const auto& r : coords) poly.rings.push_back(ring_from_json(r));
  return poly;
}

void collect_geometry(const nlohmann::json& g, std::vector<Polygon>& out) {
  if (g.is_null()) return;
  const std::string type = g.value("type", "");
  if (type == "FeatureCollection") {
    for (const auto& f : g.at("features")) collect_geometry(f, out);
  } else if (type == "Feature") {
    collect_geometry(g.at("geometry"), out);
  } else if (type == "GeometryCollection") {
    for (const auto& sub : g.at("geometries")) collect_geometry(sub, out);
  } else if (type == "Polygon") {
    out.push_back(polygon_from_json(g.at("coordinates")));
  } else if (type == "MultiPolygon") {
    for (const auto& p : g.at("coordinates")) out.push_back(polygon_from_json(p));
  }
  // Other geometry types (roads as LineString, points) carry no footprint.
}

}  // namespace

std::optional<Timestamp> parse_iso8601(std::string_view text) {
  using namespace std::chrono;
  text = trim(text);
  // YYYY-MM-DD
  if (text.size() < 16 || text[4] != '-' || text[7] != '-' ||
      (text[10] != 'T' && text[10] != ' ' && text[10] != 't')) {
    return std::nullopt;
  }
  int y = 0;
  unsigned mo = 0, d = 0, hh = 0, mm = 0, ss = 0;
  if (!parse_int(text.substr(0, 4), y) || !parse_int(text.substr(5, 2), mo) ||
      !parse_int(text.substr(8, 2), d) || !parse_int(text.substr(11, 2), hh) ||
      text[13] != ':' || !parse_int(text.substr(14, 2), mm)) {
    return std::nullopt;
  }
  std::size_t pos = 16;
  long long millis = 0;
  if (pos < text.size() && text[pos] == ':') {
    if (pos + 3 > text.size() || !parse_int(text.substr(pos + 1, 2), ss)) {
      return std::nullopt;
    }
    pos += 3;
    if (pos < text.size() && (text[pos] == '.' || text[pos] == ',')) {
      ++pos;
      std::size_t digits = 0;
      long long frac = 0;
      while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
        if (digits < 3) {
          frac = frac * 10 + (text[pos] - '0');
        }
        ++digits;
        ++pos;
      }
      if (digits == 0) return std::nullopt;
      for (std::size_t k = digits; k < 3; ++k) frac *= 10;
      millis = frac;
    }
  }
  long long offset_min = 0;
  if (pos < text.size()) {
    const char c = text[pos];
    if (c == 'Z' || c == 'z') {
      ++pos;
    } else if (c == '+' || c == '-') {
      unsigned oh = 0, om = 0;
      auto rest = text.substr(pos + 1);
      if (rest.size() == 5 && rest[2] == ':') {
        if (!parse_int(rest.substr(0, 2), oh) || !parse_int(rest.substr(3, 2), om)) {
          return std::nullopt;
        }
      } else if (rest.size() == 4) {
        if (!parse_int(rest.substr(0, 2), oh) || !parse_int(rest.substr(2, 2), om)) {
          return std::nullopt;
        }
      } else if (rest.size() == 2) {
        if (!parse_int(rest, oh)) return std::nullopt;
      } else {
        return std::nullopt;
      }
      offset_min = (c == '+' ? 1 : -1) * static_cast<long long>(oh * 60 + om);
      pos = text.size();
    }
  }
  if (pos != text.size()) return std::nullopt;
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60) return std::nullopt;
  const auto t = sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss} +
                 milliseconds{millis} - minutes{offset_min};
  return time_point_cast<milliseconds>(t);
}

std::string format_iso8601(Timestamp t) {
  using namespace std::chrono;
  const auto day_point = floor<days>(t);
  const year_month_day ymd{day_point};
  const auto in_day = t - day_point;
  const auto h = duration_cast<hours>(in_day);
  const auto m = duration_cast<minutes>(in_day - h);
  const auto s = duration_cast<seconds>(in_day - h - m);
  const auto ms = duration_cast<milliseconds>(in_day - h - m - s);
  char buf[40];
  if (ms.count() == 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ",
                  static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()), static_cast<int>(h.count()),
                  static_cast<int>(m.count()), static_cast<int>(s.count()));
  } else {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ",
                  static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()), static_cast<int>(h.count()),
                  static_cast<int>(m.count()), static_cast<int>(s.count()),
                  static_cast<int>(ms.count()));
  }
  return buf;
}

ParseResult parse_sensor_csv(std::istream& in) {
  ParseResult result;
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::MissingColumn, "sensor CSV has no header row");
  }
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv(line);
  auto find = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };
  const char* required[] = {"sensor_id", "timestamp", "lat", "lon", "e_field_vpm"};
  std::size_t col[5];
  for (int k = 0; k < 5; ++k) {
    const auto c = find(required[k]);
    if (!c) {
      throw Error(ErrorCode::MissingColumn,
                  std::string("sensor CSV is missing column '") + required[k] + "'");
    }
    col[k] = *c;
  }
  const auto humidity_col = find("humidity");

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto f = split_csv(line);
    auto bad = [&](std::string reason) {
      result.malformed.push_back({row, std::move(reason)});
    };
    if (f.size() < header.size() && f.size() <= *std::max_element(col, col + 5)) {
      bad("expected " + std::to_string(header.size()) + " fields, got " +
          std::to_string(f.size()));
      continue;
    }
    SensorReading r;
    r.sensor_id = f[col[0]];
    if (r.sensor_id.empty()) {
      bad("empty sensor_id");
      continue;
    }
    const auto ts = parse_iso8601(f[col[1]]);
    if (!ts) {
      bad("timestamp is not ISO-8601: '" + f[col[1]] + "'");
      continue;
    }
    r.timestamp = *ts;
    const auto lat = parse_double(f[col[2]]);
    const auto lon = parse_double(f[col[3]]);
    const auto e = parse_double(f[col[4]]);
    if (!lat || !lon) {
      bad("non-numeric coordinate");
      continue;
    }
    if (!e) {
      bad("non-numeric e_field_vpm: '" + f[col[4]] + "'");
      continue;
    }
    r.lat = *lat;
    r.lon = *lon;
    r.e_field = *e;
    if (humidity_col && *humidity_col < f.size() && !f[*humidity_col].empty()) {
      r.humidity = parse_double(f[*humidity_col]);
    }
    result.readings.push_back(std::move(r));
  }
  return result;
}

void write_sensor_csv(std::ostream& out, const std::vector<SensorReading>& readings) {
  out << "sensor_id,timestamp,lat,lon,e_field_vpm,humidity\n";
  char buf[128];
  for (const auto& r : readings) {
    out << r.sensor_id << ',' << format_iso8601(r.timestamp) << ',';
    std::snprintf(buf, sizeof buf, "%.10f,%.10f,%.17g", r.lat, r.lon, r.e_field);
    out << buf << ',';
    if (r.humidity) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.humidity);
      out << buf;
    }
    out << '\n';
  }
}

CleanResult clean_readings(const std::vector<SensorReading>& readings,
                           const CleaningOptions& options) {
  CleanResult result;
  auto& report = result.report;
  report.input = readings.size();

  std::vector<SensorReading> kept;
  kept.reserve(readings.size());
  using Key = std::tuple<std::string, Timestamp::rep, double, double, double, bool, double>;
  std::set<Key> seen;
  for (const auto& r : readings) {
    if (!std::isfinite(r.e_field) || !std::isfinite(r.lat) || !std::isfinite(r.lon)) {
      ++report.nan_dropped;
      continue;
    }
    // Humidity is a passthrough; a NaN there is normalized for the key only.
    const bool has_h = r.humidity.has_value() && !std::isnan(*r.humidity);
    Key key{r.sensor_id, r.timestamp.time_since_epoch().count(), r.lat, r.lon,
            r.e_field, r.humidity.has_value(), has_h ? *r.humidity : 0.0};
    if (!seen.insert(std::move(key)).second) {
      ++report.duplicates_dropped;
      continue;
    }
    if (options.grid && !latlon_to_pixel(*options.grid, r.lat, r.lon)) {
      ++report.out_of_bounds_dropped;
      continue;
    }
    if (r.e_field < options.min_vpm || r.e_field > options.max_vpm) {
      ++report.outliers_dropped;
      continue;
    }
    kept.push_back(r);
  }

  std::map<std::string, std::vector<std::size_t>> by_sensor;
  for (std::size_t i = 0; i < kept.size(); ++i) by_sensor[kept[i].sensor_id].push_back(i);
  std::vector<std::uint8_t> drop(kept.size(), 0);
  for (auto& [id, idx] : by_sensor) {
    bool changed = true;
    while (changed && idx.size() >= 2) {
      changed = false;
      std::vector<double> v;
      v.reserve(idx.size());
      for (auto i : idx) v.push_back(kept[i].e_field);
      const double med = median_of(v);
      for (auto& x : v) x = std::abs(x - med);
      const double mad = median_of(v);
      if (!(mad > 0.0)) break;
      const double bound = options.mad_multiplier * mad;
      std::vector<std::size_t> survivors;
      for (auto i : idx) {
        if (std::abs(kept[i].e_field - med) > bound) {
          drop[i] = 1;
          ++report.outliers_dropped;
          changed = true;
        } else {
          survivors.push_back(i);
        }
      }
      idx = std::move(survivors);
    }
  }
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (!drop[i]) result.readings.push_back(std::move(kept[i]));
  }
  report.output = result.readings.size();
  return result;
}

NormParams fit_norm(const std::vector<SensorReading>& readings) {
  if (readings.empty()) {
    throw Error(ErrorCode::EmptyInput, "cannot fit normalization on zero readings");
  }
  NormParams p{readings.front().e_field, readings.front().e_field};
  for (const auto& r : readings) {
    p.min_vpm = std::min(p.min_vpm, r.e_field);
    p.max_vpm = std::max(p.max_vpm, r.e_field);
  }
  p.validate();
  return p;
}

std::vector<Snapshot> bin_snapshots(const std::vector<SensorReading>& readings,
                                    std::chrono::milliseconds period) {
  if (period.count() <= 0) {
    throw Error(ErrorCode::InvalidArgument, "snapshot period must be positive");
  }
  std::vector<Snapshot> out;
  if (readings.empty()) return out;
  Timestamp t0 = readings.front().timestamp;
  for (const auto& r : readings) t0 = std::min(t0, r.timestamp);

  // bin -> sensor -> index of latest reading (ties: later input row wins)
  std::map<long long, std::map<std::string, std::size_t>> bins;
  for (std::size_t i = 0; i < readings.size(); ++i) {
    const auto& r = readings[i];
    const long long b = (r.timestamp - t0) / period;
    auto [it, inserted] = bins[b].try_emplace(r.sensor_id, i);
    if (!inserted && readings[it->second].timestamp <= r.timestamp) it->second = i;
  }
  for (const auto& [b, sensors] : bins) {
    Snapshot s;
    s.bin_start = t0 + b * period;
    for (const auto& [id, i] : sensors) s.readings.push_back(readings[i]);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Polygon> parse_building_geojson(std::istream& in) {
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("buildings JSON: ") + e.what());
  }
  std::vector<Polygon> out;
  try {
    if (doc.is_array()) {
      // Bare list of polygons, each a list of rings.
      for (const auto& p : doc) out.push_back(polygon_from_json(p));
    } else {
      collect_geometry(doc, out);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("buildings JSON: ") + e.what());
  }
  return out;
}

BuildingRasterResult rasterize_buildings(const std::vector<Polygon>& polygons,
                                         const GridSpec& spec) {
  spec.validate();
  BuildingRasterResult result;
  result.mask.blocked = Grid<std::uint8_t>(spec.rows, spec.cols, 0);
  const double pw = spec.pixel_width_m();
  const double ph = spec.pixel_height_m();

  for (std::size_t pi = 0; pi < polygons.size(); ++pi) {
    std::vector<std::vector<LocalXY>> rings;
    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    bool degenerate = polygons[pi].rings.empty();
    for (std::size_t ri = 0; ri < polygons[pi].rings.size() && !degenerate; ++ri) {
      const auto& ring = polygons[pi].rings[ri];
      std::vector<LocalXY> pts;
      for (const auto& v : ring.vertices) pts.push_back(project_local(spec, v.lat, v.lon));
      if (pts.size() >= 2 && pts.front().x == pts.back().x && pts.front().y == pts.back().y) {
        pts.pop_back();
      }
      std::set<std::pair<double, double>> distinct;
      for (const auto& p : pts) distinct.emplace(p.x, p.y);
      if (distinct.size() < 3) {
        if (ri == 0) {
          degenerate = true;
        } else {
          result.warnings.push_back("polygon " + std::to_string(pi) + " ring " +
                                    std::to_string(ri) + ": degenerate hole ignored");
        }
        continue;
      }
      for (const auto& p : pts) {
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
      }
      rings.push_back(std::move(pts));
    }
    if (degenerate) {
      ++result.degenerate_skipped;
      result.warnings.push_back("polygon " + std::to_string(pi) +
                                ": fewer than 3 distinct vertices, skipped");
      continue;
    }
    // Candidate pixel range from the bounding box of the outer ring.
    const auto clamp_idx = [](double v, std::size_t n) -> std::ptrdiff_t {
      return static_cast<std::ptrdiff_t>(
          std::clamp(v, 0.0, static_cast<double>(n)));
    };
    const auto c0 = clamp_idx(std::floor(xmin / pw - 0.5), spec.cols);
    const auto c1 = clamp_idx(std::ceil(xmax / pw - 0.5) + 1, spec.cols);
    const auto r0 = clamp_idx(std::floor(ymin / ph - 0.5), spec.rows);
    const auto r1 = clamp_idx(std::ceil(ymax / ph - 0.5) + 1, spec.rows);
    for (auto r = r0; r < r1; ++r) {
      const double y = (static_cast<double>(r) + 0.5) * ph;
      for (auto c = c0; c < c1; ++c) {
        const double x = (static_cast<double>(c) + 0.5) * pw;
        bool inside = false;
        for (const auto& ring : rings) inside ^= point_in_ring(ring, x, y);
        if (inside) result.mask.blocked(r, c) = 1;
      }
    }
  }
  return result;
}

}  // namespace expomap

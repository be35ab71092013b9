#include "expomap/config.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace expomap {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

class Reader {
 public:
  explicit Reader(const KeyValues& kv) : kv_(kv) {}

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  bool has_prefix(const std::string& prefix) const {
    for (const auto& [k, v] : kv_) {
      if (k.rfind(prefix, 0) == 0) return true;
    }
    return false;
  }

  std::optional<std::string> str(const std::string& key) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    return it->second;
  }

  void number(const std::string& key, double& out) {
    if (auto s = str(key)) {
      char* end = nullptr;
      const double v = std::strtod(s->c_str(), &end);
      if (s->empty() || end != s->c_str() + s->size()) bad(key, *s, "a number");
      out = v;
    }
  }

  template <typename Int>
  void integer(const std::string& key, Int& out) {
    if (auto s = str(key)) {
      try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(*s, &pos);
        if (pos != s->size() || s->front() == '-') bad(key, *s, "a non-negative integer");
        out = static_cast<Int>(v);
      } catch (const std::exception&) {
        bad(key, *s, "a non-negative integer");
      }
    }
  }

  void ensure_all_used() const {
    for (const auto& [k, v] : kv_) {
      if (!used_.count(k)) throw Error(ErrorCode::ConfigError, "unknown config key '" + k + "'");
    }
  }

  [[noreturn]] static void bad(const std::string& key, const std::string& value,
                               const std::string& expected) {
    throw Error(ErrorCode::ConfigError,
                "config key '" + key + "' = '" + value + "' is not " + expected);
  }

 private:
  const KeyValues& kv_;
  std::set<std::string> used_;
};

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ConfigError,
                  "config line " + std::to_string(lineno) + " has no '=': " + line);
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw Error(ErrorCode::ConfigError, "config line " + std::to_string(lineno) + " has no key");
    }
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::ConfigError, "cannot open config file " + path);
  return parse_key_values(f);
}

RunConfig RunConfig::from_key_values(const KeyValues& kv) {
  Reader r(kv);
  RunConfig c;
  r.number("grid.origin_lat", c.grid.origin_lat);
  r.number("grid.origin_lon", c.grid.origin_lon);
  r.number("grid.extent_m", c.grid.extent_m);
  r.integer("grid.rows", c.grid.rows);
  r.integer("grid.cols", c.grid.cols);

  c.sensors_csv = r.str("data.sensors_csv");
  c.buildings_json = r.str("data.buildings_json");
  r.number("data.bin_hours", c.bin_hours);
  r.integer("data.snapshot", c.snapshot);

  if (r.has_prefix("synth.")) {
    SynthSpec s;
    r.integer("synth.sources", s.sources);
    r.integer("synth.sensors", s.sensors);
    r.number("synth.noise_std", s.noise_std);
    r.number("synth.shadowing_db", s.shadowing_db);
    r.number("synth.amplitude_min", s.amplitude_min);
    r.number("synth.amplitude_max", s.amplitude_max);
    r.integer("synth.snapshots", s.snapshots);
    s.start = *parse_iso8601("2023-11-23T00:00:00Z");
    if (auto t = r.str("synth.start")) {
      const auto ts = parse_iso8601(*t);
      if (!ts) Reader::bad("synth.start", *t, "an ISO-8601 timestamp");
      s.start = *ts;
    }
    c.synth = s;
  }

  r.number("clean.min_vpm", c.cleaning.min_vpm);
  r.number("clean.max_vpm", c.cleaning.max_vpm);
  r.number("clean.mad_multiplier", c.cleaning.mad_multiplier);

  if (auto s = r.str("prior.kind")) c.prior = eval::parse_prior(*s);
  r.integer("prior.k", c.method_cfg.lip_k);
  r.number("prior.power", c.method_cfg.lip_power);
  if (auto s = r.str("method")) c.method = eval::parse_method(*s);

  auto& cntk = c.method_cfg.cntk;
  r.integer("cntk.layers", cntk.layers);
  r.integer("cntk.filter", cntk.filter);
  r.number("cntk.leaky_slope", cntk.leaky_slope);
  if (auto s = r.str("cntk.precision")) {
    if (*s == "f32") {
      cntk.precision = Precision::F32;
    } else if (*s == "f64") {
      cntk.precision = Precision::F64;
    } else {
      Reader::bad("cntk.precision", *s, "f32 or f64");
    }
  }
  r.integer("cntk.tile_rows", cntk.tile_rows);
  r.integer("cntk.max_block_bytes", cntk.max_block_bytes);

  if (auto s = r.str("solver.jitter"); s && *s != "auto") {
    double j = 0.0;
    r.number("solver.jitter", j);
    c.method_cfg.exact.jitter = j;
  }
  r.integer("solver.eigen_count", c.method_cfg.eigen_count);
  r.number("solver.safety", c.method_cfg.safety);
  r.integer("solver.epochs", c.method_cfg.eigenpro.epochs);

  if (auto s = r.str("glip.widths")) {
    c.method_cfg.glip_widths.clear();
    for (const auto& w : split_list(*s)) {
      try {
        c.method_cfg.glip_widths.push_back(std::stoul(w));
      } catch (const std::exception&) {
        Reader::bad("glip.widths", *s, "a comma-separated list of channel counts");
      }
    }
  }
  r.number("glip.lr", c.method_cfg.glip_train.lr);
  r.integer("glip.epochs", c.method_cfg.glip_train.epochs);

  if (auto s = r.str("eval.holdout")) {
    c.holdout = split_list(*s);
  } else if (c.synth && c.synth->sensors > 1) {
    // Synthetic runs hold out the last few simulated sensors by default.
    const std::size_t n = c.synth->sensors;
    const std::size_t held = std::min<std::size_t>(4, n - 1);
    for (std::size_t i = n - held + 1; i <= n; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "S%03zu", i);
      c.holdout.push_back(id);
    }
  }
  r.integer("eval.first_snapshot", c.eval_first);
  if (auto s = r.str("eval.snapshot_count"); s && *s != "all") {
    std::size_t n = 0;
    r.integer("eval.snapshot_count", n);
    c.eval_count = n;
  }

  r.integer("seed", c.seed);
  c.method_cfg.seed = c.seed;
  if (auto s = r.str("output.dir")) c.output_dir = *s;

  r.ensure_all_used();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  try {
    grid.validate();
    method_cfg.cntk.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  if (sensors_csv.has_value() == synth.has_value()) {
    throw Error(ErrorCode::ConfigError,
                "exactly one of data.sensors_csv or a synth.* section must be given");
  }
  if (sensors_csv && !std::filesystem::exists(*sensors_csv)) {
    throw Error(ErrorCode::ConfigError, "sensor CSV not found: " + *sensors_csv);
  }
  if (buildings_json && !std::filesystem::exists(*buildings_json)) {
    throw Error(ErrorCode::ConfigError, "buildings JSON not found: " + *buildings_json);
  }
  if (!(bin_hours > 0.0)) throw Error(ErrorCode::ConfigError, "data.bin_hours must be > 0");
  if (synth) {
    if (synth->sources == 0) throw Error(ErrorCode::ConfigError, "synth.sources must be >= 1");
    if (synth->sensors == 0) throw Error(ErrorCode::ConfigError, "synth.sensors must be >= 1");
    if (synth->snapshots == 0) throw Error(ErrorCode::ConfigError, "synth.snapshots must be >= 1");
    if (!(synth->amplitude_min > 0.0) || synth->amplitude_max < synth->amplitude_min) {
      throw Error(ErrorCode::ConfigError, "synth amplitudes must satisfy 0 < min <= max");
    }
  }
  if (!(cleaning.max_vpm > cleaning.min_vpm)) {
    throw Error(ErrorCode::ConfigError, "clean.max_vpm must exceed clean.min_vpm");
  }
  if (method_cfg.lip_k == 0) throw Error(ErrorCode::ConfigError, "prior.k must be >= 1");
  if (!(method_cfg.safety > 0.0)) throw Error(ErrorCode::ConfigError, "solver.safety must be > 0");
  const auto& w = method_cfg.glip_widths;
  if (w.size() < 2 || w.front() != 1 || w.back() != 1) {
    throw Error(ErrorCode::ConfigError, "glip.widths must start and end with 1");
  }
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  kv["grid.origin_lat"] = fmt_double(grid.origin_lat);
  kv["grid.origin_lon"] = fmt_double(grid.origin_lon);
  kv["grid.extent_m"] = fmt_double(grid.extent_m);
  kv["grid.rows"] = std::to_string(grid.rows);
  kv["grid.cols"] = std::to_string(grid.cols);
  if (sensors_csv) kv["data.sensors_csv"] = *sensors_csv;
  if (buildings_json) kv["data.buildings_json"] = *buildings_json;
  kv["data.bin_hours"] = fmt_double(bin_hours);
  kv["data.snapshot"] = std::to_string(snapshot);
  if (synth) {
    kv["synth.sources"] = std::to_string(synth->sources);
    kv["synth.sensors"] = std::to_string(synth->sensors);
    kv["synth.noise_std"] = fmt_double(synth->noise_std);
    kv["synth.shadowing_db"] = fmt_double(synth->shadowing_db);
    kv["synth.amplitude_min"] = fmt_double(synth->amplitude_min);
    kv["synth.amplitude_max"] = fmt_double(synth->amplitude_max);
    kv["synth.snapshots"] = std::to_string(synth->snapshots);
    kv["synth.start"] = format_iso8601(synth->start);
  }
  kv["clean.min_vpm"] = fmt_double(cleaning.min_vpm);
  kv["clean.max_vpm"] = fmt_double(cleaning.max_vpm);
  kv["clean.mad_multiplier"] = fmt_double(cleaning.mad_multiplier);
  kv["prior.kind"] = std::string(eval::to_string(prior));
  kv["prior.k"] = std::to_string(method_cfg.lip_k);
  kv["prior.power"] = fmt_double(method_cfg.lip_power);
  kv["method"] = std::string(eval::to_string(method));
  const auto& cntk = method_cfg.cntk;
  kv["cntk.layers"] = std::to_string(cntk.layers);
  kv["cntk.filter"] = std::to_string(cntk.filter);
  kv["cntk.leaky_slope"] = fmt_double(cntk.leaky_slope);
  kv["cntk.precision"] = cntk.precision == Precision::F32 ? "f32" : "f64";
  kv["cntk.tile_rows"] = std::to_string(cntk.tile_rows);
  kv["cntk.max_block_bytes"] = std::to_string(cntk.max_block_bytes);
  kv["solver.jitter"] = method_cfg.exact.jitter ? fmt_double(*method_cfg.exact.jitter) : "auto";
  kv["solver.eigen_count"] = std::to_string(method_cfg.eigen_count);
  kv["solver.safety"] = fmt_double(method_cfg.safety);
  kv["solver.epochs"] = std::to_string(method_cfg.eigenpro.epochs);
  std::vector<std::string> widths;
  for (auto w : method_cfg.glip_widths) widths.push_back(std::to_string(w));
  kv["glip.widths"] = join(widths);
  kv["glip.lr"] = fmt_double(method_cfg.glip_train.lr);
  kv["glip.epochs"] = std::to_string(method_cfg.glip_train.epochs);
  kv["eval.holdout"] = join(holdout);
  kv["eval.first_snapshot"] = std::to_string(eval_first);
  kv["eval.snapshot_count"] = eval_count ? std::to_string(*eval_count) : "all";
  kv["seed"] = std::to_string(seed);
  kv["output.dir"] = output_dir;
  return kv;
}

std::string RunConfig::resolved_text() const {
  std::string out = "# fully resolved configuration\n";
  for (const auto& [k, v] : to_key_values()) out += k + " = " + v + "\n";
  return out;
}

RunConfig load_run_config(const std::string& path) {
  return RunConfig::from_key_values(read_key_values_file(path));
}

}  // namespace expomap

#include "expomap/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "expomap/binary_io.hpp"
#include "expomap/render.hpp"
#include "expomap/synth.hpp"

namespace expomap {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::chrono::milliseconds bin_period(const RunConfig& cfg) {
  return std::chrono::milliseconds(static_cast<long long>(std::llround(cfg.bin_hours * 3.6e6)));
}

std::filesystem::path prepare_output(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create output directory " + cfg.output_dir);
  return dir;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path.string(), text);
}

void write_json(const std::filesystem::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

json config_json(const RunConfig& cfg) {
  json j = json::object();
  for (const auto& [k, v] : cfg.to_key_values()) j[k] = v;
  return j;
}

json cleaning_json(const LoadedData& data) {
  json j = eval::to_json(data.cleaning);
  json rows = json::array();
  for (const auto& m : data.malformed) {
    rows.push_back({{"row", m.row_index}, {"reason", m.reason}});
  }
  j["malformed_rows"] = rows;
  if (data.buildings) {
    j["building_warnings"] = data.buildings->warnings;
    j["degenerate_polygons_skipped"] = data.buildings->degenerate_skipped;
  }
  return j;
}

const Snapshot& pick_snapshot(const LoadedData& data, std::size_t index) {
  if (data.snapshots.empty()) {
    throw Error(ErrorCode::EmptyInput, "no snapshots survive cleaning");
  }
  if (index >= data.snapshots.size()) {
    throw Error(ErrorCode::ConfigError, "data.snapshot = " + std::to_string(index) +
                                            " but only " + std::to_string(data.snapshots.size()) +
                                            " snapshots exist");
  }
  return data.snapshots[index];
}

std::string map_csv_text(const Grid<double>& values) {
  std::ostringstream os;
  write_map_csv(os, values);
  return os.str();
}

std::string map_pgm_text(const ExposureMap& map) {
  std::ostringstream os;
  write_map_pgm(os, map);
  return os.str();
}

}  // namespace

SynthSeries generate_synth_series(const RunConfig& cfg, const BuildingMask* buildings) {
  if (!cfg.synth) throw Error(ErrorCode::ConfigError, "no synth section in config");
  const SynthSpec& s = *cfg.synth;
  const auto sources = synth::random_sources(cfg.grid, s.sources, cfg.seed, s.amplitude_min,
                                             s.amplitude_max, s.shadowing_db);
  const auto period = bin_period(cfg);

  SynthSeries series;
  for (std::size_t k = 0; k < s.snapshots; ++k) {
    // Sources keep their sites; only their strength drifts between bins.
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + k + 1);
    std::uniform_real_distribution<double> drift(0.8, 1.2);
    auto scaled = sources;
    for (auto& src : scaled) src.amplitude *= drift(rng);

    ExposureMap field = synth::generate_field(cfg.grid, scaled, cfg.seed);
    if (buildings) {
      field = apply_building_mask(field, *buildings);
      field.units = Units::VoltsPerMeter;
    }

    synth::SensorSampling sampling;
    sampling.count = s.sensors;
    sampling.seed = cfg.seed + 1;
    sampling.noise_std = s.noise_std;
    sampling.noise_seed = cfg.seed + 1000 + k;
    sampling.timestamp = s.start + period * static_cast<long long>(k);
    auto readings = synth::sample_sensors(field, cfg.grid, sampling);
    series.readings.insert(series.readings.end(), readings.begin(), readings.end());
    series.truth.push_back(std::move(field));
  }
  return series;
}

LoadedData load_input(const RunConfig& cfg) {
  cfg.validate();
  LoadedData data;
  if (cfg.buildings_json) {
    std::ifstream f(*cfg.buildings_json);
    if (!f) throw Error(ErrorCode::IoError, "cannot open " + *cfg.buildings_json);
    data.buildings = rasterize_buildings(parse_building_geojson(f), cfg.grid);
  }
  const BuildingMask* mask = data.buildings ? &data.buildings->mask : nullptr;

  std::vector<SensorReading> raw;
  std::vector<ExposureMap> truth;
  if (cfg.synth) {
    auto series = generate_synth_series(cfg, mask);
    raw = std::move(series.readings);
    truth = std::move(series.truth);
  } else {
    std::ifstream f(*cfg.sensors_csv);
    if (!f) throw Error(ErrorCode::IoError, "cannot open " + *cfg.sensors_csv);
    auto parsed = parse_sensor_csv(f);
    raw = std::move(parsed.readings);
    data.malformed = std::move(parsed.malformed);
  }

  CleaningOptions opts = cfg.cleaning;
  opts.grid = cfg.grid;
  auto cleaned = clean_readings(raw, opts);
  data.readings = std::move(cleaned.readings);
  data.cleaning = cleaned.report;
  if (data.readings.empty()) throw Error(ErrorCode::EmptyInput, "no readings survive cleaning");

  const auto period = bin_period(cfg);
  data.snapshots = bin_snapshots(data.readings, period);
  if (cfg.synth) {
    // Bins start at the first synthetic timestamp, so bin offsets index truth.
    for (const auto& snap : data.snapshots) {
      const auto k = static_cast<std::size_t>((snap.bin_start - cfg.synth->start) / period);
      data.truth.push_back(truth.at(k));
    }
  }

  const std::set<std::string> holdout(cfg.holdout.begin(), cfg.holdout.end());
  std::vector<SensorReading> training;
  for (const auto& r : data.readings) {
    if (!holdout.count(r.sensor_id)) training.push_back(r);
  }
  data.norm = fit_norm(training.empty() ? data.readings : training);
  return data;
}

ObservationGrid training_grid(const Snapshot& snap, const RunConfig& cfg, const NormParams& norm) {
  const std::set<std::string> holdout(cfg.holdout.begin(), cfg.holdout.end());
  std::set<PixelIndex> held_pixels;
  for (const auto& r : snap.readings) {
    if (!holdout.count(r.sensor_id)) continue;
    if (auto px = latlon_to_pixel(cfg.grid, r.lat, r.lon)) held_pixels.insert(cfg.grid.index(*px));
  }
  std::vector<SensorReading> inputs;
  for (const auto& r : snap.readings) {
    if (holdout.count(r.sensor_id)) continue;
    const auto px = latlon_to_pixel(cfg.grid, r.lat, r.lon);
    if (px && held_pixels.count(cfg.grid.index(*px))) continue;
    inputs.push_back(r);
  }
  return rasterize_readings(inputs, cfg.grid, norm).grid;
}

json run_ingest(const RunConfig& cfg) {
  const auto dir = prepare_output(cfg);
  const LoadedData data = load_input(cfg);
  std::ostringstream csv;
  write_sensor_csv(csv, data.readings);
  write_text(dir / "cleaned.csv", csv.str());
  write_json(dir / "cleaning_report.json", cleaning_json(data));
  write_text(dir / "config.resolved", cfg.resolved_text());

  json snaps = json::array();
  for (const auto& s : data.snapshots) {
    snaps.push_back({{"bin_start", format_iso8601(s.bin_start)}, {"sensors", s.readings.size()}});
  }
  json report{{"readings", data.readings.size()},
              {"snapshots", snaps},
              {"norm", {{"min_vpm", data.norm.min_vpm}, {"max_vpm", data.norm.max_vpm}}}};
  if (data.buildings) {
    std::size_t blocked = 0;
    for (auto b : data.buildings->mask.blocked.flat()) blocked += b;
    report["blocked_pixels"] = blocked;
    ExposureMap m = ExposureMap::from_values(Grid<double>(cfg.grid.rows, cfg.grid.cols, 1.0),
                                             Units::Normalized);
    write_text(dir / "buildings.pgm", map_pgm_text(apply_building_mask(m, data.buildings->mask)));
  }
  write_json(dir / "report.json", report);
  return report;
}

json run_synth(const RunConfig& cfg) {
  if (!cfg.synth) throw Error(ErrorCode::ConfigError, "synth requires a synth.* section");
  cfg.validate();
  const auto dir = prepare_output(cfg);
  std::optional<BuildingRasterResult> buildings;
  if (cfg.buildings_json) {
    std::ifstream f(*cfg.buildings_json);
    if (!f) throw Error(ErrorCode::IoError, "cannot open " + *cfg.buildings_json);
    buildings = rasterize_buildings(parse_building_geojson(f), cfg.grid);
  }
  const auto series = generate_synth_series(cfg, buildings ? &buildings->mask : nullptr);
  std::ostringstream csv;
  write_sensor_csv(csv, series.readings);
  write_text(dir / "sensors.csv", csv.str());
  for (std::size_t k = 0; k < series.truth.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "truth_%03zu.csv", k);
    write_text(dir / name, map_csv_text(series.truth[k].values));
  }
  write_text(dir / "config.resolved", cfg.resolved_text());
  json report{{"readings", series.readings.size()}, {"snapshots", series.truth.size()}};
  write_json(dir / "report.json", report);
  return report;
}

json run_reconstruct(const RunConfig& cfg) {
  const auto dir = prepare_output(cfg);
  const LoadedData data = load_input(cfg);
  const Snapshot& snap = pick_snapshot(data, cfg.snapshot);
  const ObservationGrid obs = training_grid(snap, cfg, data.norm);
  if (obs.observed_count() == 0) {
    throw Error(ErrorCode::EmptyObservation, "snapshot has no training readings");
  }

  const auto t_prior = Clock::now();
  const PriorImage prior = eval::build_prior(cfg.prior, obs, cfg.grid, cfg.method_cfg);
  const double prior_seconds = seconds_since(t_prior);
  const auto targets = all_pixels(cfg.grid.rows, cfg.grid.cols);
  const auto rec = eval::reconstruct(cfg.method, obs, prior, targets, cfg.method_cfg);

  Grid<double> vpm(cfg.grid.rows, cfg.grid.cols, 0.0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    vpm[targets[i]] = denormalize(rec.predictions[i], data.norm);
  }
  ExposureMap map = ExposureMap::from_values(std::move(vpm), Units::VoltsPerMeter);
  if (data.buildings) {
    map = apply_building_mask(map, data.buildings->mask);
    map.units = Units::VoltsPerMeter;
  }

  const std::size_t observed = obs.observed_count();
  const double fraction = static_cast<double>(observed) / static_cast<double>(cfg.grid.pixel_count());
  json report{{"method", eval::to_string(cfg.method)},
              {"prior", eval::to_string(cfg.prior)},
              {"snapshot", cfg.snapshot},
              {"bin_start", format_iso8601(snap.bin_start)},
              {"observed_pixels", observed},
              {"observed_fraction", fraction},
              {"sparse_input", fraction < 0.01},
              {"norm", {{"min_vpm", data.norm.min_vpm}, {"max_vpm", data.norm.max_vpm}}},
              {"config", config_json(cfg)},
              {"reference_targets", eval::reference_targets()}};

  // Holdout sensors present in this snapshot are scored against the map.
  const std::set<std::string> holdout(cfg.holdout.begin(), cfg.holdout.end());
  std::vector<double> ref, est;
  json points = json::array();
  for (const auto& r : snap.readings) {
    if (!holdout.count(r.sensor_id)) continue;
    const auto px = latlon_to_pixel(cfg.grid, r.lat, r.lon);
    if (!px) continue;
    const auto p = cfg.grid.index(*px);
    if (map.excluded.same_shape(map.values) && map.excluded[p]) continue;
    ref.push_back(r.e_field);
    est.push_back(map.values[p]);
    points.push_back({{"sensor_id", r.sensor_id},
                      {"reference_vpm", r.e_field},
                      {"predicted_vpm", map.values[p]}});
  }
  if (!ref.empty()) {
    report["holdout_rmse_vpm"] = eval::rmse(ref, est);
    report["holdout_points"] = points;
  }
  if (!data.truth.empty()) {
    const ExposureMap& truth = data.truth.at(cfg.snapshot);
    std::vector<double> t, e;
    for (std::size_t i = 0; i < map.values.size(); ++i) {
      if (map.excluded.same_shape(map.values) && map.excluded[i]) continue;
      t.push_back(truth.values[i]);
      e.push_back(map.values[i]);
    }
    report["truth_rmse_vpm"] = eval::rmse(t, e);
  }

  if (rec.solve) {
    report["solve"] = {{"iterations", rec.solve->iterations},
                       {"final_residual", rec.solve->final_residual},
                       {"jitter_used", rec.solve->jitter_used}};
    json state = eval::to_json(*rec.solve);
    state["config"] = config_json(cfg);
    write_json(dir / "solve_state.json", state);
  }
  if (rec.kernel_targets) {
    KernelCacheHeader h;
    h.grid_rows = static_cast<std::uint32_t>(cfg.grid.rows);
    h.grid_cols = static_cast<std::uint32_t>(cfg.grid.cols);
    h.layers = static_cast<std::uint32_t>(cfg.method_cfg.cntk.layers);
    h.filter = static_cast<std::uint32_t>(cfg.method_cfg.cntk.filter);
    h.leaky_slope = cfg.method_cfg.cntk.leaky_slope;
    h.precision = cfg.method_cfg.cntk.precision;
    std::ostringstream os(std::ios::binary);
    write_kernel_cache(os, *rec.kernel_targets, h);
    write_text(dir / "kernel_cache.bin", os.str());
  }
  if (rec.net) {
    std::ostringstream os(std::ios::binary);
    write_net(os, *rec.net);
    write_text(dir / "net.bin", os.str());
  }
  if (rec.trace) {
    report["glip"] = {{"initial_loss", rec.trace->initial_loss},
                      {"final_loss", rec.trace->losses.empty() ? rec.trace->initial_loss
                                                               : rec.trace->losses.back()},
                      {"losses", rec.trace->losses}};
  }

  json timing = eval::to_json(eval::TimingReport{rec.train_seconds, rec.inference_seconds,
                                                 eval::peak_memory_bytes()});
  timing["prior_seconds"] = prior_seconds;

  write_text(dir / "map.csv", map_csv_text(map.values));
  write_text(dir / "map.pgm", map_pgm_text(map));
  write_json(dir / "timing.json", timing);
  write_json(dir / "cleaning_report.json", cleaning_json(data));
  write_text(dir / "config.resolved", cfg.resolved_text());
  write_json(dir / "report.json", report);
  return report;
}

json run_evaluate(const RunConfig& cfg) {
  const auto dir = prepare_output(cfg);
  const LoadedData data = load_input(cfg);
  eval::EvalConfig ec;
  ec.holdout = cfg.holdout;
  ec.first_snapshot = cfg.eval_first;
  ec.snapshot_count = cfg.eval_count.value_or(SIZE_MAX);
  ec.method = cfg.method;
  ec.prior = cfg.prior;
  const eval::SeriesInputs in{data.snapshots, cfg.grid, data.norm,
                              data.buildings ? &data.buildings->mask : nullptr};

  const auto t0 = Clock::now();
  const auto result = eval::evaluate_series(in, ec, cfg.method_cfg);
  const double seconds = seconds_since(t0);

  json report = eval::to_json(result);
  report["method"] = eval::to_string(cfg.method);
  report["prior"] = eval::to_string(cfg.prior);
  report["config"] = config_json(cfg);
  report["reference_targets"] = eval::reference_targets();

  std::string csv = "snapshot,bin_start,sensor_id,reference_vpm,predicted_vpm\n";
  for (const auto& s : result.snapshots) {
    for (const auto& p : s.points) {
      char line[256];
      std::snprintf(line, sizeof line, "%zu,%s,%s,%.12g,%.12g\n", s.index,
                    format_iso8601(s.bin_start).c_str(), p.sensor_id.c_str(), p.reference_vpm,
                    p.predicted_vpm);
      csv += line;
    }
  }
  json timing{{"total_seconds", seconds},
              {"snapshots", result.snapshots.size()},
              {"peak_memory_bytes", eval::peak_memory_bytes()}};

  write_text(dir / "timeseries.csv", csv);
  write_json(dir / "timing.json", timing);
  write_json(dir / "cleaning_report.json", cleaning_json(data));
  write_text(dir / "config.resolved", cfg.resolved_text());
  write_json(dir / "report.json", report);
  return report;
}

json run_bench(const RunConfig& cfg, std::size_t images) {
  const auto dir = prepare_output(cfg);
  const LoadedData data = load_input(cfg);
  const Snapshot& snap = pick_snapshot(data, cfg.snapshot);
  const ObservationGrid obs = training_grid(snap, cfg, data.norm);
  if (obs.observed_count() == 0) {
    throw Error(ErrorCode::EmptyObservation, "snapshot has no training readings");
  }
  const PriorImage prior = eval::build_prior(cfg.prior, obs, cfg.grid, cfg.method_cfg);
  const auto observed = obs.observed_pixels();
  const auto everything = all_pixels(cfg.grid.rows, cfg.grid.cols);
  const auto y_std = obs.observed_values();
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(
      y_std.data(), static_cast<Eigen::Index>(y_std.size()));
  const auto& mc = cfg.method_cfg;

  json methods = json::object();
  bool populated = true;
  double exact_infer = -1.0;
  for (auto method : {eval::Method::Glip, eval::Method::CntkExact, eval::Method::CntkEigenPro}) {
    eval::TimedTask task;
    task.images = images;
    std::optional<KernelBlock> k_full;
    std::optional<SolveState> state;
    glip::GlipNet net;
    if (method == eval::Method::Glip) {
      task.train = [&] {
        net = glip::init_net(mc.seed, mc.glip_widths);
        glip::train(net, prior.values, obs, mc.glip_train);
      };
      task.infer = [&] { (void)glip::forward(net, prior.values); };
    } else {
      // Training computes every kernel row the map needs; inference is then
      // a cached matrix-vector product.
      task.train = [&, method] {
        k_full = compute_kernel(prior, mc.cntk, everything, observed);
        KernelBlock k_tt;
        k_tt.rows = observed;
        k_tt.cols = observed;
        k_tt.entries.resize(static_cast<Eigen::Index>(observed.size()),
                            static_cast<Eigen::Index>(observed.size()));
        for (std::size_t i = 0; i < observed.size(); ++i) {
          k_tt.entries.row(static_cast<Eigen::Index>(i)) =
              k_full->entries.row(static_cast<Eigen::Index>(observed[i]));
        }
        if (method == eval::Method::CntkExact) {
          state = solve_exact(k_tt, y, mc.exact);
        } else {
          const std::size_t s = std::min(mc.eigen_count, observed.size() - 1);
          state = eigenpro_solve(k_tt, y, build_preconditioner(k_tt.entries, s, mc.safety),
                                 mc.eigenpro);
        }
      };
      task.infer = [&] { (void)predict(*k_full, *state); };
    }
    const auto rep = eval::time_run(task);
    json j = eval::to_json(rep);
    j["images"] = images;
    methods[std::string(eval::to_string(method))] = j;
    populated = populated && rep.train_seconds > 0.0 && rep.inference_seconds_per_image > 0.0;
    if (method == eval::Method::CntkExact) exact_infer = rep.inference_seconds_per_image;
  }

  json report{{"grid", {{"rows", cfg.grid.rows}, {"cols", cfg.grid.cols}}},
              {"observed_pixels", observed.size()},
              {"prior", eval::to_string(cfg.prior)},
              {"methods", methods},
              {"all_fields_populated", populated},
              {"exact_inference_under_1s", exact_infer >= 0.0 && exact_infer < 1.0},
              {"reference_targets", eval::reference_targets()}};
  write_text(dir / "config.resolved", cfg.resolved_text());
  write_json(dir / "bench.json", report);
  return report;
}

}  // namespace expomap

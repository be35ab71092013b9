#include "expomap/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace expomap::eval {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::CntkExact: return "cntk_exact";
    case Method::CntkEigenPro: return "cntk_eigenpro";
    case Method::Glip: return "glip";
  }
  return "unknown";
}

std::string_view to_string(PriorKind k) { return k == PriorKind::LIP ? "lip" : "rnp"; }

Method parse_method(std::string_view s) {
  if (s == "cntk_exact") return Method::CntkExact;
  if (s == "cntk_eigenpro") return Method::CntkEigenPro;
  if (s == "glip") return Method::Glip;
  throw Error(ErrorCode::ConfigError, "unknown method '" + std::string(s) +
                                          "' (expected cntk_exact, cntk_eigenpro or glip)");
}

PriorKind parse_prior(std::string_view s) {
  if (s == "lip" || s == "LIP") return PriorKind::LIP;
  if (s == "rnp" || s == "RNP") return PriorKind::RNP;
  throw Error(ErrorCode::ConfigError, "unknown prior '" + std::string(s) + "' (expected lip or rnp)");
}

PriorImage build_prior(PriorKind kind, const ObservationGrid& obs, const GridSpec& spec,
                       const MethodConfig& cfg) {
  if (kind == PriorKind::LIP) return build_lip(obs, cfg.lip_k, cfg.lip_power);
  return build_rnp(spec, cfg.seed);
}

Reconstruction reconstruct(Method method, const ObservationGrid& obs, const PriorImage& prior,
                           std::span<const PixelIndex> targets, const MethodConfig& cfg) {
  const auto observed = obs.observed_pixels();
  if (observed.empty()) {
    throw Error(ErrorCode::EmptyObservation, "reconstruction needs at least one observed pixel");
  }
  if (!prior.values.same_shape(obs.values)) {
    throw Error(ErrorCode::ShapeMismatch, "prior and observation grids differ in shape");
  }
  Reconstruction rec;
  if (method == Method::Glip) {
    auto t0 = Clock::now();
    auto net = glip::init_net(cfg.seed, cfg.glip_widths);
    rec.trace = glip::train(net, prior.values, obs, cfg.glip_train);
    rec.train_seconds = seconds_since(t0);
    t0 = Clock::now();
    const auto out = glip::forward(net, prior.values);
    rec.predictions.reserve(targets.size());
    for (auto p : targets) rec.predictions.push_back(out[p]);
    rec.inference_seconds = seconds_since(t0);
    rec.net = std::move(net);
    return rec;
  }

  auto t0 = Clock::now();
  const auto y_std = obs.observed_values();
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(
      y_std.data(), static_cast<Eigen::Index>(y_std.size()));
  const KernelBlock k_tt = compute_kernel(prior, cfg.cntk, observed, observed);
  if (method == Method::CntkExact) {
    rec.solve = solve_exact(k_tt, y, cfg.exact);
  } else {
    const std::size_t s = std::min(cfg.eigen_count, observed.size() - 1);
    const auto pre = build_preconditioner(k_tt.entries, s, cfg.safety);
    rec.solve = eigenpro_solve(k_tt, y, pre, cfg.eigenpro);
  }
  if (!targets.empty()) {
    rec.kernel_targets = compute_kernel(prior, cfg.cntk, targets, observed);
  }
  rec.train_seconds = seconds_since(t0);
  t0 = Clock::now();
  if (rec.kernel_targets) {
    const Eigen::VectorXd pred = predict(*rec.kernel_targets, *rec.solve);
    rec.predictions.assign(pred.data(), pred.data() + pred.size());
  }
  rec.inference_seconds = seconds_since(t0);
  return rec;
}

double rmse(std::span<const double> reference, std::span<const double> predicted,
            Units reference_units, Units predicted_units) {
  if (reference_units != Units::VoltsPerMeter || predicted_units != Units::VoltsPerMeter) {
    throw Error(ErrorCode::UnitMismatch, "RMSE is reported in V/m; denormalize first");
  }
  if (reference.empty()) throw Error(ErrorCode::EmptyInput, "RMSE of zero points");
  if (reference.size() != predicted.size()) {
    throw Error(ErrorCode::ShapeMismatch, "RMSE inputs differ in length");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double e = reference[i] - predicted[i];
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(reference.size()));
}

void EvalConfig::validate() const {
  if (holdout.empty()) throw Error(ErrorCode::ConfigError, "evaluation needs holdout sensors");
}

SeriesResult evaluate_series(const SeriesInputs& in, const EvalConfig& cfg,
                             const MethodConfig& method_cfg) {
  return evaluate_series(in, cfg, method_cfg,
                         [&](const ObservationGrid& obs, const PriorImage& prior,
                             std::span<const PixelIndex> targets) {
                           return reconstruct(cfg.method, obs, prior, targets, method_cfg)
                               .predictions;
                         });
}

SeriesResult evaluate_series(const SeriesInputs& in, const EvalConfig& cfg,
                             const MethodConfig& method_cfg, const Reconstructor& reconstructor) {
  cfg.validate();
  in.norm.validate();
  const std::set<std::string> holdout(cfg.holdout.begin(), cfg.holdout.end());
  SeriesResult result;

  const std::size_t first = std::min(cfg.first_snapshot, in.snapshots.size());
  const std::size_t last =
      cfg.snapshot_count == SIZE_MAX
          ? in.snapshots.size()
          : std::min(in.snapshots.size(), first + cfg.snapshot_count);
  for (std::size_t si = first; si < last; ++si) {
    const auto& snap = in.snapshots[si];
    std::map<std::string, const SensorReading*> held;
    std::vector<SensorReading> training;
    for (const auto& r : snap.readings) {
      if (holdout.count(r.sensor_id)) {
        held[r.sensor_id] = &r;
      } else {
        training.push_back(r);
      }
    }
    if (held.size() != holdout.size()) {
      ++result.skipped_holdout_missing;
      continue;
    }

    // Holdout pixels that can be scored.
    std::vector<std::pair<const SensorReading*, PixelIndex>> scored;
    std::set<PixelIndex> holdout_pixels;
    bool missing = false;
    for (const auto& [id, r] : held) {
      const auto px = latlon_to_pixel(in.grid, r->lat, r->lon);
      if (!px) {
        result.warnings.push_back("snapshot " + std::to_string(si) + ": holdout sensor " + id +
                                  " lies outside the grid");
        missing = true;
        break;
      }
      const PixelIndex p = in.grid.index(*px);
      holdout_pixels.insert(p);
      if (in.buildings && in.buildings->blocked[p]) {
        result.warnings.push_back("holdout sensor " + id +
                                  " lies inside a building footprint; excluded from RMSE");
        continue;
      }
      scored.emplace_back(r, p);
    }
    if (missing) {
      ++result.skipped_holdout_missing;
      continue;
    }
    if (scored.empty()) {
      ++result.skipped_empty;
      continue;
    }

    std::vector<SensorReading> inputs;
    for (auto& r : training) {
      const auto px = latlon_to_pixel(in.grid, r.lat, r.lon);
      if (px && holdout_pixels.count(in.grid.index(*px))) {
        ++result.training_dropped_on_holdout_pixel;
        continue;
      }
      inputs.push_back(std::move(r));
    }
    const auto raster = rasterize_readings(inputs, in.grid, in.norm);
    const ObservationGrid& obs = raster.grid;
    if (obs.observed_count() == 0) {
      ++result.skipped_empty;
      continue;
    }
    for (auto p : holdout_pixels) {
      if (obs.mask[p]) {
        throw Error(ErrorCode::InvalidArgument,
                    "holdout pixel leaked into the observation grid");
      }
    }

    const PriorImage prior = build_prior(cfg.prior, obs, in.grid, method_cfg);
    std::vector<PixelIndex> targets;
    for (const auto& s : scored) targets.push_back(s.second);
    const auto pred = reconstructor(obs, prior, targets);
    if (pred.size() != targets.size()) {
      throw Error(ErrorCode::ShapeMismatch, "reconstructor returned the wrong number of values");
    }

    SnapshotResult sr;
    sr.index = si;
    sr.bin_start = snap.bin_start;
    sr.observed_pixels = obs.observed_count();
    std::vector<double> ref, est, ref_n, est_n;
    for (std::size_t k = 0; k < scored.size(); ++k) {
      const auto* r = scored[k].first;
      const double p_vpm = denormalize(pred[k], in.norm);
      sr.points.push_back({r->sensor_id, r->e_field, p_vpm});
      ref.push_back(r->e_field);
      est.push_back(p_vpm);
      ref_n.push_back(normalize(r->e_field, in.norm));
      est_n.push_back(pred[k]);
    }
    sr.rmse_vpm = rmse(ref, est);
    sr.rmse_normalized = rmse(ref_n, est_n);
    result.snapshots.push_back(std::move(sr));
  }

  std::vector<double> values;
  for (const auto& s : result.snapshots) values.push_back(s.rmse_vpm);
  std::sort(values.begin(), values.end());
  if (!values.empty()) {
    double sum = 0.0;
    for (double v : values) sum += v;
    result.mean_rmse = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - result.mean_rmse) * (v - result.mean_rmse);
    result.std_rmse = std::sqrt(ss / static_cast<double>(values.size()));
  } else {
    result.mean_rmse = result.std_rmse = std::numeric_limits<double>::quiet_NaN();
    result.warnings.push_back("no snapshot could be scored");
  }
  return result;
}

std::size_t peak_memory_bytes() {
  std::ifstream status("/proc/self/status");
  std::string line;
  while (std::getline(status, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream ss(line.substr(6));
      std::size_t kb = 0;
      ss >> kb;
      return kb * 1024;
    }
  }
  return 0;
}

TimingReport time_run(const TimedTask& task) {
  TimingReport rep;
  auto t0 = Clock::now();
  if (task.train) task.train();
  rep.train_seconds = seconds_since(t0);
  const std::size_t images = std::max<std::size_t>(task.images, 1);
  t0 = Clock::now();
  if (task.infer) {
    for (std::size_t i = 0; i < images; ++i) task.infer();
  }
  rep.inference_seconds_per_image = seconds_since(t0) / static_cast<double>(images);
  rep.peak_memory_bytes = peak_memory_bytes();
  return rep;
}

nlohmann::json reference_targets() {
  using nlohmann::json;
  json rmse_targets = json::array();
  auto add = [&](const char* roi, const char* method, const char* prior, double v) {
    rmse_targets.push_back({{"roi", roi}, {"method", method}, {"prior", prior}, {"rmse_vpm", v}});
  };
  add("Wazemmes", "cntk_exact", "lip", 8.59e-1);
  add("Wazemmes", "cntk_eigenpro", "lip", 1.99e-1);
  add("Wazemmes", "cntk_eigenpro", "rnp", 8.59e-1);
  add("Wazemmes", "glip", "lip", 4.96e-1);
  add("Euratechnologies", "cntk_exact", "lip", 7.46e-1);
  add("Euratechnologies", "cntk_eigenpro", "lip", 4.59e-1);
  add("Euratechnologies", "cntk_eigenpro", "rnp", 8.70e-1);
  add("Euratechnologies", "glip", "lip", 6.61e-1);
  return {
      {"status", "requires MEL dataset"},
      {"note",
       "Lille sensor network, 46/4 (Wazemmes) and 18/2 (Euratechnologies) train/holdout "
       "sensors on 128x128 grids; not reproducible from synthetic data. The GLIP Wazemmes "
       "figure is also quoted as 6.01e-1 V/m in the accompanying discussion."},
      {"rmse", rmse_targets},
      {"timing",
       json::array({{{"method", "glip"}, {"train_seconds", 73.0}, {"epochs", 150}},
                    {{"method", "cntk_exact"}, {"train_seconds", 10.0},
                     {"inference_seconds_per_image", 3.5e-5}},
                    {{"method", "cntk_eigenpro"}, {"train_seconds", 14.0}, {"epochs", 350},
                     {"inference_seconds_per_image", 4.1e-4}}})},
  };
}

nlohmann::json to_json(const SeriesResult& r) {
  nlohmann::json snaps = nlohmann::json::array();
  for (const auto& s : r.snapshots) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : s.points) {
      pts.push_back({{"sensor_id", p.sensor_id},
                     {"reference_vpm", p.reference_vpm},
                     {"predicted_vpm", p.predicted_vpm}});
    }
    snaps.push_back({{"index", s.index},
                     {"bin_start", format_iso8601(s.bin_start)},
                     {"observed_pixels", s.observed_pixels},
                     {"rmse_vpm", s.rmse_vpm},
                     {"rmse_normalized", s.rmse_normalized},
                     {"points", pts}});
  }
  return {{"snapshots", snaps},
          {"evaluated", r.snapshots.size()},
          {"skipped_holdout_missing", r.skipped_holdout_missing},
          {"skipped_empty", r.skipped_empty},
          {"training_dropped_on_holdout_pixel", r.training_dropped_on_holdout_pixel},
          {"mean_rmse_vpm", r.mean_rmse},
          {"std_rmse_vpm", r.std_rmse},
          {"warnings", r.warnings}};
}

nlohmann::json to_json(const TimingReport& t) {
  return {{"train_seconds", t.train_seconds},
          {"inference_seconds_per_image", t.inference_seconds_per_image},
          {"peak_memory_bytes", t.peak_memory_bytes}};
}

nlohmann::json to_json(const SolveState& s) {
  std::vector<double> alpha(s.alpha.data(), s.alpha.data() + s.alpha.size());
  return {{"pixels", s.pixels},
          {"alpha", alpha},
          {"iterations", s.iterations},
          {"final_residual", s.final_residual},
          {"residual_trace", s.residual_trace},
          {"jitter_used", s.jitter_used}};
}

nlohmann::json to_json(const CleaningReport& r) {
  return {{"input", r.input},
          {"output", r.output},
          {"duplicates_dropped", r.duplicates_dropped},
          {"nan_dropped", r.nan_dropped},
          {"outliers_dropped", r.outliers_dropped},
          {"out_of_bounds_dropped", r.out_of_bounds_dropped}};
}

}  // namespace expomap::eval

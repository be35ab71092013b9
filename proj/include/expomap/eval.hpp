#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "expomap/cntk.hpp"
#include "expomap/glip.hpp"
#include "expomap/grid.hpp"
#include "expomap/ingest.hpp"
#include "expomap/prior.hpp"
#include "expomap/solver.hpp"

namespace expomap::eval {

enum class Method { CntkExact, CntkEigenPro, Glip };

std::string_view to_string(Method m);
std::string_view to_string(PriorKind k);
Method parse_method(std::string_view s);
PriorKind parse_prior(std::string_view s);

// Everything a reconstruction needs besides the data.
struct MethodConfig {
  CntkConfig cntk;
  ExactSolveOptions exact;
  std::size_t eigen_count = 10;  // s
  double safety = 1.5;
  EigenProOptions eigenpro;
  std::vector<std::size_t> glip_widths{1, 16, 32, 32, 16, 1};
  glip::TrainOptions glip_train;
  std::size_t lip_k = 5;
  double lip_power = 2.0;
  std::uint64_t seed = 0;
};

PriorImage build_prior(PriorKind kind, const ObservationGrid& obs, const GridSpec& spec,
                       const MethodConfig& cfg);

struct Reconstruction {
  std::vector<double> predictions;  // normalized, one per target pixel
  std::optional<SolveState> solve;
  std::optional<KernelBlock> kernel_targets;  // K_pt (CNTK methods)
  std::optional<glip::TrainTrace> trace;
  std::optional<glip::GlipNet> net;
  double train_seconds = 0.0;
  double inference_seconds = 0.0;
};

// Fits `method` to the observed pixels and predicts at `targets`.
Reconstruction reconstruct(Method method, const ObservationGrid& obs, const PriorImage& prior,
                           std::span<const PixelIndex> targets, const MethodConfig& cfg);

// RMSE in V/m. Throws EmptyInput, ShapeMismatch on length mismatch, and
// UnitMismatch when either side is tagged normalized.
double rmse(std::span<const double> reference, std::span<const double> predicted,
            Units reference_units = Units::VoltsPerMeter,
            Units predicted_units = Units::VoltsPerMeter);

struct EvalConfig {
  std::vector<std::string> holdout;
  std::size_t first_snapshot = 0;
  std::size_t snapshot_count = SIZE_MAX;
  Method method = Method::CntkEigenPro;
  PriorKind prior = PriorKind::LIP;

  void validate() const;
};

// Normalized predictions at `targets` for one snapshot.
using Reconstructor = std::function<std::vector<double>(
    const ObservationGrid& obs, const PriorImage& prior, std::span<const PixelIndex> targets)>;

struct SensorPoint {
  std::string sensor_id;
  double reference_vpm = 0.0;
  double predicted_vpm = 0.0;
};

struct SnapshotResult {
  std::size_t index = 0;
  Timestamp bin_start{};
  std::size_t observed_pixels = 0;
  double rmse_vpm = 0.0;
  double rmse_normalized = 0.0;
  std::vector<SensorPoint> points;
};

struct SeriesResult {
  std::vector<SnapshotResult> snapshots;
  std::size_t skipped_holdout_missing = 0;
  std::size_t skipped_empty = 0;
  std::size_t training_dropped_on_holdout_pixel = 0;
  double mean_rmse = 0.0;  // NaN when no snapshot was scored
  double std_rmse = 0.0;
  std::vector<std::string> warnings;
};

struct SeriesInputs {
  const std::vector<Snapshot>& snapshots;
  const GridSpec& grid;
  const NormParams& norm;
  const BuildingMask* buildings = nullptr;
};

// Per snapshot: rasterize non-holdout sensors, build the prior, reconstruct,
// denormalize, and score the holdout pixels. Snapshots missing a holdout
// sensor are skipped and counted.
SeriesResult evaluate_series(const SeriesInputs& in, const EvalConfig& cfg,
                             const MethodConfig& method_cfg);
SeriesResult evaluate_series(const SeriesInputs& in, const EvalConfig& cfg,
                             const MethodConfig& method_cfg, const Reconstructor& reconstructor);

struct TimingReport {
  double train_seconds = 0.0;
  double inference_seconds_per_image = 0.0;
  std::size_t peak_memory_bytes = 0;  // 0 when unavailable
};

struct TimedTask {
  std::function<void()> train;
  std::function<void()> infer;  // one call per image
  std::size_t images = 1;
};

TimingReport time_run(const TimedTask& task);

// Process peak resident set size from /proc, 0 if unavailable.
std::size_t peak_memory_bytes();

// Published figures for the Lille (MEL) sensor network. They need the
// original data and are carried in reports for reference only.
nlohmann::json reference_targets();

nlohmann::json to_json(const SeriesResult& r);
nlohmann::json to_json(const TimingReport& t);
nlohmann::json to_json(const SolveState& s);
nlohmann::json to_json(const CleaningReport& r);

}  // namespace expomap::eval

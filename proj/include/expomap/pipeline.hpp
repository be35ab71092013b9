#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "expomap/config.hpp"
#include "expomap/eval.hpp"
#include "expomap/ingest.hpp"

namespace expomap {

// Synthetic series: fixed source positions and sensor sites, source
// amplitudes jittered per snapshot, fresh sensor noise per snapshot,
// timestamps one bin apart.
struct SynthSeries {
  std::vector<SensorReading> readings;
  std::vector<ExposureMap> truth;  // V/m, one per snapshot
};
SynthSeries generate_synth_series(const RunConfig& cfg, const BuildingMask* buildings);

struct LoadedData {
  std::vector<SensorReading> readings;  // cleaned
  std::vector<MalformedRow> malformed;
  CleaningReport cleaning;
  std::vector<Snapshot> snapshots;
  NormParams norm;
  std::optional<BuildingRasterResult> buildings;
  std::vector<ExposureMap> truth;  // synthetic runs only, aligned with snapshots
};

// Parse or synthesize, clean, bin, and fit the normalization on the
// non-holdout readings.
LoadedData load_input(const RunConfig& cfg);

// Observation grid of one snapshot with holdout sensors (and anything sharing
// their pixels) removed.
ObservationGrid training_grid(const Snapshot& snap, const RunConfig& cfg, const NormParams& norm);

// Each writes its artifacts into cfg.output_dir and returns the report JSON.
nlohmann::json run_ingest(const RunConfig& cfg);
nlohmann::json run_synth(const RunConfig& cfg);
nlohmann::json run_reconstruct(const RunConfig& cfg);
nlohmann::json run_evaluate(const RunConfig& cfg);
nlohmann::json run_bench(const RunConfig& cfg, std::size_t images = 10);

}  // namespace expomap

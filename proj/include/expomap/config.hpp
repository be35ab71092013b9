#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "expomap/eval.hpp"
#include "expomap/grid.hpp"
#include "expomap/ingest.hpp"

namespace expomap {

// Flat "section.key = value" text; '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values_file(const std::string& path);

struct SynthSpec {
  std::size_t sources = 6;
  std::size_t sensors = 50;
  double noise_std = 0.01;
  double shadowing_db = 4.0;
  double amplitude_min = 20.0;
  double amplitude_max = 40.0;
  std::size_t snapshots = 1;
  Timestamp start{};
};

struct RunConfig {
  GridSpec grid;
  // Exactly one of sensors_csv / synth.
  std::optional<std::string> sensors_csv;
  std::optional<SynthSpec> synth;
  std::optional<std::string> buildings_json;
  double bin_hours = 2.0;
  std::size_t snapshot = 0;
  CleaningOptions cleaning;
  PriorKind prior = PriorKind::LIP;
  eval::Method method = eval::Method::CntkEigenPro;
  eval::MethodConfig method_cfg;
  std::vector<std::string> holdout;
  std::size_t eval_first = 0;
  std::optional<std::size_t> eval_count;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  // Throws ConfigError on unknown keys, bad values, or a missing input file.
  static RunConfig from_key_values(const KeyValues& kv);
  // Every field, defaults included; from_key_values(to_key_values()) is the
  // identity.
  KeyValues to_key_values() const;
  std::string resolved_text() const;
  void validate() const;
};

RunConfig load_run_config(const std::string& path);

}  // namespace expomap

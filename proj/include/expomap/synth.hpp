#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "expomap/grid.hpp"

namespace expomap::synth {

struct SourceSpec {
  Pixel position;
  double amplitude = 30.0;   // V/m at 1 m
  double exponent = 1.0;     // amplitude decay exponent
  double shadowing_db = 4.0; // log-normal shadowing sigma
};

// Per pixel: sqrt(sum_k (amp_k / max(d_k, 1 m))^(2 exponent_k) * S_k^2), where
// S_k is source k's shadowing gain: N(0, sigma_k) dB noise smoothed with a
// 5x5 box filter. Ground truth in V/m; deterministic per seed.
ExposureMap generate_field(const GridSpec& spec, const std::vector<SourceSpec>& sources,
                           std::uint64_t seed);

// Places `count` sources uniformly at random with amplitudes drawn from
// [amp_min, amp_max].
std::vector<SourceSpec> random_sources(const GridSpec& spec, std::size_t count,
                                       std::uint64_t seed, double amp_min = 20.0,
                                       double amp_max = 40.0, double shadowing_db = 4.0);

struct SensorSampling {
  std::size_t count = 50;
  std::uint64_t seed = 0;  // picks positions
  double noise_std = 0.01; // V/m
  std::optional<std::uint64_t> noise_seed;  // defaults to seed
  Timestamp timestamp{};
  std::string id_prefix = "S";
};

// `count` distinct pixels drawn uniformly among non-excluded pixels; reading =
// field + N(0, noise_std), clamped at 0; positions are pixel centers. Sensor
// ids are <prefix><3-digit index>, numbered in draw order. Throws
// TooManySensors.
std::vector<SensorReading> sample_sensors(const ExposureMap& field, const GridSpec& spec,
                                          const SensorSampling& sampling);

}  // namespace expomap::synth

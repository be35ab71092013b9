#include "expomap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace expomap::synth {

namespace {

// Box-filtered N(0, sigma) dB field, converted to an amplitude gain.
Grid<double> shadowing_gain(std::size_t M, std::size_t N, double sigma_db,
                            std::mt19937_64& rng) {
  Grid<double> gain(M, N, 1.0);
  if (sigma_db <= 0.0) return gain;
  // Box sum over the n in-grid taps divided by sqrt(n) keeps the smoothed
  // field at std sigma_db everywhere, borders included.
  std::normal_distribution<double> normal(0.0, sigma_db);
  Grid<double> raw(M, N);
  for (auto& v : raw.flat()) v = normal(rng);
  const auto Mi = static_cast<std::ptrdiff_t>(M), Ni = static_cast<std::ptrdiff_t>(N);
  for (std::ptrdiff_t i = 0; i < Mi; ++i) {
    for (std::ptrdiff_t j = 0; j < Ni; ++j) {
      double sum = 0.0;
      int n = 0;
      for (auto ii = std::max<std::ptrdiff_t>(0, i - 2); ii <= std::min(Mi - 1, i + 2); ++ii) {
        for (auto jj = std::max<std::ptrdiff_t>(0, j - 2); jj <= std::min(Ni - 1, j + 2); ++jj) {
          sum += raw(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
          ++n;
        }
      }
      const double db = sum / std::sqrt(static_cast<double>(n));
      gain(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = std::pow(10.0, db / 20.0);
    }
  }
  return gain;
}

}  // namespace

ExposureMap generate_field(const GridSpec& spec, const std::vector<SourceSpec>& sources,
                           std::uint64_t seed) {
  spec.validate();
  if (sources.empty()) throw Error(ErrorCode::InvalidArgument, "field needs at least one source");
  for (const auto& s : sources) {
    if (!(s.amplitude > 0.0) || !(s.exponent > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "source amplitude and exponent must be > 0");
    }
    if (s.position.row >= spec.rows || s.position.col >= spec.cols) {
      throw Error(ErrorCode::OutOfBounds, "source outside the grid");
    }
  }
  std::mt19937_64 rng(seed);
  Grid<double> power(spec.rows, spec.cols, 0.0);
  const double pw = spec.pixel_width_m(), ph = spec.pixel_height_m();
  for (const auto& s : sources) {
    const Grid<double> gain = shadowing_gain(spec.rows, spec.cols, s.shadowing_db, rng);
    for (std::size_t r = 0; r < spec.rows; ++r) {
      for (std::size_t c = 0; c < spec.cols; ++c) {
        const double dy = (static_cast<double>(r) - static_cast<double>(s.position.row)) * ph;
        const double dx = (static_cast<double>(c) - static_cast<double>(s.position.col)) * pw;
        const double d = std::max(std::hypot(dx, dy), 1.0);
        const double amp = std::pow(s.amplitude / d, s.exponent) * gain(r, c);
        power(r, c) += amp * amp;
      }
    }
  }
  for (auto& v : power.flat()) v = std::sqrt(v);
  return ExposureMap::from_values(std::move(power), Units::VoltsPerMeter);
}

std::vector<SourceSpec> random_sources(const GridSpec& spec, std::size_t count,
                                       std::uint64_t seed, double amp_min, double amp_max,
                                       double shadowing_db) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> row(0, spec.rows - 1), col(0, spec.cols - 1);
  std::uniform_real_distribution<double> amp(amp_min, amp_max);
  std::vector<SourceSpec> out;
  for (std::size_t k = 0; k < count; ++k) {
    SourceSpec s;
    s.position = {row(rng), col(rng)};
    s.amplitude = amp(rng);
    s.shadowing_db = shadowing_db;
    out.push_back(s);
  }
  return out;
}

std::vector<SensorReading> sample_sensors(const ExposureMap& field, const GridSpec& spec,
                                          const SensorSampling& sampling) {
  if (!field.values.same_shape(spec.rows, spec.cols)) {
    throw Error(ErrorCode::ShapeMismatch, "field does not match the grid spec");
  }
  std::vector<PixelIndex> candidates;
  for (std::size_t i = 0; i < field.values.size(); ++i) {
    const bool excluded = field.excluded.same_shape(field.values) && field.excluded[i];
    if (!excluded) candidates.push_back(static_cast<PixelIndex>(i));
  }
  if (sampling.count > candidates.size()) {
    throw Error(ErrorCode::TooManySensors,
                "requested " + std::to_string(sampling.count) + " sensors but only " +
                    std::to_string(candidates.size()) + " eligible pixels");
  }
  // Partial Fisher-Yates: the first `count` entries are a uniform draw.
  std::mt19937_64 rng(sampling.seed);
  for (std::size_t k = 0; k < sampling.count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, candidates.size() - 1);
    std::swap(candidates[k], candidates[pick(rng)]);
  }
  std::mt19937_64 noise_rng(sampling.noise_seed.value_or(sampling.seed) ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<SensorReading> out;
  out.reserve(sampling.count);
  for (std::size_t k = 0; k < sampling.count; ++k) {
    const Pixel px = spec.pixel(candidates[k]);
    const auto ll = pixel_center_latlon(spec, px);
    SensorReading r;
    char id[32];
    std::snprintf(id, sizeof id, "%s%03zu", sampling.id_prefix.c_str(), k + 1);
    r.sensor_id = id;
    r.timestamp = sampling.timestamp;
    r.lat = ll.lat;
    r.lon = ll.lon;
    const double n = noise(noise_rng);
    r.e_field = sampling.noise_std > 0.0
                    ? std::max(0.0, field.values[candidates[k]] + sampling.noise_std * n)
                    : field.values[candidates[k]];
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace expomap::synth

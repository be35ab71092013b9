#pragma once

#include <cstdint>
#include <optional>

#include "expomap/grid.hpp"

namespace expomap {

enum class PriorKind { LIP, RNP };

struct PriorProvenance {
  std::size_t k = 0;
  double power = 0.0;
  std::optional<std::uint64_t> seed;
};

// The image A from which both the CNTK and the GLIP generator are driven.
struct PriorImage {
  Grid<double> values;
  PriorKind kind = PriorKind::LIP;
  PriorProvenance provenance;
};

// Local image prior: observed pixels keep their values, every other pixel
// is the inverse-distance-weighted mean (weights d^-power, Euclidean pixel
// distance) of its k nearest observed pixels. Throws EmptyObservation.
PriorImage build_lip(const ObservationGrid& obs, std::size_t k = 5,
                     double power = 2.0);

// Random normal prior: i.i.d. N(0, 1) entries, deterministic per (seed, M, N).
PriorImage build_rnp(const GridSpec& spec, std::uint64_t seed);

}  // namespace expomap

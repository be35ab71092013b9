#include "expomap/prior.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

namespace expomap {

PriorImage build_lip(const ObservationGrid& obs, std::size_t k, double power) {
  const auto pixels = obs.observed_pixels();
  if (pixels.empty()) {
    throw Error(ErrorCode::EmptyObservation, "LIP needs at least one observed pixel");
  }
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "LIP neighbor count must be >= 1");

  const std::size_t cols = obs.cols();
  struct Source {
    double r, c, v;
  };
  std::vector<Source> sources;
  sources.reserve(pixels.size());
  for (auto p : pixels) {
    sources.push_back({static_cast<double>(p / cols), static_cast<double>(p % cols),
                       obs.values[p]});
  }
  const std::size_t kk = std::min(k, sources.size());

  PriorImage prior;
  prior.kind = PriorKind::LIP;
  prior.provenance = {k, power, std::nullopt};
  prior.values = Grid<double>(obs.rows(), cols, 0.0);

  // (squared distance, source index); ties resolve to the lower index.
  std::vector<std::pair<double, std::size_t>> dist(sources.size());
  for (std::size_t r = 0; r < obs.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (obs.mask(r, c)) {
        prior.values(r, c) = obs.values(r, c);
        continue;
      }
      for (std::size_t s = 0; s < sources.size(); ++s) {
        const double dr = sources[s].r - static_cast<double>(r);
        const double dc = sources[s].c - static_cast<double>(c);
        dist[s] = {dr * dr + dc * dc, s};
      }
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk),
                        dist.end());
      double wsum = 0.0, acc = 0.0;
      for (std::size_t j = 0; j < kk; ++j) {
        // Squared distance is >= 1 here: unobserved pixels never coincide
        // with an observed one.
        const double w = std::pow(dist[j].first, -0.5 * power);
        wsum += w;
        acc += w * sources[dist[j].second].v;
      }
      double v = acc / wsum;
      // Keep the convex-combination bound exact under rounding.
      double lo = sources[dist[0].second].v, hi = lo;
      for (std::size_t j = 1; j < kk; ++j) {
        lo = std::min(lo, sources[dist[j].second].v);
        hi = std::max(hi, sources[dist[j].second].v);
      }
      prior.values(r, c) = std::clamp(v, lo, hi);
    }
  }
  return prior;
}

PriorImage build_rnp(const GridSpec& spec, std::uint64_t seed) {
  spec.validate();
  PriorImage prior;
  prior.kind = PriorKind::RNP;
  prior.provenance = {0, 0.0, seed};
  prior.values = Grid<double>(spec.rows, spec.cols, 0.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : prior.values.flat()) v = normal(rng);
  return prior;
}

}  // namespace expomap

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "expomap/grid.hpp"
#include "expomap/prior.hpp"

namespace expomap {

enum class Precision { F32, F64 };

struct CntkConfig {
  std::size_t layers = 6;
  std::size_t filter = 3;       // odd
  double leaky_slope = 0.1;     // LeakyReLU negative-side slope
  Precision precision = Precision::F64;
  std::size_t tile_rows = 1024;
  // Upper bound on the dense output block; compute_kernel refuses larger
  // requests with OutOfMemory.
  std::size_t max_block_bytes = std::size_t{2} << 30;
  // 0 = EXPOMAP_THREADS or hardware concurrency.
  std::size_t threads = 0;

  void validate() const;
};

// Closed-form LeakyReLU dual, E[s(u)s(v)] for (u, v) ~ N(0, [[s11, s12], [s12, s22]]),
// scaled by c_sigma = 1 / (c1^2 + c2^2) so that unit variance is preserved.
double dual_activation(double s11, double s12, double s22, double a);
// Same for the derivative, E[s'(u)s'(v)] * c_sigma.
double dual_derivative(double s11, double s12, double s22, double a);

float dual_activation(float s11, float s12, float s22, float a);
float dual_derivative(float s11, float s12, float s22, float a);

// Sigma and Theta restricted to a rows x cols set of pixel pairs, plus the
// full-grid diagonal of Sigma that the dual activations need.
struct CntkState {
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::vector<PixelIndex> rows;
  std::vector<PixelIndex> cols;
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd theta;
  std::vector<double> diag;  // Sigma[p, p] for every grid pixel
};

// Sigma0[p, p'] = A[p] * A[p'] (Theta0 = Sigma0) over every pixel pair.
CntkState sigma0(const PriorImage& prior);
CntkState sigma0(const PriorImage& prior, std::vector<PixelIndex> rows,
                 std::vector<PixelIndex> cols);

// One step of the recursion. The output domain defaults to the input domain;
// every in-grid neighbour pair (p + d, p' + d) of an output pair must be
// present in `prev`, otherwise DomainTooSmall is thrown.
CntkState cntk_layer(const CntkState& prev, double a, std::size_t q);
CntkState cntk_layer(const CntkState& prev, double a, std::size_t q,
                     std::vector<PixelIndex> out_rows,
                     std::vector<PixelIndex> out_cols);

// Pixels within Chebyshev radius layers * (q - 1) / 2 of the input set,
// clipped to the grid; sorted ascending.
std::vector<PixelIndex> dilate_pixels(std::span<const PixelIndex> pixels,
                                      std::size_t layers, std::size_t q,
                                      std::size_t grid_rows, std::size_t grid_cols);

struct KernelBlock {
  std::vector<PixelIndex> rows;
  std::vector<PixelIndex> cols;
  Eigen::MatrixXd entries;  // rows.size() x cols.size()
};

// Theta^L entries at rows x cols. Each requested pair (p, p') only depends on
// pairs sharing its displacement p' - p, so the recursion runs over the
// receptive-field neighbourhood of the requested pairs alone. Entries are
// bitwise independent of tile_rows and of which other rows/cols are
// requested.
KernelBlock compute_kernel(const PriorImage& prior, const CntkConfig& cfg,
                           std::span<const PixelIndex> rows,
                           std::span<const PixelIndex> cols);

// All grid pixels in flat order.
std::vector<PixelIndex> all_pixels(std::size_t grid_rows, std::size_t grid_cols);

}  // namespace expomap

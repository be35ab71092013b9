#pragma once

#include <istream>
#include <ostream>

#include "expomap/cntk.hpp"
#include "expomap/glip.hpp"

namespace expomap {

// Little-endian container shared by kernel caches and GLIP weights:
//   "EXPM" | u32 version | u32 kind | payload
// Kernel payload: u32 M, N, L, q | f64 leaky slope | u8 precision (0 f32, 1 f64)
//   | u32 n_rows, n_cols | u32 row pixels | u32 col pixels | row-major entries
//   stored at the stated precision.
// Net payload: u32 layers | f64 leaky slope | u64 seed | per layer: u32 in, out,
//   f64 weights (out x in*9, row-major), f64 biases.
struct KernelCacheHeader {
  std::uint32_t grid_rows = 0;
  std::uint32_t grid_cols = 0;
  std::uint32_t layers = 0;
  std::uint32_t filter = 0;
  double leaky_slope = 0.0;
  Precision precision = Precision::F64;
};

void write_kernel_cache(std::ostream& out, const KernelBlock& block,
                        const KernelCacheHeader& header);
KernelBlock read_kernel_cache(std::istream& in, KernelCacheHeader* header = nullptr);

void write_net(std::ostream& out, const glip::GlipNet& net);
glip::GlipNet read_net(std::istream& in);

}  // namespace expomap

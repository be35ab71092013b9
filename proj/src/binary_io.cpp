#include "expomap/binary_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <string>

namespace expomap {

namespace {

constexpr std::array<char, 4> kMagic{'E', 'X', 'P', 'M'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kKindKernel = 1;
constexpr std::uint32_t kKindNet = 2;

template <typename U>
void put_le(std::ostream& out, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw Error(ErrorCode::FormatError, "binary container truncated");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

void put_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
void put_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
void put_f32(std::ostream& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
std::uint32_t get_u32(std::istream& in) { return get_le<std::uint32_t>(in); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }
float get_f32(std::istream& in) { return std::bit_cast<float>(get_le<std::uint32_t>(in)); }

void write_preamble(std::ostream& out, std::uint32_t kind) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kVersion);
  put_u32(out, kind);
}

void read_preamble(std::istream& in, std::uint32_t expected_kind) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw Error(ErrorCode::FormatError, "not an expomap binary container");
  }
  const auto version = get_u32(in);
  if (version != kVersion) {
    throw Error(ErrorCode::FormatError, "unsupported container version " + std::to_string(version));
  }
  const auto kind = get_u32(in);
  if (kind != expected_kind) {
    throw Error(ErrorCode::FormatError, "container holds kind " + std::to_string(kind) +
                                            ", expected " + std::to_string(expected_kind));
  }
}

}  // namespace

void write_kernel_cache(std::ostream& out, const KernelBlock& block,
                        const KernelCacheHeader& header) {
  write_preamble(out, kKindKernel);
  put_u32(out, header.grid_rows);
  put_u32(out, header.grid_cols);
  put_u32(out, header.layers);
  put_u32(out, header.filter);
  put_f64(out, header.leaky_slope);
  put_le<std::uint8_t>(out, header.precision == Precision::F32 ? 0 : 1);
  put_u32(out, static_cast<std::uint32_t>(block.rows.size()));
  put_u32(out, static_cast<std::uint32_t>(block.cols.size()));
  for (auto p : block.rows) put_u32(out, p);
  for (auto p : block.cols) put_u32(out, p);
  for (Eigen::Index i = 0; i < block.entries.rows(); ++i) {
    for (Eigen::Index j = 0; j < block.entries.cols(); ++j) {
      if (header.precision == Precision::F32) {
        put_f32(out, static_cast<float>(block.entries(i, j)));
      } else {
        put_f64(out, block.entries(i, j));
      }
    }
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing kernel cache");
}

KernelBlock read_kernel_cache(std::istream& in, KernelCacheHeader* header) {
  read_preamble(in, kKindKernel);
  KernelCacheHeader h;
  h.grid_rows = get_u32(in);
  h.grid_cols = get_u32(in);
  h.layers = get_u32(in);
  h.filter = get_u32(in);
  h.leaky_slope = get_f64(in);
  h.precision = get_le<std::uint8_t>(in) == 0 ? Precision::F32 : Precision::F64;
  const auto nr = get_u32(in);
  const auto nc = get_u32(in);
  const std::uint64_t pixels = std::uint64_t{h.grid_rows} * h.grid_cols;
  KernelBlock block;
  block.rows.resize(nr);
  block.cols.resize(nc);
  for (auto& p : block.rows) p = get_u32(in);
  for (auto& p : block.cols) p = get_u32(in);
  for (auto p : block.rows) {
    if (p >= pixels) throw Error(ErrorCode::FormatError, "kernel cache row index outside grid");
  }
  for (auto p : block.cols) {
    if (p >= pixels) throw Error(ErrorCode::FormatError, "kernel cache col index outside grid");
  }
  block.entries.resize(nr, nc);
  for (Eigen::Index i = 0; i < block.entries.rows(); ++i) {
    for (Eigen::Index j = 0; j < block.entries.cols(); ++j) {
      block.entries(i, j) = h.precision == Precision::F32 ? get_f32(in) : get_f64(in);
    }
  }
  if (header) *header = h;
  return block;
}

void write_net(std::ostream& out, const glip::GlipNet& net) {
  write_preamble(out, kKindNet);
  put_u32(out, static_cast<std::uint32_t>(net.layers.size()));
  put_f64(out, net.leaky_slope);
  put_le<std::uint64_t>(out, net.seed);
  for (const auto& l : net.layers) {
    put_u32(out, static_cast<std::uint32_t>(l.in_channels));
    put_u32(out, static_cast<std::uint32_t>(l.out_channels));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) put_f64(out, l.weight(i, j));
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) put_f64(out, l.bias(i));
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing network weights");
}

glip::GlipNet read_net(std::istream& in) {
  read_preamble(in, kKindNet);
  glip::GlipNet net;
  const auto layers = get_u32(in);
  net.leaky_slope = get_f64(in);
  net.seed = get_le<std::uint64_t>(in);
  for (std::uint32_t k = 0; k < layers; ++k) {
    glip::ConvLayer l;
    l.in_channels = get_u32(in);
    l.out_channels = get_u32(in);
    if (l.in_channels == 0 || l.out_channels == 0 || l.in_channels > 65536 ||
        l.out_channels > 65536) {
      throw Error(ErrorCode::FormatError, "implausible layer width in network file");
    }
    l.weight.resize(static_cast<Eigen::Index>(l.out_channels),
                    static_cast<Eigen::Index>(l.in_channels * 9));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = get_f64(in);
    }
    l.bias.resize(static_cast<Eigen::Index>(l.out_channels));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = get_f64(in);
    net.layers.push_back(std::move(l));
  }
  return net;
}

}  // namespace expomap

#include "expomap/cntk.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "expomap/parallel.hpp"

namespace expomap {

namespace {

template <typename T>
T dual_act_impl(T s11, T s12, T s22, T a) {
  const T c1 = (T(1) + a) / T(2);
  const T c2 = (T(1) - a) / T(2);
  const T c_sigma = T(1) / (c1 * c1 + c2 * c2);
  const T prod = s11 * s22;
  if (!(prod > T(0))) return T(0);
  const T norm = std::sqrt(prod);
  const T rho = std::clamp(s12 / norm, T(-1), T(1));
  const T arc = (std::sqrt(T(1) - rho * rho) + rho * std::asin(rho)) *
                (T(2) / std::numbers::pi_v<T>);
  return (c1 * c1 * s12 + c2 * c2 * norm * arc) * c_sigma;
}

template <typename T>
T dual_deriv_impl(T s11, T s12, T s22, T a) {
  const T c1 = (T(1) + a) / T(2);
  const T c2 = (T(1) - a) / T(2);
  const T c_sigma = T(1) / (c1 * c1 + c2 * c2);
  const T prod = s11 * s22;
  if (!(prod > T(0))) return c_sigma * c1 * c1;
  const T rho = std::clamp(s12 / std::sqrt(prod), T(-1), T(1));
  return c_sigma *
         (c1 * c1 + c2 * c2 * (T(2) / std::numbers::pi_v<T>) * std::asin(rho));
}

// Sigma^{l+1}[p, p] for every pixel from Sigma^l[p, p].
template <typename T>
std::vector<T> diagonal_layer(const std::vector<T>& diag, std::size_t M, std::size_t N,
                              T a, std::size_t q) {
  const auto r = static_cast<std::ptrdiff_t>((q - 1) / 2);
  const T inv_q2 = T(1) / static_cast<T>(q * q);
  std::vector<T> act(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) {
    act[i] = dual_act_impl(diag[i], diag[i], diag[i], a);
  }
  std::vector<T> out(diag.size(), T(0));
  const auto Mi = static_cast<std::ptrdiff_t>(M);
  const auto Ni = static_cast<std::ptrdiff_t>(N);
  for (std::ptrdiff_t i = 0; i < Mi; ++i) {
    for (std::ptrdiff_t j = 0; j < Ni; ++j) {
      T acc = T(0);
      for (std::ptrdiff_t di = -r; di <= r; ++di) {
        const auto ii = i + di;
        if (ii < 0 || ii >= Mi) continue;
        for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
          const auto jj = j + dj;
          if (jj < 0 || jj >= Ni) continue;
          acc += act[static_cast<std::size_t>(ii * Ni + jj)];
        }
      }
      out[static_cast<std::size_t>(i * Ni + j)] = acc * inv_q2;
    }
  }
  return out;
}

std::vector<std::ptrdiff_t> position_map(const std::vector<PixelIndex>& set,
                                         std::size_t pixel_count) {
  std::vector<std::ptrdiff_t> pos(pixel_count, -1);
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i] >= pixel_count) {
      throw Error(ErrorCode::InvalidArgument,
                  "pixel index " + std::to_string(set[i]) + " outside the grid");
    }
    pos[set[i]] = static_cast<std::ptrdiff_t>(i);
  }
  return pos;
}

// Displacement-grouped evaluation of Theta^L.
template <typename T>
class PairEngine {
 public:
  PairEngine(const PriorImage& prior, const CntkConfig& cfg)
      : M_(prior.values.rows()),
        N_(prior.values.cols()),
        L_(cfg.layers),
        r_(static_cast<std::ptrdiff_t>((cfg.filter - 1) / 2)),
        a_(static_cast<T>(cfg.leaky_slope)),
        inv_q2_(T(1) / static_cast<T>(cfg.filter * cfg.filter)) {
    A_.reserve(prior.values.size());
    for (double v : prior.values.flat()) A_.push_back(static_cast<T>(v));
    diag_.reserve(L_);
    std::vector<T> d(A_.size());
    for (std::size_t i = 0; i < A_.size(); ++i) d[i] = A_[i] * A_[i];
    diag_.push_back(d);
    for (std::size_t l = 1; l < L_; ++l) {
      diag_.push_back(diagonal_layer(diag_.back(), M_, N_, a_, cfg.filter));
    }
  }

  // Fills out.row(i) for i in [row_begin, row_end).
  void run_tile(std::span<const PixelIndex> rows, std::span<const PixelIndex> cols,
                std::size_t row_begin, std::size_t row_end, Eigen::MatrixXd& out) const {
    const std::size_t P = M_ * N_;
    const std::size_t key_cols = 2 * N_ - 1;
    const std::size_t key_count = (2 * M_ - 1) * key_cols;
    auto key_of = [&](PixelIndex s, PixelIndex t) {
      const std::size_t dr = t / N_ + (M_ - 1) - s / N_;
      const std::size_t dc = t % N_ + (N_ - 1) - s % N_;
      return dr * key_cols + dc;
    };

    // Counting sort of the tile's pairs by displacement.
    std::vector<std::uint32_t> start(key_count + 1, 0);
    for (std::size_t i = row_begin; i < row_end; ++i) {
      for (std::size_t j = 0; j < cols.size(); ++j) ++start[key_of(rows[i], cols[j]) + 1];
    }
    for (std::size_t k = 0; k < key_count; ++k) start[k + 1] += start[k];
    struct Entry {
      std::uint32_t i, j;
    };
    std::vector<Entry> entries(start[key_count]);
    {
      std::vector<std::uint32_t> fill(start.begin(), start.end() - 1);
      for (std::size_t i = row_begin; i < row_end; ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
          entries[fill[key_of(rows[i], cols[j])]++] = {static_cast<std::uint32_t>(i),
                                                       static_cast<std::uint32_t>(j)};
        }
      }
    }

    std::vector<T> sig(P), th(P), kt(P), g(P);
    std::vector<std::uint32_t> mark((L_ + 1) * P, 0);
    std::uint32_t gen = 0;
    std::vector<std::vector<PixelIndex>> dom(L_ + 1);

    const auto Mi = static_cast<std::ptrdiff_t>(M_);
    const auto Ni = static_cast<std::ptrdiff_t>(N_);
    for (std::size_t key = 0; key < key_count; ++key) {
      if (start[key] == start[key + 1]) continue;
      const auto dr = static_cast<std::ptrdiff_t>(key / key_cols) - (Mi - 1);
      const auto dc = static_cast<std::ptrdiff_t>(key % key_cols) - (Ni - 1);
      const std::ptrdiff_t dflat = dr * Ni + dc;
      // Anchors s with both s and s + d inside the grid.
      const std::ptrdiff_t rlo = std::max<std::ptrdiff_t>(0, -dr);
      const std::ptrdiff_t rhi = std::min(Mi, Mi - dr);
      const std::ptrdiff_t clo = std::max<std::ptrdiff_t>(0, -dc);
      const std::ptrdiff_t chi = std::min(Ni, Ni - dc);

      ++gen;
      auto visit = [&](std::size_t level, std::ptrdiff_t s) {
        auto& m = mark[level * P + static_cast<std::size_t>(s)];
        if (m != gen) {
          m = gen;
          dom[level].push_back(static_cast<PixelIndex>(s));
        }
      };
      dom[L_].clear();
      for (auto e = start[key]; e < start[key + 1]; ++e) {
        visit(L_, rows[entries[e].i]);
      }
      for (std::size_t l = L_; l-- > 0;) {
        dom[l].clear();
        for (PixelIndex s : dom[l + 1]) {
          const auto si = static_cast<std::ptrdiff_t>(s) / Ni;
          const auto sj = static_cast<std::ptrdiff_t>(s) % Ni;
          for (auto ii = std::max(rlo, si - r_); ii <= std::min(rhi - 1, si + r_); ++ii) {
            for (auto jj = std::max(clo, sj - r_); jj <= std::min(chi - 1, sj + r_); ++jj) {
              visit(l, ii * Ni + jj);
            }
          }
        }
      }

      for (PixelIndex s : dom[0]) {
        const T v = A_[s] * A_[static_cast<std::size_t>(s + dflat)];
        sig[s] = v;
        th[s] = v;
      }
      for (std::size_t l = 0; l < L_; ++l) {
        const auto& dg = diag_[l];
        for (PixelIndex s : dom[l]) {
          const auto t = static_cast<std::size_t>(s + dflat);
          const T k = dual_act_impl(dg[s], sig[s], dg[t], a_);
          const T kd = dual_deriv_impl(dg[s], sig[s], dg[t], a_);
          kt[s] = k;
          g[s] = kd * th[s] + k;
        }
        for (PixelIndex s : dom[l + 1]) {
          const auto si = static_cast<std::ptrdiff_t>(s) / Ni;
          const auto sj = static_cast<std::ptrdiff_t>(s) % Ni;
          T sa = T(0), ta = T(0);
          for (auto ii = si - r_; ii <= si + r_; ++ii) {
            if (ii < rlo || ii >= rhi) continue;
            for (auto jj = sj - r_; jj <= sj + r_; ++jj) {
              if (jj < clo || jj >= chi) continue;
              const auto n = static_cast<std::size_t>(ii * Ni + jj);
              sa += kt[n];
              ta += g[n];
            }
          }
          sig[s] = sa * inv_q2_;
          th[s] = ta * inv_q2_;
        }
      }
      for (auto e = start[key]; e < start[key + 1]; ++e) {
        out(entries[e].i, entries[e].j) = static_cast<double>(th[rows[entries[e].i]]);
      }
    }
  }

 private:
  std::size_t M_, N_, L_;
  std::ptrdiff_t r_;
  T a_, inv_q2_;
  std::vector<T> A_;
  std::vector<std::vector<T>> diag_;  // Sigma^l[p, p], l = 0..L-1
};

template <typename T>
void run_engine(const PriorImage& prior, const CntkConfig& cfg,
                std::span<const PixelIndex> rows, std::span<const PixelIndex> cols,
                Eigen::MatrixXd& out) {
  const PairEngine<T> engine(prior, cfg);
  const std::size_t tile = std::max<std::size_t>(cfg.tile_rows, 1);
  const std::size_t tiles = (rows.size() + tile - 1) / tile;
  parallel_for(tiles, resolve_threads(cfg.threads), [&](std::size_t t) {
    engine.run_tile(rows, cols, t * tile, std::min(rows.size(), (t + 1) * tile), out);
  });
}

}  // namespace

void CntkConfig::validate() const {
  if (layers < 1) throw Error(ErrorCode::InvalidArgument, "CNTK needs at least one layer");
  if (filter < 1 || filter % 2 == 0) {
    throw Error(ErrorCode::InvalidArgument, "CNTK filter size must be odd and >= 1");
  }
  if (!(leaky_slope >= 0.0 && leaky_slope <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "LeakyReLU slope must lie in [0, 1]");
  }
  if (tile_rows < 1) throw Error(ErrorCode::InvalidArgument, "tile_rows must be >= 1");
}

double dual_activation(double s11, double s12, double s22, double a) {
  return dual_act_impl(s11, s12, s22, a);
}
double dual_derivative(double s11, double s12, double s22, double a) {
  return dual_deriv_impl(s11, s12, s22, a);
}
float dual_activation(float s11, float s12, float s22, float a) {
  return dual_act_impl(s11, s12, s22, a);
}
float dual_derivative(float s11, float s12, float s22, float a) {
  return dual_deriv_impl(s11, s12, s22, a);
}

std::vector<PixelIndex> all_pixels(std::size_t grid_rows, std::size_t grid_cols) {
  std::vector<PixelIndex> out(grid_rows * grid_cols);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<PixelIndex>(i);
  return out;
}

CntkState sigma0(const PriorImage& prior) {
  const auto& A = prior.values;
  return sigma0(prior, all_pixels(A.rows(), A.cols()), all_pixels(A.rows(), A.cols()));
}

CntkState sigma0(const PriorImage& prior, std::vector<PixelIndex> rows,
                 std::vector<PixelIndex> cols) {
  const auto& A = prior.values;
  CntkState st;
  st.grid_rows = A.rows();
  st.grid_cols = A.cols();
  for (auto p : rows) {
    if (p >= A.size()) throw Error(ErrorCode::InvalidArgument, "row pixel outside grid");
  }
  for (auto p : cols) {
    if (p >= A.size()) throw Error(ErrorCode::InvalidArgument, "col pixel outside grid");
  }
  st.sigma.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      st.sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          A[rows[i]] * A[cols[j]];
    }
  }
  st.theta = st.sigma;
  st.diag.resize(A.size());
  for (std::size_t p = 0; p < A.size(); ++p) st.diag[p] = A[p] * A[p];
  st.rows = std::move(rows);
  st.cols = std::move(cols);
  return st;
}

CntkState cntk_layer(const CntkState& prev, double a, std::size_t q) {
  return cntk_layer(prev, a, q, prev.rows, prev.cols);
}

CntkState cntk_layer(const CntkState& prev, double a, std::size_t q,
                     std::vector<PixelIndex> out_rows, std::vector<PixelIndex> out_cols) {
  if (q < 1 || q % 2 == 0) throw Error(ErrorCode::InvalidArgument, "filter size must be odd");
  const std::size_t M = prev.grid_rows, N = prev.grid_cols, P = M * N;
  const auto row_pos = position_map(prev.rows, P);
  const auto col_pos = position_map(prev.cols, P);

  const auto nr = static_cast<Eigen::Index>(prev.rows.size());
  const auto nc = static_cast<Eigen::Index>(prev.cols.size());
  Eigen::MatrixXd kt(nr, nc), g(nr, nc);
  for (Eigen::Index i = 0; i < nr; ++i) {
    const double sii = prev.diag[prev.rows[static_cast<std::size_t>(i)]];
    for (Eigen::Index j = 0; j < nc; ++j) {
      const double sjj = prev.diag[prev.cols[static_cast<std::size_t>(j)]];
      const double s = prev.sigma(i, j);
      const double k = dual_activation(sii, s, sjj, a);
      kt(i, j) = k;
      g(i, j) = dual_derivative(sii, s, sjj, a) * prev.theta(i, j) + k;
    }
  }

  CntkState next;
  next.grid_rows = M;
  next.grid_cols = N;
  next.sigma.setZero(static_cast<Eigen::Index>(out_rows.size()),
                     static_cast<Eigen::Index>(out_cols.size()));
  next.theta.setZero(next.sigma.rows(), next.sigma.cols());
  const auto r = static_cast<std::ptrdiff_t>((q - 1) / 2);
  const double inv_q2 = 1.0 / static_cast<double>(q * q);
  const auto Mi = static_cast<std::ptrdiff_t>(M), Ni = static_cast<std::ptrdiff_t>(N);
  for (std::size_t i = 0; i < out_rows.size(); ++i) {
    const auto si = static_cast<std::ptrdiff_t>(out_rows[i]) / Ni;
    const auto sj = static_cast<std::ptrdiff_t>(out_rows[i]) % Ni;
    for (std::size_t j = 0; j < out_cols.size(); ++j) {
      const auto ti = static_cast<std::ptrdiff_t>(out_cols[j]) / Ni;
      const auto tj = static_cast<std::ptrdiff_t>(out_cols[j]) % Ni;
      double sa = 0.0, ta = 0.0;
      for (std::ptrdiff_t di = -r; di <= r; ++di) {
        for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
          const auto a_r = si + di, a_c = sj + dj, b_r = ti + di, b_c = tj + dj;
          if (a_r < 0 || a_r >= Mi || a_c < 0 || a_c >= Ni || b_r < 0 || b_r >= Mi ||
              b_c < 0 || b_c >= Ni) {
            continue;  // zero padding
          }
          const auto pi = row_pos[static_cast<std::size_t>(a_r * Ni + a_c)];
          const auto pj = col_pos[static_cast<std::size_t>(b_r * Ni + b_c)];
          if (pi < 0 || pj < 0) {
            throw Error(ErrorCode::DomainTooSmall,
                        "cntk_layer: neighbour pair of (" + std::to_string(out_rows[i]) +
                            ", " + std::to_string(out_cols[j]) + ") was not computed");
          }
          sa += kt(pi, pj);
          ta += g(pi, pj);
        }
      }
      next.sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sa * inv_q2;
      next.theta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ta * inv_q2;
    }
  }
  next.diag = diagonal_layer(prev.diag, M, N, a, q);
  next.rows = std::move(out_rows);
  next.cols = std::move(out_cols);
  return next;
}

std::vector<PixelIndex> dilate_pixels(std::span<const PixelIndex> pixels,
                                      std::size_t layers, std::size_t q,
                                      std::size_t grid_rows, std::size_t grid_cols) {
  const auto radius = static_cast<std::ptrdiff_t>(layers * ((q - 1) / 2));
  const auto Mi = static_cast<std::ptrdiff_t>(grid_rows);
  const auto Ni = static_cast<std::ptrdiff_t>(grid_cols);
  std::vector<std::uint8_t> in(grid_rows * grid_cols, 0);
  for (PixelIndex p : pixels) {
    if (p >= in.size()) throw Error(ErrorCode::InvalidArgument, "pixel outside grid");
    const auto pr = static_cast<std::ptrdiff_t>(p) / Ni;
    const auto pc = static_cast<std::ptrdiff_t>(p) % Ni;
    for (auto r = std::max<std::ptrdiff_t>(0, pr - radius); r <= std::min(Mi - 1, pr + radius); ++r) {
      for (auto c = std::max<std::ptrdiff_t>(0, pc - radius); c <= std::min(Ni - 1, pc + radius); ++c) {
        in[static_cast<std::size_t>(r * Ni + c)] = 1;
      }
    }
  }
  std::vector<PixelIndex> out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i]) out.push_back(static_cast<PixelIndex>(i));
  }
  return out;
}

KernelBlock compute_kernel(const PriorImage& prior, const CntkConfig& cfg,
                           std::span<const PixelIndex> rows,
                           std::span<const PixelIndex> cols) {
  cfg.validate();
  if (rows.empty() || cols.empty()) {
    throw Error(ErrorCode::InvalidArgument, "compute_kernel needs nonempty rows and cols");
  }
  const std::size_t P = prior.values.size();
  for (auto p : rows) {
    if (p >= P) throw Error(ErrorCode::InvalidArgument, "row pixel outside grid");
  }
  for (auto p : cols) {
    if (p >= P) throw Error(ErrorCode::InvalidArgument, "col pixel outside grid");
  }
  const std::size_t bytes = rows.size() * cols.size() * sizeof(double);
  if (bytes > cfg.max_block_bytes) {
    const std::size_t fit = cfg.max_block_bytes / (cols.size() * sizeof(double));
    throw Error(ErrorCode::OutOfMemory,
                "kernel block of " + std::to_string(rows.size()) + "x" +
                    std::to_string(cols.size()) + " needs " + std::to_string(bytes) +
                    " bytes (limit " + std::to_string(cfg.max_block_bytes) +
                    "); request at most " + std::to_string(fit) + " rows per tile");
  }
  KernelBlock block;
  block.rows.assign(rows.begin(), rows.end());
  block.cols.assign(cols.begin(), cols.end());
  block.entries.setZero(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(cols.size()));
  if (cfg.precision == Precision::F32) {
    run_engine<float>(prior, cfg, rows, cols, block.entries);
  } else {
    run_engine<double>(prior, cfg, rows, cols, block.entries);
  }
  return block;
}

}  // namespace expomap

// Reference implementations used only by the tests. They are written from
// first principles and deliberately share no code with the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <tuple>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// LeakyReLU as relu(u) - a * relu(-u); expectations via the arc-cosine
// kernel of order 1 and the orthant probabilities of a bivariate normal.
inline double arccos_relu(double s11, double s22, double rho) {
  rho = std::clamp(rho, -1.0, 1.0);
  const double th = std::acos(rho);
  return std::sqrt(s11 * s22) / (2 * std::numbers::pi) *
         (std::sin(th) + (std::numbers::pi - th) * std::cos(th));
}

inline double c_sigma(double a) { return 2.0 / (1.0 + a * a); }

inline double dual_act(double s11, double s12, double s22, double a) {
  if (s11 * s22 == 0.0) return 0.0;
  const double rho = s12 / std::sqrt(s11 * s22);
  const double same = arccos_relu(s11, s22, rho);   // E relu(u) relu(v) = E relu(-u) relu(-v)
  const double cross = arccos_relu(s11, s22, -rho); // E relu(u) relu(-v)
  return c_sigma(a) * ((1 + a * a) * same - 2 * a * cross);
}

inline double dual_deriv(double s11, double s12, double s22, double a) {
  double rho = 0.0;
  if (s11 * s22 != 0.0) rho = std::clamp(s12 / std::sqrt(s11 * s22), -1.0, 1.0);
  const double th = std::acos(rho);
  const double p_same = (std::numbers::pi - th) / (2 * std::numbers::pi);  // P(u>0, v>0)
  const double p_diff = th / (2 * std::numbers::pi);                       // P(u>0, v<0)
  return c_sigma(a) * (p_same * (1 + a * a) + 2 * a * p_diff);
}

struct McEstimate {
  double act_mean, act_se, der_mean, der_se;
};

inline McEstimate monte_carlo_dual(double s11, double s12, double s22, double a, std::size_t n,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  const double rho = s12 / std::sqrt(s11 * s22);
  const double c = c_sigma(a);
  auto act = [a](double x) { return x > 0 ? x : a * x; };
  auto der = [a](double x) { return x > 0 ? 1.0 : a; };
  double sa = 0, saa = 0, sd = 0, sdd = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z1 = z(rng), z2 = z(rng);
    const double u = std::sqrt(s11) * z1;
    const double v = std::sqrt(s22) * (rho * z1 + std::sqrt(std::max(0.0, 1 - rho * rho)) * z2);
    const double fa = c * act(u) * act(v);
    const double fd = c * der(u) * der(v);
    sa += fa;
    saa += fa * fa;
    sd += fd;
    sdd += fd * fd;
  }
  const double dn = static_cast<double>(n);
  const double ma = sa / dn, md = sd / dn;
  return {ma, std::sqrt(std::max(0.0, saa / dn - ma * ma) / dn), md,
          std::sqrt(std::max(0.0, sdd / dn - md * md) / dn)};
}

// Full pixel-pair recursion over an M x N image, every offset materialised.
// Returns Theta^L as an (MN) x (MN) matrix in flat pixel order.
inline Eigen::MatrixXd dense_cntk(const std::vector<double>& img, int M, int N, int L, int q,
                                  double a) {
  const int P = M * N;
  Eigen::MatrixXd sig(P, P), th(P, P);
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < P; ++j) sig(i, j) = th(i, j) = img[i] * img[j];
  const int r = (q - 1) / 2;
  for (int l = 0; l < L; ++l) {
    Eigen::MatrixXd kt(P, P), kd(P, P);
    for (int i = 0; i < P; ++i)
      for (int j = 0; j < P; ++j) {
        kt(i, j) = dual_act(sig(i, i), sig(i, j), sig(j, j), a);
        kd(i, j) = dual_deriv(sig(i, i), sig(i, j), sig(j, j), a);
      }
    Eigen::MatrixXd ns = Eigen::MatrixXd::Zero(P, P), nt = Eigen::MatrixXd::Zero(P, P);
    for (int i = 0; i < P; ++i) {
      const int ri = i / N, ci = i % N;
      for (int j = 0; j < P; ++j) {
        const int rj = j / N, cj = j % N;
        for (int dr = -r; dr <= r; ++dr)
          for (int dc = -r; dc <= r; ++dc) {
            const int a1 = ri + dr, b1 = ci + dc, a2 = rj + dr, b2 = cj + dc;
            if (a1 < 0 || a1 >= M || b1 < 0 || b1 >= N) continue;
            if (a2 < 0 || a2 >= M || b2 < 0 || b2 >= N) continue;
            const int u = a1 * N + b1, v = a2 * N + b2;
            ns(i, j) += kt(u, v);
            nt(i, j) += kd(u, v) * th(u, v) + kt(u, v);
          }
        ns(i, j) /= q * q;
        nt(i, j) /= q * q;
      }
    }
    sig = ns;
    th = nt;
  }
  return th;
}

// Inverse-distance weighting, one pixel at a time. Ties in distance are
// broken by flat index.
inline std::vector<double> idw(const std::vector<std::pair<int, double>>& obs, int M, int N,
                               int k, double power) {
  std::vector<double> out(M * N);
  for (int p = 0; p < M * N; ++p) {
    std::vector<std::tuple<double, int, double>> d;
    bool hit = false;
    for (auto [q, v] : obs) {
      const double dr = p / N - q / N, dc = p % N - q % N;
      const double dist2 = dr * dr + dc * dc;
      if (dist2 == 0) {
        out[p] = v;
        hit = true;
      }
      d.emplace_back(dist2, q, v);
    }
    if (hit) continue;
    std::sort(d.begin(), d.end());
    double num = 0, den = 0;
    for (int i = 0; i < std::min<int>(k, static_cast<int>(d.size())); ++i) {
      const double w = std::pow(std::sqrt(std::get<0>(d[i])), -power);
      num += w * std::get<2>(d[i]);
      den += w;
    }
    out[p] = num / den;
  }
  return out;
}

// Crossing-number point-in-polygon test over (x, y) vertices.
inline bool inside(const std::vector<std::pair<double, double>>& ring, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const auto [xi, yi] = ring[i];
    const auto [xj, yj] = ring[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

}  // namespace oracle

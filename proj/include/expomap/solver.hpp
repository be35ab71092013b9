#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "expomap/cntk.hpp"

namespace expomap {

// Kernel-expansion coefficients over the observed pixels (same order as the
// kernel block's columns).
struct SolveState {
  std::vector<PixelIndex> pixels;
  Eigen::VectorXd alpha;
  std::size_t iterations = 0;
  double final_residual = 0.0;         // ||K alpha - y|| / ||y||
  std::vector<double> residual_trace;  // EigenPro only: one entry per epoch
  double jitter_used = 0.0;            // exact solve only
};

struct Preconditioner {
  Eigen::VectorXd top_eigenvalues;  // descending, length s
  Eigen::MatrixXd eigenvectors;     // n x s, orthonormal columns
  double damping = 0.0;             // lambda_{s+1}
  double step_size = 0.0;           // eta

  std::size_t rank() const { return static_cast<std::size_t>(top_eigenvalues.size()); }
  // P v = v - sum_i (1 - damping / lambda_i) <e_i, v> e_i
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
};

struct ExactSolveOptions {
  // nullopt: 1e-6 * trace(K) / n.
  std::optional<double> jitter;
  std::size_t max_escalations = 3;
};

// Cholesky solve of (K + jitter I) alpha = y. On factorization failure the
// jitter is multiplied by 10 (starting from 1e-12 * trace / n when zero) up
// to max_escalations times before NotPositiveDefinite is thrown. The reported
// residual is against the unjittered K.
SolveState solve_exact(const KernelBlock& k_tt, const Eigen::VectorXd& y,
                       const ExactSolveOptions& options = {});

// Top-(s + 1) eigenpairs of K. Eigenvalues <= 1e-12 * lambda_1 are treated
// as absent directions. Requires s < n. Falls back to s = 0 if the
// eigensolver fails to converge.
Preconditioner build_preconditioner(const Eigen::MatrixXd& k_tt, std::size_t s = 10,
                                    double safety = 1.5);

struct EigenProOptions {
  std::size_t epochs = 350;
  double divergence_factor = 10.0;
};

// alpha_{t+1} = alpha_t - eta P (K alpha_t - y), alpha_0 = 0, full batch.
// Throws Divergence when the relative residual exceeds divergence_factor x
// its initial value.
SolveState eigenpro_solve(const KernelBlock& k_tt, const Eigen::VectorXd& y,
                          const Preconditioner& pre, const EigenProOptions& options = {});

// Upsilon''_i = sum_j alpha_j K_pt[i, j]. Throws IndexMismatch when the
// block's columns are not the state's pixels in the same order.
Eigen::VectorXd predict(const KernelBlock& k_pt, const SolveState& state);

double relative_residual(const Eigen::MatrixXd& k, const Eigen::VectorXd& alpha,
                         const Eigen::VectorXd& y);

}  // namespace expomap

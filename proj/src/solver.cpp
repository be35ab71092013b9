#include "expomap/solver.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace expomap {

namespace {

void require_square(const KernelBlock& k, Eigen::Index n) {
  if (k.entries.rows() != k.entries.cols() || k.entries.rows() != n) {
    throw Error(ErrorCode::ShapeMismatch,
                "kernel block must be n x n with n = |y| (got " +
                    std::to_string(k.entries.rows()) + "x" +
                    std::to_string(k.entries.cols()) + ", n = " + std::to_string(n) + ")");
  }
  if (k.rows != k.cols) {
    throw Error(ErrorCode::IndexMismatch,
                "training block rows and cols must be the same pixel sequence");
  }
}

}  // namespace

double relative_residual(const Eigen::MatrixXd& k, const Eigen::VectorXd& alpha,
                         const Eigen::VectorXd& y) {
  const double r = (k * alpha - y).norm();
  const double ny = y.norm();
  return ny > 0.0 ? r / ny : r;
}

Eigen::VectorXd Preconditioner::apply(const Eigen::VectorXd& v) const {
  Eigen::VectorXd out = v;
  for (Eigen::Index i = 0; i < top_eigenvalues.size(); ++i) {
    const auto e = eigenvectors.col(i);
    out -= (1.0 - damping / top_eigenvalues(i)) * e.dot(v) * e;
  }
  return out;
}

SolveState solve_exact(const KernelBlock& k_tt, const Eigen::VectorXd& y,
                       const ExactSolveOptions& options) {
  const Eigen::Index n = y.size();
  if (n == 0) throw Error(ErrorCode::EmptyInput, "solve_exact needs at least one target");
  require_square(k_tt, n);
  const Eigen::MatrixXd& K = k_tt.entries;
  const double mean_diag = K.trace() / static_cast<double>(n);
  double jitter = options.jitter.value_or(1e-6 * mean_diag);
  if (jitter < 0.0) throw Error(ErrorCode::InvalidArgument, "jitter must be >= 0");

  std::ostringstream tried;
  for (std::size_t attempt = 0; attempt <= options.max_escalations; ++attempt) {
    Eigen::MatrixXd Kj = K;
    Kj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(Kj);
    tried << (attempt ? ", " : "") << jitter;
    if (llt.info() == Eigen::Success) {
      SolveState st;
      st.pixels = k_tt.cols;
      st.alpha = llt.solve(y);
      st.iterations = 1;
      st.jitter_used = jitter;
      st.final_residual = relative_residual(K, st.alpha, y);
      if (std::isfinite(st.final_residual)) return st;
    }
    jitter = jitter > 0.0 ? jitter * 10.0 : 1e-12 * std::max(mean_diag, 1e-300);
  }
  throw Error(ErrorCode::NotPositiveDefinite,
              "Cholesky failed for n = " + std::to_string(n) + " with jitter " + tried.str() +
                  "; mean diagonal " + std::to_string(mean_diag));
}

Preconditioner build_preconditioner(const Eigen::MatrixXd& k_tt, std::size_t s,
                                    double safety) {
  const auto n = static_cast<std::size_t>(k_tt.rows());
  if (k_tt.rows() != k_tt.cols() || n == 0) {
    throw Error(ErrorCode::ShapeMismatch, "preconditioner needs a nonempty square kernel");
  }
  if (s >= n) {
    throw Error(ErrorCode::InvalidArgument,
                "preconditioner rank s = " + std::to_string(s) + " must be < n = " +
                    std::to_string(n));
  }
  if (!(safety > 0.0)) throw Error(ErrorCode::InvalidArgument, "safety must be > 0");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k_tt);
  Preconditioner pre;
  if (eig.info() != Eigen::Success) {
    // Plain gradient descent with a power-iteration step size.
    Eigen::VectorXd v = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
    double lambda = 0.0;
    for (int it = 0; it < 200; ++it) {
      Eigen::VectorXd w = k_tt * v;
      lambda = w.norm() / v.norm();
      v = w.normalized();
    }
    pre.damping = lambda;
    pre.step_size = safety / lambda;
    return pre;
  }
  // Eigen returns ascending order.
  const Eigen::VectorXd& vals = eig.eigenvalues();
  const auto idx = [&](std::size_t i) { return static_cast<Eigen::Index>(n - 1 - i); };
  const double lambda1 = vals(idx(0));
  if (!(lambda1 > 0.0)) {
    throw Error(ErrorCode::NotPositiveDefinite, "kernel has no positive eigenvalue");
  }
  const double floor = 1e-12 * lambda1;
  std::size_t kept = 0;
  while (kept < s && vals(idx(kept)) > floor) ++kept;
  // Damping is the first eigenvalue left undamped.
  double damping = vals(idx(s));
  if (kept < s) damping = std::max(vals(idx(kept)), floor);
  damping = std::max(damping, floor);

  pre.top_eigenvalues.resize(static_cast<Eigen::Index>(kept));
  pre.eigenvectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kept));
  for (std::size_t i = 0; i < kept; ++i) {
    pre.top_eigenvalues(static_cast<Eigen::Index>(i)) = vals(idx(i));
    pre.eigenvectors.col(static_cast<Eigen::Index>(i)) = eig.eigenvectors().col(idx(i));
  }
  pre.damping = damping;
  pre.step_size = safety / damping;
  return pre;
}

SolveState eigenpro_solve(const KernelBlock& k_tt, const Eigen::VectorXd& y,
                          const Preconditioner& pre, const EigenProOptions& options) {
  const Eigen::Index n = y.size();
  if (n == 0) throw Error(ErrorCode::EmptyInput, "eigenpro_solve needs at least one target");
  require_square(k_tt, n);
  if (pre.eigenvectors.size() > 0 && pre.eigenvectors.rows() != n) {
    throw Error(ErrorCode::ShapeMismatch, "preconditioner dimension does not match kernel");
  }
  const Eigen::MatrixXd& K = k_tt.entries;
  SolveState st;
  st.pixels = k_tt.cols;
  st.alpha = Eigen::VectorXd::Zero(n);
  const double ny = y.norm();
  const auto rel = [&](const Eigen::VectorXd& r) { return ny > 0.0 ? r.norm() / ny : r.norm(); };

  Eigen::VectorXd residual = K * st.alpha - y;
  const double initial = rel(residual);
  st.residual_trace.reserve(options.epochs);
  for (std::size_t t = 0; t < options.epochs; ++t) {
    st.alpha -= pre.step_size * pre.apply(residual);
    residual = K * st.alpha - y;
    const double r = rel(residual);
    st.residual_trace.push_back(r);
    st.iterations = t + 1;
    if (!std::isfinite(r) || r > options.divergence_factor * std::max(initial, 1e-300)) {
      std::ostringstream msg;
      msg << "EigenPro diverged at epoch " << t + 1 << ": residual " << r << " vs initial "
          << initial << "; trace:";
      for (double v : st.residual_trace) msg << ' ' << v;
      throw Error(ErrorCode::Divergence, msg.str());
    }
  }
  st.final_residual = rel(residual);
  return st;
}

Eigen::VectorXd predict(const KernelBlock& k_pt, const SolveState& state) {
  if (k_pt.cols != state.pixels ||
      k_pt.entries.cols() != state.alpha.size()) {
    throw Error(ErrorCode::IndexMismatch,
                "prediction block columns differ from the solve's observed pixels");
  }
  return k_pt.entries * state.alpha;
}

}  // namespace expomap

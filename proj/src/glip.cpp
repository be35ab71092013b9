#include "expomap/glip.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <string>

namespace expomap::glip {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr int kTaps = 9;

// (C * 9) x P patch matrix for a 3x3 zero-padded convolution.
RowMat im2col(const RowMat& x, std::size_t M, std::size_t N) {
  const auto C = x.rows();
  const auto Mi = static_cast<std::ptrdiff_t>(M), Ni = static_cast<std::ptrdiff_t>(N);
  RowMat cols = RowMat::Zero(C * kTaps, Mi * Ni);
  for (Eigen::Index c = 0; c < C; ++c) {
    const double* src = x.row(c).data();
    for (int tap = 0; tap < kTaps; ++tap) {
      const std::ptrdiff_t dr = tap / 3 - 1, dc = tap % 3 - 1;
      double* dst = cols.row(c * kTaps + tap).data();
      for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(0, -dr); i < std::min(Mi, Mi - dr); ++i) {
        const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dc);
        const std::ptrdiff_t j1 = std::min(Ni, Ni - dc);
        for (std::ptrdiff_t j = j0; j < j1; ++j) {
          dst[i * Ni + j] = src[(i + dr) * Ni + (j + dc)];
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col.
RowMat col2im(const RowMat& cols, std::size_t C, std::size_t M, std::size_t N) {
  const auto Mi = static_cast<std::ptrdiff_t>(M), Ni = static_cast<std::ptrdiff_t>(N);
  RowMat x = RowMat::Zero(static_cast<Eigen::Index>(C), Mi * Ni);
  for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(C); ++c) {
    double* dst = x.row(c).data();
    for (int tap = 0; tap < kTaps; ++tap) {
      const std::ptrdiff_t dr = tap / 3 - 1, dc = tap % 3 - 1;
      const double* src = cols.row(c * kTaps + tap).data();
      for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(0, -dr); i < std::min(Mi, Mi - dr); ++i) {
        const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dc);
        const std::ptrdiff_t j1 = std::min(Ni, Ni - dc);
        for (std::ptrdiff_t j = j0; j < j1; ++j) {
          dst[(i + dr) * Ni + (j + dc)] += src[i * Ni + j];
        }
      }
    }
  }
  return x;
}

struct ForwardCache {
  std::vector<RowMat> patches;  // input patches of each layer
  std::vector<RowMat> pre;      // pre-activations of each layer
};

RowMat to_row(const Grid<double>& g) {
  RowMat x(1, static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = g[i];
  return x;
}

RowMat run_forward(const GlipNet& net, const Grid<double>& input, ForwardCache* cache) {
  const std::size_t M = input.rows(), N = input.cols();
  RowMat x = to_row(input);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    if (static_cast<std::size_t>(x.rows()) != layer.in_channels) {
      throw Error(ErrorCode::ShapeMismatch, "GLIP layer channel chain is inconsistent");
    }
    RowMat cols = im2col(x, M, N);
    RowMat z = layer.weight * cols;
    z.colwise() += layer.bias;
    if (cache) {
      cache->patches.push_back(std::move(cols));
      cache->pre.push_back(z);
    }
    if (l + 1 < net.layers.size()) {
      const double a = net.leaky_slope;
      x = z.unaryExpr([a](double v) { return v > 0.0 ? v : a * v; });
    } else {
      x = std::move(z);
    }
  }
  return x;
}

void require_obs_shape(const Grid<double>& pred, const ObservationGrid& obs) {
  if (!pred.same_shape(obs.values) || !pred.same_shape(obs.mask)) {
    throw Error(ErrorCode::ShapeMismatch, "prediction and observation grids differ in shape");
  }
}

}  // namespace

std::size_t GlipNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

GlipNet init_net(std::uint64_t seed, const std::vector<std::size_t>& widths) {
  if (widths.size() < 2 || widths.front() != 1 || widths.back() != 1) {
    throw Error(ErrorCode::BadWidths, "GLIP widths must start and end at 1 with >= 2 entries");
  }
  for (auto w : widths) {
    if (w == 0) throw Error(ErrorCode::BadWidths, "GLIP widths must be positive");
  }
  GlipNet net;
  net.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    ConvLayer layer;
    layer.in_channels = widths[l];
    layer.out_channels = widths[l + 1];
    const double stddev = std::sqrt(2.0 / static_cast<double>(widths[l] * kTaps));
    std::normal_distribution<double> normal(0.0, stddev);
    layer.weight.resize(static_cast<Eigen::Index>(layer.out_channels),
                        static_cast<Eigen::Index>(layer.in_channels * kTaps));
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = normal(rng);
    }
    layer.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layer.out_channels));
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Grid<double> forward(const GlipNet& net, const Grid<double>& input) {
  const RowMat out = run_forward(net, input, nullptr);
  Grid<double> g(input.rows(), input.cols());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = out(0, static_cast<Eigen::Index>(i));
  return g;
}

double masked_loss(const Grid<double>& pred, const ObservationGrid& obs) {
  require_obs_shape(pred, obs);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!obs.mask[i]) continue;
    const double e = obs.values[i] - pred[i];
    sum += e * e;
    ++count;
  }
  if (count == 0) throw Error(ErrorCode::EmptyMask, "masked loss needs an observed pixel");
  return sum / static_cast<double>(count);
}

Gradients backward(const GlipNet& net, const Grid<double>& input,
                   const ObservationGrid& obs) {
  ForwardCache cache;
  const RowMat out = run_forward(net, input, &cache);
  Grid<double> pred(input.rows(), input.cols());
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = out(0, static_cast<Eigen::Index>(i));

  Gradients grads;
  grads.loss = masked_loss(pred, obs);
  const double inv_count = 1.0 / static_cast<double>(obs.observed_count());

  RowMat delta = RowMat::Zero(1, static_cast<Eigen::Index>(pred.size()));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (obs.mask[i]) {
      delta(0, static_cast<Eigen::Index>(i)) = 2.0 * (pred[i] - obs.values[i]) * inv_count;
    }
  }

  const std::size_t L = net.layers.size();
  grads.weight.resize(L);
  grads.bias.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = net.layers[l];
    grads.weight[l] = delta * cache.patches[l].transpose();
    grads.bias[l] = delta.rowwise().sum().transpose();
    if (l == 0) break;
    const RowMat dcols = layer.weight.transpose() * delta;
    RowMat dx = col2im(dcols, layer.in_channels, input.rows(), input.cols());
    const RowMat& z = cache.pre[l - 1];
    const double a = net.leaky_slope;
    delta = dx.cwiseProduct(z.unaryExpr([a](double v) { return v > 0.0 ? 1.0 : a; }));
  }
  return grads;
}

AdamState AdamState::for_net(const GlipNet& net, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& l : net.layers) {
    s.m_weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    s.v_weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    s.m_bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
    s.v_bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return s;
}

void adam_step(GlipNet& net, AdamState& state, const Gradients& grads) {
  if (grads.weight.size() != net.layers.size() || state.m_weight.size() != net.layers.size()) {
    throw Error(ErrorCode::ShapeMismatch, "Adam state / gradients do not match the network");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    param.array() -= state.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.eps);
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    update(net.layers[l].weight, state.m_weight[l], state.v_weight[l], grads.weight[l]);
    update(net.layers[l].bias, state.m_bias[l], state.v_bias[l], grads.bias[l]);
  }
}

TrainTrace train(GlipNet& net, const Grid<double>& input, const ObservationGrid& obs,
                 const TrainOptions& options) {
  TrainTrace trace;
  if (obs.observed_count() == 0) {
    throw Error(ErrorCode::EmptyMask, "GLIP training needs observed pixels");
  }
  AdamState adam = AdamState::for_net(net, options.lr);
  auto fail = [&](double loss) {
    std::ostringstream msg;
    msg << "GLIP loss became non-finite (" << loss << ") after " << trace.losses.size()
        << " epochs; trace:";
    for (double v : trace.losses) msg << ' ' << v;
    throw Error(ErrorCode::NonFiniteLoss, msg.str());
  };
  if (options.epochs == 0) {
    trace.initial_loss = masked_loss(forward(net, input), obs);
    return trace;
  }
  Gradients grads = backward(net, input, obs);
  trace.initial_loss = grads.loss;
  if (!std::isfinite(grads.loss)) fail(grads.loss);
  for (std::size_t e = 0; e < options.epochs; ++e) {
    adam_step(net, adam, grads);
    // The next epoch's forward pass also yields the post-update loss.
    double loss;
    if (e + 1 < options.epochs) {
      grads = backward(net, input, obs);
      loss = grads.loss;
    } else {
      loss = masked_loss(forward(net, input), obs);
    }
    if (!std::isfinite(loss)) fail(loss);
    trace.losses.push_back(loss);
  }
  return trace;
}

ExposureMap reconstruct(const GlipNet& net, const PriorImage& prior) {
  return ExposureMap::from_values(forward(net, prior.values), Units::Normalized);
}

}  // namespace expomap::glip

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "expomap/grid.hpp"
#include "expomap/prior.hpp"

namespace expomap::glip {

// 3x3 "same" convolution. Weight column layout: in_channel * 9 + tap, where
// tap = (dr + 1) * 3 + (dc + 1) for row/col offsets dr, dc in {-1, 0, 1}.
struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Eigen::MatrixXd weight;  // out x (in * 9)
  Eigen::VectorXd bias;    // out
};

struct GlipNet {
  std::vector<ConvLayer> layers;
  double leaky_slope = 0.1;  // applied after every layer but the last
  std::uint64_t seed = 0;

  std::size_t parameter_count() const;
};

// Weights ~ N(0, 2 / (in_channels * 9)), biases 0. widths must start and end
// at 1 and hold at least two entries (BadWidths otherwise).
GlipNet init_net(std::uint64_t seed,
                 const std::vector<std::size_t>& widths = {1, 16, 32, 32, 16, 1});

Grid<double> forward(const GlipNet& net, const Grid<double>& input);

// sum(mask * (obs - pred)^2) / count(mask). Throws EmptyMask / ShapeMismatch.
double masked_loss(const Grid<double>& pred, const ObservationGrid& obs);

struct Gradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
  double loss = 0.0;
};

// Reverse-mode gradient of masked_loss(forward(net, input), obs).
Gradients backward(const GlipNet& net, const Grid<double>& input,
                   const ObservationGrid& obs);

struct AdamState {
  std::vector<Eigen::MatrixXd> m_weight, v_weight;
  std::vector<Eigen::VectorXd> m_bias, v_bias;
  std::size_t t = 0;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_net(const GlipNet& net, double lr);
};

void adam_step(GlipNet& net, AdamState& state, const Gradients& grads);

struct TrainOptions {
  double lr = 0.01;
  std::size_t epochs = 150;
};

struct TrainTrace {
  double initial_loss = 0.0;   // before the first update
  std::vector<double> losses;  // loss after each epoch's update
};

// Exactly `epochs` forward/backward/Adam passes. Throws NonFiniteLoss
// (message carries the trace so far).
TrainTrace train(GlipNet& net, const Grid<double>& input, const ObservationGrid& obs,
                 const TrainOptions& options = {});

ExposureMap reconstruct(const GlipNet& net, const PriorImage& prior);

}  // namespace expomap::glip

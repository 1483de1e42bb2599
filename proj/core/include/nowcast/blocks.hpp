#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "nowcast/ops.hpp"
#include "nowcast/random.hpp"
#include "nowcast/tape.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast::nn {

/// Kaiming-uniform weights for ReLU networks: U(-b, b), b = sqrt(6 / fan_in).
template <Real T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// Total number of scalars over a parameter list.
template <Real T>
std::size_t count_scalars(const NamedTensors<T>& tensors) {
  std::size_t total = 0;
  for (const auto& [name, t] : tensors) total += t.numel();
  return total;
}

/// Trainable scalars of any block or model exposing parameters(prefix, out).
template <typename Module>
std::size_t param_count(const Module& m) {
  using T = typename Module::value_type;
  NamedTensors<T> params;
  m.parameters("", params);
  return count_scalars(params);
}

/// 1x1 convolution with bias.
template <Real T>
struct Pointwise {
  using value_type = T;
  Tensor<T> weight;  // [cout, cin, 1, 1]
  Tensor<T> bias;    // [1, cout, 1, 1]

  Pointwise() = default;
  Pointwise(std::size_t cin, std::size_t cout, Rng& rng);

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const;
  void parameters(const std::string& prefix, NamedTensors<T>& out) const;
};

/// Depthwise 3x3 (padding 1, no bias) followed by a pointwise 1x1 with bias.
template <Real T>
struct DscLayer {
  using value_type = T;
  Tensor<T> depthwise;       // [cin, 1, 3, 3]
  Tensor<T> pointwise;       // [cout, cin, 1, 1]
  Tensor<T> pointwise_bias;  // [1, cout, 1, 1]

  DscLayer() = default;
  DscLayer(std::size_t cin, std::size_t cout, Rng& rng);

  std::size_t in_channels() const { return depthwise.shape().n; }
  std::size_t out_channels() const { return pointwise.shape().n; }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const;
  void parameters(const std::string& prefix, NamedTensors<T>& out) const;
};

template <Real T>
struct BatchNorm2d {
  using value_type = T;
  Tensor<T> gamma;  // ones
  Tensor<T> beta;   // zeros
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool training) const;
  void parameters(const std::string& prefix, NamedTensors<T>& out) const;
  void buffers(const std::string& prefix, NamedTensors<T>& out) const;
};

struct DscBlockOptions {
  std::size_t in_channels = 1;
  std::size_t mid_channels = 1;  ///< output of the first DSC stage
  std::size_t out_channels = 1;
  bool residual = true;              ///< add the parallel 1x1 shortcut
  bool shortcut_batch_norm = false;  ///< batch norm on the shortcut path
};

/// Traced pieces of a block evaluation. For a plain (non-residual) block the
/// shortcut is undefined and output == dsc_path.
template <Real T>
struct BlockOutput {
  Tensor<T> output;
  Tensor<T> dsc_path;
  Tensor<T> shortcut;
};

/// Two DSC -> BatchNorm -> ReLU stages, summed with a 1x1 convolution of the
/// same input when residual. The sum is left linear.
template <Real T>
class ResidualDscBlock {
 public:
  using value_type = T;

  ResidualDscBlock() = default;
  ResidualDscBlock(const DscBlockOptions& options, Rng& rng);

  const DscBlockOptions& options() const { return options_; }
  bool residual() const { return options_.residual; }

  BlockOutput<T> forward(Tape<T>* tape, const Tensor<T>& x, bool training) const;
  void parameters(const std::string& prefix, NamedTensors<T>& out) const;
  void buffers(const std::string& prefix, NamedTensors<T>& out) const;

  DscLayer<T> dsc1;
  BatchNorm2d<T> bn1;
  DscLayer<T> dsc2;
  BatchNorm2d<T> bn2;
  std::optional<Pointwise<T>> shortcut;
  std::optional<BatchNorm2d<T>> shortcut_bn;

 private:
  DscBlockOptions options_;
};

struct CbamOptions {
  std::size_t channels = 1;
  std::size_t reduction = 16;
  std::size_t spatial_kernel = 7;
};

template <Real T>
struct CbamOutput {
  Tensor<T> output;
  Tensor<T> channel_attention;  // [n, c, 1, 1]
  Tensor<T> channel_gated;      // x * channel_attention
  Tensor<T> spatial_attention;  // [n, 1, h, w]
};

/// Convolutional block attention: channel gating by a shared two-layer
/// perceptron over spatial avg/max descriptors, then spatial gating by a
/// k x k convolution over the channel avg/max maps.
template <Real T>
class Cbam {
 public:
  using value_type = T;

  Cbam() = default;
  /// Throws ConfigError when channels is not divisible by reduction.
  Cbam(const CbamOptions& options, Rng& rng);

  const CbamOptions& options() const { return options_; }

  CbamOutput<T> forward(Tape<T>* tape, const Tensor<T>& x) const;
  void parameters(const std::string& prefix, NamedTensors<T>& out) const;

  Pointwise<T> mlp1;       // c -> c / r
  Pointwise<T> mlp2;       // c / r -> c
  Tensor<T> spatial;       // [1, 2, k, k], no bias

 private:
  CbamOptions options_;
};

}  // namespace nowcast::nn

#include "nowcast/blocks.hpp"

#include <cmath>
#include <vector>

namespace nowcast::nn {

template <Real T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<T> v(shape.numel());
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(shape, std::move(v), true);
}

template <Real T>
Pointwise<T>::Pointwise(std::size_t cin, std::size_t cout, Rng& rng)
    : weight(kaiming_uniform<T>({cout, cin, 1, 1}, cin, rng)),
      bias(Shape{1, cout, 1, 1}, true) {}

template <Real T>
Tensor<T> Pointwise<T>::forward(Tape<T>* tape, const Tensor<T>& x) const {
  return ops::conv2d(tape, x, weight, bias);
}

template <Real T>
void Pointwise<T>::parameters(const std::string& prefix, NamedTensors<T>& out) const {
  out.emplace_back(prefix + "weight", weight);
  out.emplace_back(prefix + "bias", bias);
}

template <Real T>
DscLayer<T>::DscLayer(std::size_t cin, std::size_t cout, Rng& rng)
    : depthwise(kaiming_uniform<T>({cin, 1, 3, 3}, 9, rng)),
      pointwise(kaiming_uniform<T>({cout, cin, 1, 1}, cin, rng)),
      pointwise_bias(Shape{1, cout, 1, 1}, true) {}

template <Real T>
Tensor<T> DscLayer<T>::forward(Tape<T>* tape, const Tensor<T>& x) const {
  if (x.shape().c != in_channels())
    throw DimensionError("DSC layer expects " + std::to_string(in_channels()) +
                         " input channels, got " + x.shape().str());
  auto h = ops::conv2d(tape, x, depthwise, Tensor<T>{},
                       {.stride = 1, .padding = 1, .groups = in_channels()});
  return ops::conv2d(tape, h, pointwise, pointwise_bias);
}

template <Real T>
void DscLayer<T>::parameters(const std::string& prefix, NamedTensors<T>& out) const {
  out.emplace_back(prefix + "depthwise", depthwise);
  out.emplace_back(prefix + "pointwise", pointwise);
  out.emplace_back(prefix + "bias", pointwise_bias);
}

template <Real T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels)
    : gamma(Tensor<T>::full({1, channels, 1, 1}, T(1), true)),
      beta(Shape{1, channels, 1, 1}, true),
      running_mean(Shape{1, channels, 1, 1}),
      running_var(Tensor<T>::full({1, channels, 1, 1}, T(1))) {}

template <Real T>
Tensor<T> BatchNorm2d<T>::forward(Tape<T>* tape, const Tensor<T>& x, bool training) const {
  return ops::batch_norm(tape, x, gamma, beta, running_mean, running_var,
                         {.mode = training ? ops::BatchNormMode::train : ops::BatchNormMode::eval,
                          .eps = eps,
                          .momentum = momentum});
}

template <Real T>
void BatchNorm2d<T>::parameters(const std::string& prefix, NamedTensors<T>& out) const {
  out.emplace_back(prefix + "gamma", gamma);
  out.emplace_back(prefix + "beta", beta);
}

template <Real T>
void BatchNorm2d<T>::buffers(const std::string& prefix, NamedTensors<T>& out) const {
  out.emplace_back(prefix + "running_mean", running_mean);
  out.emplace_back(prefix + "running_var", running_var);
}

template <Real T>
ResidualDscBlock<T>::ResidualDscBlock(const DscBlockOptions& options, Rng& rng)
    : dsc1(options.in_channels, options.mid_channels, rng),
      bn1(options.mid_channels),
      dsc2(options.mid_channels, options.out_channels, rng),
      bn2(options.out_channels),
      options_(options) {
  if (options.residual) {
    shortcut.emplace(options.in_channels, options.out_channels, rng);
    if (options.shortcut_batch_norm) shortcut_bn.emplace(options.out_channels);
  }
}

template <Real T>
BlockOutput<T> ResidualDscBlock<T>::forward(Tape<T>* tape, const Tensor<T>& x,
                                            bool training) const {
  BlockOutput<T> r;
  auto h = ops::relu(tape, bn1.forward(tape, dsc1.forward(tape, x), training));
  r.dsc_path = ops::relu(tape, bn2.forward(tape, dsc2.forward(tape, h), training));
  if (!shortcut) {
    r.output = r.dsc_path;
    return r;
  }
  r.shortcut = shortcut->forward(tape, x);
  if (shortcut_bn) r.shortcut = shortcut_bn->forward(tape, r.shortcut, training);
  r.output = ops::add(tape, r.dsc_path, r.shortcut);
  return r;
}

template <Real T>
void ResidualDscBlock<T>::parameters(const std::string& prefix, NamedTensors<T>& out) const {
  dsc1.parameters(prefix + "dsc1.", out);
  bn1.parameters(prefix + "bn1.", out);
  dsc2.parameters(prefix + "dsc2.", out);
  bn2.parameters(prefix + "bn2.", out);
  if (shortcut) shortcut->parameters(prefix + "shortcut.", out);
  if (shortcut_bn) shortcut_bn->parameters(prefix + "shortcut_bn.", out);
}

template <Real T>
void ResidualDscBlock<T>::buffers(const std::string& prefix, NamedTensors<T>& out) const {
  bn1.buffers(prefix + "bn1.", out);
  bn2.buffers(prefix + "bn2.", out);
  if (shortcut_bn) shortcut_bn->buffers(prefix + "shortcut_bn.", out);
}

template <Real T>
Cbam<T>::Cbam(const CbamOptions& options, Rng& rng) : options_(options) {
  if (options.reduction == 0 || options.channels % options.reduction != 0)
    throw ConfigError("CBAM: channels " + std::to_string(options.channels) +
                      " not divisible by reduction ratio " + std::to_string(options.reduction));
  if (options.spatial_kernel % 2 == 0)
    throw ConfigError("CBAM: spatial kernel must be odd, got " +
                      std::to_string(options.spatial_kernel));
  const std::size_t hidden = options.channels / options.reduction;
  mlp1 = Pointwise<T>(options.channels, hidden, rng);
  mlp2 = Pointwise<T>(hidden, options.channels, rng);
  const std::size_t k = options.spatial_kernel;
  spatial = kaiming_uniform<T>({1, 2, k, k}, 2 * k * k, rng);
}

template <Real T>
CbamOutput<T> Cbam<T>::forward(Tape<T>* tape, const Tensor<T>& x) const {
  using ops::PoolKind;
  using ops::PoolOver;
  if (x.shape().c != options_.channels)
    throw DimensionError("CBAM expects " + std::to_string(options_.channels) +
                         " channels, got " + x.shape().str());
  auto mlp = [&](const Tensor<T>& v) {
    return mlp2.forward(tape, ops::relu(tape, mlp1.forward(tape, v)));
  };
  CbamOutput<T> r;
  auto avg = ops::global_pool(tape, x, PoolKind::avg, PoolOver::space);
  auto mx = ops::global_pool(tape, x, PoolKind::max, PoolOver::space);
  r.channel_attention = ops::sigmoid(tape, ops::add(tape, mlp(avg), mlp(mx)));
  r.channel_gated = ops::mul_broadcast(tape, x, r.channel_attention);

  auto maps = ops::concat_channels(
      tape, ops::global_pool(tape, r.channel_gated, PoolKind::avg, PoolOver::channels),
      ops::global_pool(tape, r.channel_gated, PoolKind::max, PoolOver::channels));
  r.spatial_attention = ops::sigmoid(
      tape, ops::conv2d(tape, maps, spatial, Tensor<T>{},
                        {.stride = 1, .padding = options_.spatial_kernel / 2, .groups = 1}));
  r.output = ops::mul_broadcast(tape, r.channel_gated, r.spatial_attention);
  return r;
}

template <Real T>
void Cbam<T>::parameters(const std::string& prefix, NamedTensors<T>& out) const {
  mlp1.parameters(prefix + "mlp1.", out);
  mlp2.parameters(prefix + "mlp2.", out);
  out.emplace_back(prefix + "spatial.weight", spatial);
}

#define NOWCAST_INSTANTIATE_BLOCKS(T)                                     \
  template Tensor<T> kaiming_uniform<T>(Shape, std::size_t, Rng&);       \
  template struct Pointwise<T>;                                          \
  template struct DscLayer<T>;                                           \
  template struct BatchNorm2d<T>;                                        \
  template class ResidualDscBlock<T>;                                    \
  template class Cbam<T>;

NOWCAST_INSTANTIATE_BLOCKS(float)
NOWCAST_INSTANTIATE_BLOCKS(double)
#undef NOWCAST_INSTANTIATE_BLOCKS

}  // namespace nowcast::nn

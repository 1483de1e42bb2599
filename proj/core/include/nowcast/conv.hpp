#pragma once

#include <cstddef>
#include <span>

#include "nowcast/tensor.hpp"

namespace nowcast::kernels {

/// Resolved sizes of a grouped 2-d convolution. make() validates divisibility
/// and that the output size is a positive integer.
struct ConvGeometry {
  std::size_t n = 0, cin = 0, h = 0, w = 0;
  std::size_t cout = 0, kh = 0, kw = 0;
  std::size_t stride = 1, pad = 0, groups = 1;
  std::size_t oh = 0, ow = 0;

  static ConvGeometry make(const Shape& input, const Shape& weight, std::size_t stride,
                           std::size_t pad, std::size_t groups);

  std::size_t cin_per_group() const noexcept { return cin / groups; }
  std::size_t cout_per_group() const noexcept { return cout / groups; }
  Shape output_shape() const noexcept { return {n, cout, oh, ow}; }
};

enum class ConvAlgorithm {
  direct,     ///< nested loops, the reference path
  im2col,     ///< column buffer + matrix multiply
  shifted,    ///< stride 1 only: one vectorised row pass per kernel tap
  automatic,  ///< matrix multiply for 1x1 or strided kernels, shifted otherwise
};

// All kernels take NCHW buffers. Forward overwrites `out`; the backward
// kernels accumulate into their destination. An empty bias means no bias.

template <Real T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out,
                    ConvAlgorithm algo = ConvAlgorithm::automatic);

template <Real T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_input,
                           ConvAlgorithm algo = ConvAlgorithm::automatic);

template <Real T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> grad_out,
                            std::span<const T> input, std::span<T> grad_weight,
                            ConvAlgorithm algo = ConvAlgorithm::automatic);

template <Real T>
void conv2d_backward_bias(const ConvGeometry& g, std::span<const T> grad_out,
                          std::span<T> grad_bias);

}  // namespace nowcast::kernels

namespace nowcast {

/// Caps the worker threads used inside kernels (0 = runtime default).
/// Results are bit-identical for every thread count.
void set_num_threads(int threads);
int num_threads();
/// Applies NOWCAST_THREADS from the environment if set.
void configure_threads_from_env();

}  // namespace nowcast

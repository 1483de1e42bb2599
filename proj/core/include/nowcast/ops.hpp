#pragma once

#include <cstddef>

#include "nowcast/conv.hpp"
#include "nowcast/tape.hpp"
#include "nowcast/tensor.hpp"

/// Differentiable tensor operations.
///
/// Every op takes the tape first. Passing nullptr runs the op without
/// recording (inference); otherwise an entry is recorded whenever one of the
/// inputs is tracked by the tape.
namespace nowcast::ops {

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Grouped 2-d convolution with zero padding. `weight` is [cout, cin/groups,
/// kh, kw]; `bias` is [1, cout, 1, 1] or undefined for none.
template <Real T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, const Conv2dParams& params = {});

enum class BatchNormMode { train, eval };

struct BatchNormParams {
  BatchNormMode mode = BatchNormMode::train;
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Per-channel normalisation over (n, h, w). gamma, beta and the running
/// statistics are [1, c, 1, 1]. Train mode normalises with the biased batch
/// variance and updates the running buffers in place (running variance uses
/// the unbiased estimate); eval mode reads them.
template <Real T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T> running_mean, Tensor<T> running_var,
                     const BatchNormParams& params = {});

/// max(x, 0); the derivative at 0 is 0.
template <Real T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x);

template <Real T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x);

template <Real T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

/// a[n,c,h,w] times b broadcast from [n,c,1,1] or [n,1,h,w].
template <Real T>
Tensor<T> mul_broadcast(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <Real T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

/// Channels [begin, begin + count) of x.
template <Real T>
Tensor<T> slice_channels(Tape<T>* tape, const Tensor<T>& x, std::size_t begin, std::size_t count);

/// 2x2 window, stride 2. Ties route the gradient to the first element in
/// row-major order.
template <Real T>
Tensor<T> max_pool2(Tape<T>* tape, const Tensor<T>& x);

/// Doubles h and w by bilinear interpolation with half-pixel centres:
/// src = (dst + 0.5) / 2 - 0.5, clamped at 0, upper neighbour clamped to the edge.
template <Real T>
Tensor<T> upsample_bilinear2(Tape<T>* tape, const Tensor<T>& x);

enum class PoolKind { avg, max };
enum class PoolOver {
  space,     ///< reduce (h, w): [n,c,h,w] -> [n,c,1,1]
  channels,  ///< reduce c:      [n,c,h,w] -> [n,1,h,w]
};

template <Real T>
Tensor<T> global_pool(Tape<T>* tape, const Tensor<T>& x, PoolKind kind, PoolOver over);

/// Sum of all elements as a [1,1,1,1] tensor.
template <Real T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x);

/// Sum of x * mask, the mask being a constant (no gradient flows into it).
template <Real T>
Tensor<T> masked_sum(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& mask);

/// x * s for a constant scalar s.
template <Real T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T s);

/// Mean of squared differences as a [1,1,1,1] tensor; differentiable in both arguments.
template <Real T>
Tensor<T> mse(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& target);

/// Non-differentiable bilinear resize to (out_h, out_w) using the same
/// half-pixel convention as upsample_bilinear2.
template <Real T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

}  // namespace nowcast::ops

#include "nowcast/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace nowcast::ops {

namespace {

template <Real T>
bool should_record(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (!tape) return false;
  for (const auto* t : inputs)
    if (t->defined() && tape->tracks(*t)) return true;
  return false;
}

template <Real T>
bool wants(Tape<T>& tape, const Tensor<T>& t) {
  return t.defined() && tape.tracks(t);
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shapes " + a.str() + " and " + b.str() +
                         " must match");
}

template <Real T>
void require_channel_vector(const Tensor<T>& v, std::size_t c, const char* what) {
  if (!v.defined() || v.shape() != Shape{1, c, 1, 1})
    throw DimensionError(std::string(what) + " must be [1," + std::to_string(c) + ",1,1], got " +
                         (v.defined() ? v.shape().str() : std::string("undefined")));
}

struct Lerp {
  std::size_t i0, i1;
  double frac;
};

std::vector<Lerp> lerp_table(std::size_t in, std::size_t out) {
  std::vector<Lerp> t(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    const double src = std::max((static_cast<double>(d) + 0.5) * scale - 0.5, 0.0);
    const std::size_t i0 = std::min(static_cast<std::size_t>(src), in - 1);
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    t[d] = {i0, i1, src - static_cast<double>(i0)};
  }
  return t;
}

template <Real T>
std::vector<T> bilinear(const Shape& s, std::span<const T> x, const std::vector<Lerp>& ty,
                        const std::vector<Lerp>& tx) {
  const std::size_t oh = ty.size(), ow = tx.size();
  std::vector<T> out(s.n * s.c * oh * ow);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* src = x.data() + nc * s.h * s.w;
    T* dst = out.data() + nc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const T* r0 = src + ty[y].i0 * s.w;
      const T* r1 = src + ty[y].i1 * s.w;
      const T ly = static_cast<T>(ty[y].frac);
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const auto& l = tx[xx];
        const T lx = static_cast<T>(l.frac);
        // lerp form keeps constants exact
        const T top = r0[l.i0] + lx * (r0[l.i1] - r0[l.i0]);
        const T bot = r1[l.i0] + lx * (r1[l.i1] - r1[l.i0]);
        dst[y * ow + xx] = top + ly * (bot - top);
      }
    }
  }
  return out;
}

}  // namespace

template <Real T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, const Conv2dParams& params) {
  const auto g = kernels::ConvGeometry::make(x.shape(), weight.shape(), params.stride,
                                             params.padding, params.groups);
  if (bias.defined()) require_channel_vector(bias, g.cout, "conv2d bias");
  std::vector<T> out(g.output_shape().numel());
  kernels::conv2d_forward<T>(g, x.data(), weight.data(),
                             bias.defined() ? bias.data() : std::span<const T>{}, out);
  auto y = Tensor<T>::from_op(g.output_shape(), std::move(out));
  if (should_record(tape, {&x, &weight, &bias})) {
    tape->record("conv2d", {x, weight, bias}, y, [g, x, weight, bias, y](Tape<T>& tp) {
      auto gy = tp.grad(y);
      std::span<const T> dy(gy.data(), gy.size());
      if (wants(tp, x)) kernels::conv2d_backward_input<T>(g, dy, weight.data(), tp.grad(x));
      if (wants(tp, weight)) kernels::conv2d_backward_weight<T>(g, dy, x.data(), tp.grad(weight));
      if (wants(tp, bias)) kernels::conv2d_backward_bias<T>(g, dy, tp.grad(bias));
    });
  }
  return y;
}

template <Real T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T> running_mean, Tensor<T> running_var,
                     const BatchNormParams& params) {
  const Shape s = x.shape();
  require_channel_vector(gamma, s.c, "batch_norm gamma");
  require_channel_vector(beta, s.c, "batch_norm beta");
  require_channel_vector(running_mean, s.c, "batch_norm running_mean");
  require_channel_vector(running_var, s.c, "batch_norm running_var");
  const std::size_t count = s.n * s.h * s.w;
  const bool train = params.mode == BatchNormMode::train;
  if (train && count < 2)
    throw DimensionError("batch_norm in train mode needs n*h*w >= 2, got " + s.str());

  const std::size_t P = s.plane();
  std::vector<T> xhat(s.numel());
  std::vector<double> inv_std(s.c);
  auto xd = x.data();
  auto rm = running_mean.mutable_data();
  auto rv = running_var.mutable_data();
  for (std::size_t c = 0; c < s.c; ++c) {
    double mean, var;
    if (train) {
      double acc = 0;
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < P; ++p) acc += xd[(n * s.c + c) * P + p];
      mean = acc / static_cast<double>(count);
      double sq = 0;
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < P; ++p) {
          const double d = xd[(n * s.c + c) * P + p] - mean;
          sq += d * d;
        }
      var = sq / static_cast<double>(count);
      const double m = params.momentum;
      rm[c] = static_cast<T>((1 - m) * rm[c] + m * mean);
      rv[c] = static_cast<T>((1 - m) * rv[c] +
                             m * var * static_cast<double>(count) / static_cast<double>(count - 1));
    } else {
      mean = rm[c];
      var = rv[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + params.eps);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = (n * s.c + c) * P + p;
        xhat[i] = static_cast<T>((xd[i] - mean) * inv_std[c]);
      }
  }
  std::vector<T> out(s.numel());
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = (n * s.c + c) * P + p;
        out[i] = gd[c] * xhat[i] + bd[c];
      }
  auto y = Tensor<T>::from_op(s, std::move(out));
  if (should_record(tape, {&x, &gamma, &beta})) {
    tape->record(
        "batch_norm", {x, gamma, beta}, y,
        [s, x, gamma, beta, y, train, count, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Tape<T>& tp) {
          auto dy = tp.grad(y);
          const std::size_t P = s.plane();
          std::vector<double> sum_dy(s.c, 0.0), sum_dy_xhat(s.c, 0.0);
          for (std::size_t n = 0; n < s.n; ++n)
            for (std::size_t c = 0; c < s.c; ++c)
              for (std::size_t p = 0; p < P; ++p) {
                const std::size_t i = (n * s.c + c) * P + p;
                sum_dy[c] += dy[i];
                sum_dy_xhat[c] += static_cast<double>(dy[i]) * xhat[i];
              }
          if (wants(tp, gamma)) {
            auto gg = tp.grad(gamma);
            for (std::size_t c = 0; c < s.c; ++c) gg[c] += static_cast<T>(sum_dy_xhat[c]);
          }
          if (wants(tp, beta)) {
            auto gb = tp.grad(beta);
            for (std::size_t c = 0; c < s.c; ++c) gb[c] += static_cast<T>(sum_dy[c]);
          }
          if (!wants(tp, x)) return;
          auto gx = tp.grad(x);
          auto gd = gamma.data();
          const double N = static_cast<double>(count);
          for (std::size_t n = 0; n < s.n; ++n)
            for (std::size_t c = 0; c < s.c; ++c) {
              const double k = gd[c] * inv_std[c];
              for (std::size_t p = 0; p < P; ++p) {
                const std::size_t i = (n * s.c + c) * P + p;
                if (train)
                  gx[i] += static_cast<T>(k / N *
                                          (N * dy[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c]));
                else
                  gx[i] += static_cast<T>(k * dy[i]);
              }
            }
        });
  }
  return y;
}

template <Real T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  auto y = Tensor<T>::from_op(x.shape(), std::move(out));
  if (should_record(tape, {&x})) {
    tape->record("relu", {x}, y, [x, y](Tape<T>& tp) {
      auto dy = tp.grad(y);
      auto gx = tp.grad(x);
      auto xd = x.data();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xd[i] > T(0)) gx[i] += dy[i];
    });
  }
  return y;
}

template <Real T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xd[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  auto y = Tensor<T>::from_op(x.shape(), std::move(out));
  if (should_record(tape, {&x})) {
    tape->record("sigmoid", {x}, y, [x, y](Tape<T>& tp) {
      auto dy = tp.grad(y);
      auto gx = tp.grad(x);
      auto yd = y.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dy[i] * yd[i] * (T(1) - yd[i]);
    });
  }
  return y;
}

template <Real T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto y = Tensor<T>::from_op(a.shape(), std::move(out));
  if (should_record(tape, {&a, &b})) {
    tape->record("add", {a, b}, y, [a, b, y](Tape<T>& tp) {
      auto dy = tp.grad(y);
      for (const Tensor<T>* t : {&a, &b}) {
        if (!wants(tp, *t)) continue;
        auto g = tp.grad(*t);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
      }
    });
  }
  return y;
}

template <Real T>
Tensor<T> mul_broadcast(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape s = a.shape();
  const Shape bs = b.shape();
  const bool per_channel = bs == Shape{s.n, s.c, 1, 1};
  const bool per_pixel = bs == Shape{s.n, 1, s.h, s.w};
  if (!per_channel && !per_pixel)
    throw DimensionError("mul_broadcast: factor " + bs.str() + " does not broadcast to " +
                         s.str() + " (need [n,c,1,1] or [n,1,h,w])");
  const std::size_t P = s.plane();
  // index of the factor element for flat index i of a
  auto bidx = [s, P, per_channel](std::size_t i) {
    const std::size_t nc = i / P;
    return per_channel ? nc : (nc / s.c) * P + i % P;
  };
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[bidx(i)];
  auto y = Tensor<T>::from_op(s, std::move(out));
  if (should_record(tape, {&a, &b})) {
    tape->record("mul_broadcast", {a, b}, y, [a, b, y, bidx](Tape<T>& tp) {
      auto dy = tp.grad(y);
      auto ad = a.data();
      auto bd = b.data();
      if (wants(tp, a)) {
        auto ga = tp.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dy[i] * bd[bidx(i)];
      }
      if (wants(tp, b)) {
        auto gb = tp.grad(b);
        for (std::size_t i = 0; i < dy.size(); ++i) gb[bidx(i)] += dy[i] * ad[i];
      }
    });
  }
  return y;
}

template <Real T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw DimensionError("concat_channels: " + sa.str() + " and " + sb.str() +
                         " differ outside the channel axis");
  const Shape s{sa.n, sa.c + sb.c, sa.h, sa.w};
  const std::size_t la = sa.c * sa.plane(), lb = sb.c * sb.plane();
  std::vector<T> out(s.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(ad.begin() + n * la, la, out.begin() + n * (la + lb));
    std::copy_n(bd.begin() + n * lb, lb, out.begin() + n * (la + lb) + la);
  }
  auto y = Tensor<T>::from_op(s, std::move(out));
  if (should_record(tape, {&a, &b})) {
    tape->record("concat_channels", {a, b}, y, [a, b, y, la, lb, s](Tape<T>& tp) {
      auto dy = tp.grad(y);
      if (wants(tp, a)) {
        auto ga = tp.grad(a);
        for (std::size_t n = 0; n < s.n; ++n)
          for (std::size_t i = 0; i < la; ++i) ga[n * la + i] += dy[n * (la + lb) + i];
      }
      if (wants(tp, b)) {
        auto gb = tp.grad(b);
        for (std::size_t n = 0; n < s.n; ++n)
          for (std::size_t i = 0; i < lb; ++i) gb[n * lb + i] += dy[n * (la + lb) + la + i];
      }
    });
  }
  return y;
}

template <Real T>
Tensor<T> slice_channels(Tape<T>* tape, const Tensor<T>& x, std::size_t begin, std::size_t count) {
  const Shape sx = x.shape();
  if (count == 0 || begin + count > sx.c)
    throw DimensionError("slice_channels: [" + std::to_string(begin) + "," +
                         std::to_string(begin + count) + ") outside " + sx.str());
  const Shape s{sx.n, count, sx.h, sx.w};
  const std::size_t P = sx.plane();
  std::vector<T> out(s.numel());
  auto xd = x.data();
  for (std::size_t n = 0; n < s.n; ++n)
    std::copy_n(xd.begin() + (n * sx.c + begin) * P, count * P, out.begin() + n * count * P);
  auto y = Tensor<T>::from_op(s, std::move(out));
  if (should_record(tape, {&x})) {
    tape->record("slice_channels", {x}, y, [x, y, sx, begin, count, P](Tape<T>& tp) {
      auto dy = tp.grad(y);
      auto gx = tp.grad(x);
      for (std::size_t n = 0; n < sx.n; ++n)
        for (std::size_t i = 0; i < count * P; ++i)
          gx[(n * sx.c + begin) * P + i] += dy[n * count * P + i];
    });
  }
  return y;
}

template <Real T>
Tensor<T> max_pool2(Tape<T>* tape, const Tensor<T>& x) {
  const Shape sx = x.shape();
  if (sx.h % 2 != 0 || sx.w % 2 != 0)
    throw DimensionError("max_pool2 needs even height and width, got " + sx.str());
  const Shape s{sx.n, sx.c, sx.h / 2, sx.w / 2};
  std::vector<T> out(s.numel());
  std::vector<std::size_t> arg(s.numel());
  auto xd = x.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t xx = 0; xx < s.w; ++xx) {
        const std::size_t base = nc * sx.plane() + (2 * y) * sx.w + 2 * xx;
        std::size_t best = base;
        for (std::size_t idx : {base + 1, base + sx.w, base + sx.w + 1})
          if (xd[idx] > xd[best]) best = idx;  // strict: first index wins ties
        const std::size_t o = nc * s.plane() + y * s.w + xx;
        out[o] = xd[best];
        arg[o] = best;
      }
  auto y = Tensor<T>::from_op(s, std::move(out));
  if (should_record(tape, {&x})) {
    tape->record("max_pool2", {x}, y, [x, y, arg = std::move(arg)](Tape<T>& tp) {
      auto dy = tp.grad(y);
      auto gx = tp.grad(x);
      for (std::size_t o = 0; o < dy.size(); ++o) gx[arg[o]] += dy[o];
    });
  }
  return y;
}

template <Real T>
Tensor<T> upsample_bilinear2(Tape<T>* tape, const Tensor<T>& x) {
  const Shape sx = x.shape();
  const Shape s{sx.n, sx.c, 2 * sx.h, 2 * sx.w};
  auto ty = lerp_table(sx.h, s.h);
  auto tx = lerp_table(sx.w, s.w);
  auto y = Tensor<T>::from_op(s, bilinear<T>(sx, x.data(), ty, tx));
  if (should_record(tape, {&x})) {
    tape->record("upsample_bilinear2", {x}, y,
                 [x, y, sx, s, ty = std::move(ty), tx = std::move(tx)](Tape<T>& tp) {
                   auto dy = tp.grad(y);
                   auto gx = tp.grad(x);
                   for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
                     T* g = gx.data() + nc * sx.plane();
                     const T* d = dy.data() + nc * s.plane();
                     for (std::size_t yy = 0; yy < s.h; ++yy) {
                       const T ly = static_cast<T>(ty[yy].frac);
                       T* g0 = g + ty[yy].i0 * sx.w;
                       T* g1 = g + ty[yy].i1 * sx.w;
                       for (std::size_t xx = 0; xx < s.w; ++xx) {
                         const T lx = static_cast<T>(tx[xx].frac);
                         const T v = d[yy * s.w + xx];
                         g0[tx[xx].i0] += v * (T(1) - ly) * (T(1) - lx);
                         g0[tx[xx].i1] += v * (T(1) - ly) * lx;
                         g1[tx[xx].i0] += v * ly * (T(1) - lx);
                         g1[tx[xx].i1] += v * ly * lx;
                       }
                     }
                   }
                 });
  }
  return y;
}

template <Real T>
Tensor<T> global_pool(Tape<T>* tape, const Tensor<T>& x, PoolKind kind, PoolOver over) {
  const Shape sx = x.shape();
  const std::size_t P = sx.plane();
  const Shape s = over == PoolOver::space ? Shape{sx.n, sx.c, 1, 1} : Shape{sx.n, 1, sx.h, sx.w};
  // For output element o, the k-th pooled input index.
  const std::size_t pool_len = over == PoolOver::space ? P : sx.c;
  auto member = [sx, P, over](std::size_t o, std::size_t k) {
    if (over == PoolOver::space) return o * P + k;
    const std::size_t n = o / P, p = o % P;
    return (n * sx.c + k) * P + p;
  };
  auto xd = x.data();
  std::vector<T> out(s.numel());
  std::vector<std::size_t> arg(kind == PoolKind::max ? s.numel() : 0);
  for (std::size_t o = 0; o < s.numel(); ++o) {
    if (kind == PoolKind::avg) {
      double acc = 0;
      for (std::size_t k = 0; k < pool_len; ++k) acc += xd[member(o, k)];
      out[o] = static_cast<T>(acc / static_cast<double>(pool_len));
    } else {
      std::size_t best = member(o, 0);
      for (std::size_t k = 1; k < pool_len; ++k)
        if (xd[member(o, k)] > xd[best]) best = member(o, k);
      out[o] = xd[best];
      arg[o] = best;
    }
  }
  auto y = Tensor<T>::from_op(s, std::move(out));
  if (should_record(tape, {&x})) {
    tape->record("global_pool", {x}, y,
                 [x, y, kind, pool_len, member, arg = std::move(arg)](Tape<T>& tp) {
                   auto dy = tp.grad(y);
                   auto gx = tp.grad(x);
                   for (std::size_t o = 0; o < dy.size(); ++o) {
                     if (kind == PoolKind::max) {
                       gx[arg[o]] += dy[o];
                     } else {
                       const T share = dy[o] / static_cast<T>(pool_len);
                       for (std::size_t k = 0; k < pool_len; ++k) gx[member(o, k)] += share;
                     }
                   }
                 });
  }
  return y;
}

template <Real T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.data()) acc += v;
  auto y = Tensor<T>::from_op({1, 1, 1, 1}, {static_cast<T>(acc)});
  if (should_record(tape, {&x})) {
    tape->record("sum", {x}, y, [x, y](Tape<T>& tp) {
      const T d = tp.grad(y)[0];
      for (auto& g : tp.grad(x)) g += d;
    });
  }
  return y;
}

template <Real T>
Tensor<T> masked_sum(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& mask) {
  require_same(x.shape(), mask.shape(), "masked_sum");
  double acc = 0;
  auto xd = x.data();
  auto md = mask.data();
  for (std::size_t i = 0; i < xd.size(); ++i) acc += static_cast<double>(xd[i]) * md[i];
  auto y = Tensor<T>::from_op({1, 1, 1, 1}, {static_cast<T>(acc)});
  if (should_record(tape, {&x})) {
    tape->record("masked_sum", {x}, y, [x, mask, y](Tape<T>& tp) {
      const T d = tp.grad(y)[0];
      auto gx = tp.grad(x);
      auto md = mask.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += d * md[i];
    });
  }
  return y;
}

template <Real T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T s) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * s;
  auto y = Tensor<T>::from_op(x.shape(), std::move(out));
  if (should_record(tape, {&x})) {
    tape->record("scale", {x}, y, [x, y, s](Tape<T>& tp) {
      auto dy = tp.grad(y);
      auto gx = tp.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dy[i] * s;
    });
  }
  return y;
}

template <Real T>
Tensor<T> mse(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& target) {
  require_same(pred.shape(), target.shape(), "mse");
  auto pd = pred.data();
  auto td = target.data();
  double acc = 0;
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double d = static_cast<double>(pd[i]) - td[i];
    acc += d * d;
  }
  const double count = static_cast<double>(pd.size());
  auto y = Tensor<T>::from_op({1, 1, 1, 1}, {static_cast<T>(acc / count)});
  if (should_record(tape, {&pred, &target})) {
    tape->record("mse", {pred, target}, y, [pred, target, y, count](Tape<T>& tp) {
      const double k = 2.0 * tp.grad(y)[0] / count;
      auto pd = pred.data();
      auto td = target.data();
      if (wants(tp, pred)) {
        auto g = tp.grad(pred);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<T>(k * (pd[i] - td[i]));
      }
      if (wants(tp, target)) {
        auto g = tp.grad(target);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= static_cast<T>(k * (pd[i] - td[i]));
      }
    });
  }
  return y;
}

template <Real T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  const Shape sx = x.shape();
  return Tensor<T>::from_op({sx.n, sx.c, out_h, out_w},
                            bilinear<T>(sx, x.data(), lerp_table(sx.h, out_h),
                                        lerp_table(sx.w, out_w)));
}

#define NOWCAST_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> conv2d<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                               const Conv2dParams&);                                           \
  template Tensor<T> batch_norm<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&,               \
                                   const Tensor<T>&, Tensor<T>, Tensor<T>,                     \
                                   const BatchNormParams&);                                    \
  template Tensor<T> relu<T>(Tape<T>*, const Tensor<T>&);                                      \
  template Tensor<T> sigmoid<T>(Tape<T>*, const Tensor<T>&);                                   \
  template Tensor<T> add<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> mul_broadcast<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> concat_channels<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> slice_channels<T>(Tape<T>*, const Tensor<T>&, std::size_t, std::size_t);  \
  template Tensor<T> max_pool2<T>(Tape<T>*, const Tensor<T>&);                                 \
  template Tensor<T> upsample_bilinear2<T>(Tape<T>*, const Tensor<T>&);                        \
  template Tensor<T> global_pool<T>(Tape<T>*, const Tensor<T>&, PoolKind, PoolOver);           \
  template Tensor<T> sum<T>(Tape<T>*, const Tensor<T>&);                                       \
  template Tensor<T> masked_sum<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> scale<T>(Tape<T>*, const Tensor<T>&, T);                                  \
  template Tensor<T> mse<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> resize_bilinear<T>(const Tensor<T>&, std::size_t, std::size_t);

NOWCAST_INSTANTIATE_OPS(float)
NOWCAST_INSTANTIATE_OPS(double)
#undef NOWCAST_INSTANTIATE_OPS

}  // namespace nowcast::ops

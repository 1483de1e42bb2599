#include "nowcast/conv.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nowcast::kernels {

ConvGeometry ConvGeometry::make(const Shape& input, const Shape& weight, std::size_t stride,
                                std::size_t pad, std::size_t groups) {
  if (groups == 0 || stride == 0)
    throw ConfigError("conv2d: stride and groups must be >= 1");
  if (input.c % groups != 0 || weight.n % groups != 0)
    throw DimensionError("conv2d: cin=" + std::to_string(input.c) + " and cout=" +
                         std::to_string(weight.n) + " must be divisible by groups=" +
                         std::to_string(groups));
  if (weight.c != input.c / groups)
    throw DimensionError("conv2d: weight " + weight.str() + " expects " +
                         std::to_string(weight.c) + " channels per group, input " + input.str() +
                         " provides " + std::to_string(input.c / groups));
  const std::size_t ph = input.h + 2 * pad;
  const std::size_t pw = input.w + 2 * pad;
  if (ph < weight.h || pw < weight.w)
    throw DimensionError("conv2d: kernel " + weight.str() + " larger than padded input " +
                         input.str());
  if ((ph - weight.h) % stride != 0 || (pw - weight.w) % stride != 0)
    throw ConfigError("conv2d: output size is not integral for input " + input.str() +
                      ", kernel " + std::to_string(weight.h) + "x" + std::to_string(weight.w) +
                      ", stride " + std::to_string(stride) + ", padding " + std::to_string(pad));
  ConvGeometry g;
  g.n = input.n;
  g.cin = input.c;
  g.h = input.h;
  g.w = input.w;
  g.cout = weight.n;
  g.kh = weight.h;
  g.kw = weight.w;
  g.stride = stride;
  g.pad = pad;
  g.groups = groups;
  g.oh = (ph - weight.h) / stride + 1;
  g.ow = (pw - weight.w) / stride + 1;
  return g;
}

namespace {

// Row-major GEMM variants. Each output row is produced by exactly one thread
// with a fixed summation order, so results do not depend on the thread count.
// Index types are signed for OpenMP.

// C[M,N] += A[M,K] * B[K,N]
template <Real T>
void gemm_nn(long M, long N, long K, const T* A, const T* B, T* C) {
#pragma omp parallel for schedule(static) if (M * N * K > 32768)
  for (long i = 0; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (long k = 0; k < K; ++k) {
      const T av = a[k];
      if (av == T(0)) continue;
      const T* b = B + k * N;
      for (long j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <Real T>
void gemm_nt(long M, long N, long K, const T* A, const T* B, T* C) {
#pragma omp parallel for schedule(static) if (M * N * K > 32768)
  for (long i = 0; i < M; ++i) {
    const T* a = A + i * K;
    for (long j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T acc = 0;
      for (long k = 0; k < K; ++k) acc += a[k] * b[k];
      C[i * N + j] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <Real T>
void gemm_tn(long M, long N, long K, const T* A, const T* B, T* C) {
#pragma omp parallel for schedule(static) if (M * N * K > 32768)
  for (long i = 0; i < M; ++i) {
    T* c = C + i * N;
    for (long k = 0; k < K; ++k) {
      const T av = A[k * M + i];
      if (av == T(0)) continue;
      const T* b = B + k * N;
      for (long j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

// Fills col[(ci,ky,kx), (oy,ox)] for one sample and one group.
template <Real T>
void im2col(const ConvGeometry& g, const T* in, T* col) {
  const std::size_t cg = g.cin_per_group();
  const std::size_t P = g.oh * g.ow;
  for (std::size_t ci = 0; ci < cg; ++ci) {
    const T* plane = in + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

// Scatter-adds col back into the input-gradient planes of one sample/group.
template <Real T>
void col2im(const ConvGeometry& g, const T* col, T* in) {
  const std::size_t cg = g.cin_per_group();
  const std::size_t P = g.oh * g.ow;
  for (std::size_t ci = 0; ci < cg; ++ci) {
    T* plane = in + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const T* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <Real T>
void forward_direct(const ConvGeometry& g, const T* in, const T* w, const T* bias, T* out) {
  const std::size_t cg = g.cin_per_group();
  const std::size_t og = g.cout_per_group();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t o = 0; o < g.cout; ++o) {
      const std::size_t grp = o / og;
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          T acc = bias ? bias[o] : T(0);
          for (std::size_t ci = 0; ci < cg; ++ci) {
            const std::size_t c = grp * cg + ci;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
              if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                acc += w[((o * cg + ci) * g.kh + ky) * g.kw + kx] *
                       in[((n * g.cin + c) * g.h + iy) * g.w + ix];
              }
            }
          }
          out[((n * g.cout + o) * g.oh + oy) * g.ow + ox] = acc;
        }
    }
}

template <Real T>
void backward_direct(const ConvGeometry& g, const T* gy, const T* in, const T* w, T* gx, T* gw) {
  const std::size_t cg = g.cin_per_group();
  const std::size_t og = g.cout_per_group();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t o = 0; o < g.cout; ++o) {
      const std::size_t grp = o / og;
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          const T d = gy[((n * g.cout + o) * g.oh + oy) * g.ow + ox];
          for (std::size_t ci = 0; ci < cg; ++ci) {
            const std::size_t c = grp * cg + ci;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
              if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                const std::size_t wi = ((o * cg + ci) * g.kh + ky) * g.kw + kx;
                const std::size_t xi = ((n * g.cin + c) * g.h + iy) * g.w + ix;
                if (gx) gx[xi] += w[wi] * d;
                if (gw) gw[wi] += in[xi] * d;
              }
            }
          }
        }
    }
}

// Valid output range [lo, hi) along one axis for kernel tap k (stride 1).
struct TapRange {
  std::size_t lo, hi;
};

TapRange tap_range(std::size_t k, std::size_t pad, std::size_t in, std::size_t out) {
  const long lo = std::max<long>(0, static_cast<long>(pad) - static_cast<long>(k));
  const long hi = std::min<long>(static_cast<long>(out),
                                 static_cast<long>(in + pad) - static_cast<long>(k));
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <Real T>
void forward_shifted(const ConvGeometry& g, const T* in, const T* w, const T* bias, T* out) {
  const std::size_t cg = g.cin_per_group(), og = g.cout_per_group();
  const std::size_t P = g.oh * g.ow, HW = g.h * g.w;
  const long planes = static_cast<long>(g.n * g.cout);
#pragma omp parallel for schedule(static) if (planes * static_cast<long>(P) > 16384)
  for (long idx = 0; idx < planes; ++idx) {
    const std::size_t n = static_cast<std::size_t>(idx) / g.cout;
    const std::size_t o = static_cast<std::size_t>(idx) % g.cout;
    T* op = out + static_cast<std::size_t>(idx) * P;
    std::fill(op, op + P, bias ? bias[o] : T(0));
    const std::size_t grp = o / og;
    for (std::size_t ci = 0; ci < cg; ++ci) {
      const T* ip = in + (n * g.cin + grp * cg + ci) * HW;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const TapRange ry = tap_range(ky, g.pad, g.h, g.oh);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const TapRange rx = tap_range(kx, g.pad, g.w, g.ow);
          const T wv = w[((o * cg + ci) * g.kh + ky) * g.kw + kx];
          const std::size_t len = rx.hi - rx.lo;
          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            const T* src = ip + (oy + ky - g.pad) * g.w + (rx.lo + kx - g.pad);
            T* dst = op + oy * g.ow + rx.lo;
            for (std::size_t j = 0; j < len; ++j) dst[j] += wv * src[j];
          }
        }
      }
    }
  }
}

template <Real T>
void backward_input_shifted(const ConvGeometry& g, const T* gy, const T* w, T* gx) {
  const std::size_t cg = g.cin_per_group(), og = g.cout_per_group();
  const std::size_t P = g.oh * g.ow, HW = g.h * g.w;
  const long planes = static_cast<long>(g.n * g.cin);
#pragma omp parallel for schedule(static) if (planes * static_cast<long>(HW) > 16384)
  for (long idx = 0; idx < planes; ++idx) {
    const std::size_t n = static_cast<std::size_t>(idx) / g.cin;
    const std::size_t c = static_cast<std::size_t>(idx) % g.cin;
    const std::size_t grp = c / cg, ci = c % cg;
    T* xp = gx + static_cast<std::size_t>(idx) * HW;
    for (std::size_t oc = 0; oc < og; ++oc) {
      const std::size_t o = grp * og + oc;
      const T* yp = gy + (n * g.cout + o) * P;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const TapRange ry = tap_range(ky, g.pad, g.h, g.oh);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const TapRange rx = tap_range(kx, g.pad, g.w, g.ow);
          const T wv = w[((o * cg + ci) * g.kh + ky) * g.kw + kx];
          const std::size_t len = rx.hi - rx.lo;
          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            T* dst = xp + (oy + ky - g.pad) * g.w + (rx.lo + kx - g.pad);
            const T* src = yp + oy * g.ow + rx.lo;
            for (std::size_t j = 0; j < len; ++j) dst[j] += wv * src[j];
          }
        }
      }
    }
  }
}

template <Real T>
void backward_weight_shifted(const ConvGeometry& g, const T* gy, const T* in, T* gw) {
  const std::size_t cg = g.cin_per_group(), og = g.cout_per_group();
  const std::size_t P = g.oh * g.ow, HW = g.h * g.w;
  const long outs = static_cast<long>(g.cout);
#pragma omp parallel for schedule(static) if (outs * static_cast<long>(g.n * P) > 16384)
  for (long ol = 0; ol < outs; ++ol) {
    const std::size_t o = static_cast<std::size_t>(ol);
    const std::size_t grp = o / og;
    for (std::size_t ci = 0; ci < cg; ++ci)
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const TapRange ry = tap_range(ky, g.pad, g.h, g.oh);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const TapRange rx = tap_range(kx, g.pad, g.w, g.ow);
          const std::size_t len = rx.hi - rx.lo;
          T acc = 0;
          for (std::size_t n = 0; n < g.n; ++n) {
            const T* ip = in + (n * g.cin + grp * cg + ci) * HW;
            const T* yp = gy + (n * g.cout + o) * P;
            for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
              const T* a = yp + oy * g.ow + rx.lo;
              const T* b = ip + (oy + ky - g.pad) * g.w + (rx.lo + kx - g.pad);
              T row = 0;
              for (std::size_t j = 0; j < len; ++j) row += a[j] * b[j];
              acc += row;
            }
          }
          gw[((o * cg + ci) * g.kh + ky) * g.kw + kx] += acc;
        }
      }
  }
}

ConvAlgorithm resolve(const ConvGeometry& g, ConvAlgorithm algo) {
  if (algo == ConvAlgorithm::shifted && g.stride != 1)
    throw ConfigError("conv2d: the shifted algorithm needs stride 1");
  if (algo != ConvAlgorithm::automatic) return algo;
  return is_pointwise(g) || g.stride != 1 ? ConvAlgorithm::im2col : ConvAlgorithm::shifted;
}

void check_sizes(const ConvGeometry& g, std::size_t in, std::size_t w, std::size_t out) {
  if (in != g.n * g.cin * g.h * g.w || w != g.cout * g.cin_per_group() * g.kh * g.kw ||
      out != g.n * g.cout * g.oh * g.ow)
    throw DimensionError("conv2d kernel: buffer sizes do not match geometry");
}

}  // namespace

template <Real T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out, ConvAlgorithm algo) {
  check_sizes(g, input.size(), weight.size(), out.size());
  if (!bias.empty() && bias.size() != g.cout)
    throw DimensionError("conv2d: bias length " + std::to_string(bias.size()) + " != cout " +
                         std::to_string(g.cout));
  const T* b = bias.empty() ? nullptr : bias.data();
  algo = resolve(g, algo);
  if (algo == ConvAlgorithm::direct) {
    forward_direct(g, input.data(), weight.data(), b, out.data());
    return;
  }
  if (algo == ConvAlgorithm::shifted) {
    forward_shifted(g, input.data(), weight.data(), b, out.data());
    return;
  }
  const std::size_t cg = g.cin_per_group(), og = g.cout_per_group();
  const std::size_t K = cg * g.kh * g.kw, P = g.oh * g.ow;
  std::vector<T> col(is_pointwise(g) ? 0 : K * P);
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const T* in = input.data() + (n * g.cin + grp * cg) * g.h * g.w;
      T* o = out.data() + (n * g.cout + grp * og) * P;
      for (std::size_t oc = 0; oc < og; ++oc)
        std::fill(o + oc * P, o + (oc + 1) * P, b ? b[grp * og + oc] : T(0));
      const T* B = in;
      if (!is_pointwise(g)) {
        im2col(g, in, col.data());
        B = col.data();
      }
      gemm_nn<T>(static_cast<long>(og), static_cast<long>(P), static_cast<long>(K),
                 weight.data() + grp * og * K, B, o);
    }
  }
}

template <Real T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_input,
                           ConvAlgorithm algo) {
  check_sizes(g, grad_input.size(), weight.size(), grad_out.size());
  algo = resolve(g, algo);
  if (algo == ConvAlgorithm::direct) {
    backward_direct<T>(g, grad_out.data(), nullptr, weight.data(), grad_input.data(), nullptr);
    return;
  }
  if (algo == ConvAlgorithm::shifted) {
    backward_input_shifted(g, grad_out.data(), weight.data(), grad_input.data());
    return;
  }
  const std::size_t cg = g.cin_per_group(), og = g.cout_per_group();
  const std::size_t K = cg * g.kh * g.kw, P = g.oh * g.ow;
  std::vector<T> col(K * P);
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const T* dy = grad_out.data() + (n * g.cout + grp * og) * P;
      T* dx = grad_input.data() + (n * g.cin + grp * cg) * g.h * g.w;
      if (is_pointwise(g)) {
        gemm_tn<T>(static_cast<long>(K), static_cast<long>(P), static_cast<long>(og),
                   weight.data() + grp * og * K, dy, dx);
        continue;
      }
      std::fill(col.begin(), col.end(), T(0));
      gemm_tn<T>(static_cast<long>(K), static_cast<long>(P), static_cast<long>(og),
                 weight.data() + grp * og * K, dy, col.data());
      col2im(g, col.data(), dx);
    }
}

template <Real T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> grad_out,
                            std::span<const T> input, std::span<T> grad_weight,
                            ConvAlgorithm algo) {
  check_sizes(g, input.size(), grad_weight.size(), grad_out.size());
  algo = resolve(g, algo);
  if (algo == ConvAlgorithm::direct) {
    backward_direct<T>(g, grad_out.data(), input.data(), nullptr, nullptr, grad_weight.data());
    return;
  }
  if (algo == ConvAlgorithm::shifted) {
    backward_weight_shifted(g, grad_out.data(), input.data(), grad_weight.data());
    return;
  }
  const std::size_t cg = g.cin_per_group(), og = g.cout_per_group();
  const std::size_t K = cg * g.kh * g.kw, P = g.oh * g.ow;
  std::vector<T> col(is_pointwise(g) ? 0 : K * P);
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const T* dy = grad_out.data() + (n * g.cout + grp * og) * P;
      const T* in = input.data() + (n * g.cin + grp * cg) * g.h * g.w;
      const T* B = in;
      if (!is_pointwise(g)) {
        im2col(g, in, col.data());
        B = col.data();
      }
      gemm_nt<T>(static_cast<long>(og), static_cast<long>(K), static_cast<long>(P), dy, B,
                 grad_weight.data() + grp * og * K);
    }
}

template <Real T>
void conv2d_backward_bias(const ConvGeometry& g, std::span<const T> grad_out,
                          std::span<T> grad_bias) {
  const std::size_t P = g.oh * g.ow;
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t o = 0; o < g.cout; ++o) {
      const T* dy = grad_out.data() + (n * g.cout + o) * P;
      T acc = 0;
      for (std::size_t p = 0; p < P; ++p) acc += dy[p];
      grad_bias[o] += acc;
    }
}

#define NOWCAST_INSTANTIATE_CONV(T)                                                              \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, \
                                  std::span<const T>, std::span<T>, ConvAlgorithm);            \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,              \
                                         std::span<const T>, std::span<T>, ConvAlgorithm);     \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,             \
                                          std::span<const T>, std::span<T>, ConvAlgorithm);    \
  template void conv2d_backward_bias<T>(const ConvGeometry&, std::span<const T>, std::span<T>);

NOWCAST_INSTANTIATE_CONV(float)
NOWCAST_INSTANTIATE_CONV(double)
#undef NOWCAST_INSTANTIATE_CONV

}  // namespace nowcast::kernels

namespace nowcast {

void set_num_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
  else omp_set_num_threads(omp_get_num_procs());
#else
  (void)threads;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void configure_threads_from_env() {
  if (const char* env = std::getenv("NOWCAST_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 0) set_num_threads(static_cast<int>(v));
  }
}

}  // namespace nowcast

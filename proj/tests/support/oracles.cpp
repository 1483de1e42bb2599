#include "oracles.hpp"

#include <numeric>

namespace nowcast::testing {

double max_rel_err(std::span<const double> a, std::span<const double> b) {
  double scale = 0;
  for (double v : b) scale = std::max(scale, std::abs(v));
  const double floor = 1e-3 * scale + 1e-300;
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / den);
  }
  return worst;
}

double norm_rel_err(std::span<const double> a, std::span<const double> b) {
  double scale = 0, diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    diff = std::max(diff, std::abs(a[i] - b[i]));
  }
  return scale == 0 ? diff : diff / scale;
}

Tensor<double> naive_upsample2(const Tensor<double>& x) {
  const Shape s = x.shape();
  const Shape o{s.n, s.c, 2 * s.h, 2 * s.w};
  std::vector<double> out(o.numel());
  auto source = [](std::size_t dst, std::size_t len, std::size_t& lo, std::size_t& hi, double& frac) {
    double src = (static_cast<double>(dst) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    lo = static_cast<std::size_t>(std::floor(src));
    hi = std::min(lo + 1, len - 1);
    frac = src - static_cast<double>(lo);
  };
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < o.h; ++y)
        for (std::size_t x_ = 0; x_ < o.w; ++x_) {
          std::size_t y0, y1, x0, x1;
          double fy, fx;
          source(y, s.h, y0, y1, fy);
          source(x_, s.w, x0, x1, fx);
          const double top = (1 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1);
          const double bottom = (1 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1);
          out[o.offset(n, c, y, x_)] = (1 - fy) * top + fy * bottom;
        }
  return Tensor<double>(o, std::move(out));
}

std::vector<double> fd_gradient(const std::function<double()>& f, std::span<double> values,
                                std::span<const std::size_t> indices, double h) {
  std::vector<double> g;
  g.reserve(indices.size());
  for (std::size_t i : indices) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f();
    values[i] = saved - h;
    const double down = f();
    values[i] = saved;
    g.push_back((up - down) / (2 * h));
  }
  return g;
}

double gradient_error(std::vector<Tensor<double>> leaves,
                      const std::function<Tensor<double>(Tape<double>*)>& build,
                      std::uint64_t seed, std::size_t per_leaf, std::size_t* checked,
                      double h) {
  Tape<double>* const none = nullptr;
  Rng rng(seed + 1000);
  const auto mask = random_tensor<double>(build(none).shape(), rng, -1.0, 1.0);

  Tape<double> tape;
  for (auto& l : leaves) l.zero_grad();
  tape.backward(ops::masked_sum(&tape, build(&tape), mask));

  auto f = [&] { return ops::masked_sum(none, build(none), mask).item(); };
  // one error over all leaves, so a leaf whose true gradient is exactly zero
  // (a bias feeding batch norm) is judged against the overall gradient scale
  std::vector<double> analytic, numeric;
  for (auto& l : leaves) {
    std::vector<std::size_t> idx;
    if (per_leaf == 0 || per_leaf >= l.numel()) {
      idx.resize(l.numel());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    } else {
      for (std::size_t k = 0; k < per_leaf; ++k) idx.push_back(rng.below(l.numel()));
    }
    const auto fd = fd_gradient(f, l.mutable_data(), idx, h);
    numeric.insert(numeric.end(), fd.begin(), fd.end());
    for (std::size_t i : idx) analytic.push_back(l.grad()[i]);
  }
  const double worst = max_rel_err(analytic, numeric);
  const std::size_t count = analytic.size();
  if (checked) *checked = count;
  return worst;
}

namespace {

std::size_t dsc(std::size_t cin, std::size_t cout) { return cin * 9 + cout * cin + cout; }
std::size_t bn(std::size_t c) { return 2 * c; }
std::size_t pointwise(std::size_t cin, std::size_t cout) { return cin * cout + cout; }

std::size_t block(std::size_t cin, std::size_t mid, std::size_t cout, bool residual, bool shortcut_bn) {
  std::size_t n = dsc(cin, mid) + bn(mid) + dsc(mid, cout) + bn(cout);
  if (residual) n += pointwise(cin, cout);
  if (shortcut_bn) n += bn(cout);
  return n;
}

std::size_t cbam(std::size_t c, std::size_t r, std::size_t k) {
  const std::size_t hidden = c / r;
  return pointwise(c, hidden) + pointwise(hidden, c) + 2 * k * k;
}

}  // namespace

LevelWidths expected_widths(const ModelConfig& cfg) {
  const std::size_t b = cfg.base_channels;
  if (cfg.variant == Variant::sar) return {{b, 2 * b, 4 * b, 8 * b, 16 * b}, {b, 2 * b, 4 * b, 8 * b}};
  return {{b, 2 * b, 4 * b, 8 * b, 8 * b}, {b, b, 2 * b, 4 * b}};
}

std::size_t enumerate_param_count(const ModelConfig& cfg) {
  const bool sar = cfg.variant == Variant::sar;
  const auto widths = expected_widths(cfg);
  std::size_t total = 0;
  std::size_t cin = cfg.in_channels;
  for (std::size_t d = 0; d < 5; ++d) {
    const std::size_t w = widths.encoder[d];
    total += block(cin, w, w, sar, sar && cfg.shortcut_batch_norm);
    total += cbam(w, cfg.cbam_reduction, cfg.cbam_kernel);
    cin = w;
  }
  std::size_t below = widths.encoder[4];
  for (std::size_t k = 4; k-- > 0;) {
    const std::size_t skip = widths.encoder[k];
    const std::size_t up = sar ? below / 2 : below;
    if (sar) total += pointwise(below, up);
    const std::size_t merged = up + skip;
    total += block(merged, merged / 2, widths.decoder[k], sar, sar && cfg.shortcut_batch_norm);
    below = widths.decoder[k];
  }
  total += pointwise(cfg.base_channels, cfg.out_channels);
  return total;
}

metrics::ConfusionCounts confusion_loop(std::span<const int> pred, std::span<const int> target) {
  metrics::ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && target[i] == 1) c.tp += 1;
    if (pred[i] == 0 && target[i] == 0) c.tn += 1;
    if (pred[i] == 1 && target[i] == 0) c.fp += 1;
    if (pred[i] == 0 && target[i] == 1) c.fn += 1;
  }
  return c;
}

std::vector<data::Window> brute_force_windows(std::size_t n_frames, const data::WindowSpec& spec,
                                              const std::vector<bool>& selected,
                                              bool gate_inputs) {
  std::vector<data::Window> out;
  const std::size_t in = spec.input_frames;
  for (std::size_t anchor = 0; anchor < n_frames; ++anchor) {
    if (anchor + 1 < in) continue;
    if ((anchor + 1 - in) % spec.stride != 0) continue;
    data::Window w;
    w.anchor = anchor;
    bool ok = true;
    for (std::size_t i = anchor + 1 - in; i <= anchor; ++i) {
      w.inputs.push_back(i);
      if (gate_inputs && !selected[i]) ok = false;
    }
    for (std::size_t off : spec.target_offsets) {
      const std::size_t t = anchor + off;
      if (t >= n_frames) {
        ok = false;
        break;
      }
      w.targets.push_back(t);
      if (!selected[t]) ok = false;
    }
    if (ok) out.push_back(w);
  }
  return out;
}

std::vector<std::size_t> count_rainy(const data::FrameSeries& s, double fraction) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::size_t wet = 0;
    for (float v : s.frames[i].data())
      if (v > 0) ++wet;
    if (static_cast<double>(wet) >= fraction * static_cast<double>(s.frames[i].numel()))
      out.push_back(i);
  }
  return out;
}

double correlation(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace nowcast::testing

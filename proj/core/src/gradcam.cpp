#include "nowcast/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include "nowcast/ops.hpp"

namespace nowcast::explain {

template <Real T>
RainScore<T> rain_score(Tape<T>* tape, const Tensor<T>& pred, const metrics::UnitInfo& unit,
                        double threshold, ScoreMode mode) {
  if (pred.shape().n != 1)
    throw UsageError("rain_score expects a single-sample prediction, got " + pred.shape().str());
  RainScore<T> r;
  r.mask = metrics::binarize(pred, std::optional<metrics::UnitInfo>(unit), threshold);
  for (T m : r.mask.data()) r.masked_pixels += m != T(0);
  r.score = ops::masked_sum(tape, pred, r.mask);
  if (mode == ScoreMode::masked_mean && r.masked_pixels > 0)
    r.score = ops::scale(tape, r.score, T(1) / static_cast<T>(r.masked_pixels));
  return r;
}

std::vector<std::string> explain_targets(const ModelConfig& config) {
  const bool sar = config.variant == Variant::sar;
  std::vector<std::string> names;
  for (std::size_t d = 0; d < 5; ++d) {
    const std::string lvl = "enc" + std::to_string(d);
    names.push_back(lvl + ".block");
    if (sar) {
      names.push_back(lvl + ".block.dsc_path");
      names.push_back(lvl + ".block.shortcut");
    }
    names.push_back(lvl + ".cbam");
  }
  for (std::size_t d = 4; d-- > 0;) {
    const std::string lvl = "dec" + std::to_string(d);
    names.push_back(lvl + ".block");
    if (sar) {
      names.push_back(lvl + ".block.dsc_path");
      names.push_back(lvl + ".block.shortcut");
    }
  }
  return names;
}

template <Real T>
std::vector<Heatmap<T>> grad_cam(const SarUNet<T>& model, const Tensor<T>& x,
                                 const std::vector<std::string>& layers,
                                 const GradCamOptions& options) {
  if (x.shape().n != 1) throw UsageError("grad_cam explains one sample, got " + x.shape().str());
  if (!(options.score_scale > 0)) throw ConfigError("score_scale must be positive");
  const auto valid = explain_targets(model.config());
  for (const auto& name : layers) {
    if (std::find(valid.begin(), valid.end(), name) != valid.end()) continue;
    if (model.config().variant == Variant::smaat &&
        (name.ends_with(".dsc_path") || name.ends_with(".shortcut")))
      throw UsageError("layer '" + name +
                       "' needs residual blocks; the smaat-config model has no shortcuts");
    std::string list;
    for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
    throw UsageError("unknown Grad-CAM target '" + name + "'; valid targets: " + list);
  }

  SarUNet<T> eval = model;
  eval.set_training(false);
  Tape<T> tape;
  ForwardOptions<T> fo;
  const std::set<std::string> unique(layers.begin(), layers.end());
  fo.trace.assign(unique.begin(), unique.end());
  const auto fwd = eval.forward(&tape, x, fo);

  const auto rs = rain_score(&tape, fwd.output, options.unit, options.threshold, options.mode);
  Tensor<T> score = rs.score;
  if (options.score_scale != 1.0) score = ops::scale(&tape, score, static_cast<T>(options.score_scale));
  const bool differentiate = !rs.empty() && tape.tracks(score);
  if (differentiate) tape.backward(score, {.accumulate_into_leaves = false});

  const std::size_t H = x.shape().h, W = x.shape().w;
  std::vector<Heatmap<T>> maps;
  for (const auto& name : layers) {
    const Tensor<T>& act = fwd.trace.at(name);
    const Shape s = act.shape();
    const auto grad = differentiate ? tape.grad_of(act) : std::span<const T>{};
    Heatmap<T> hm;
    hm.layer = name;
    hm.empty_score = rs.empty();
    hm.alpha.assign(s.c, 0.0);
    if (!grad.empty())
      for (std::size_t k = 0; k < s.c; ++k) {
        double acc = 0;
        for (std::size_t i = 0; i < s.plane(); ++i) acc += grad[k * s.plane() + i];
        hm.alpha[k] = acc / static_cast<double>(s.plane());
      }
    std::vector<T> cam(s.plane());
    auto a = act.data();
    for (std::size_t i = 0; i < s.plane(); ++i) {
      double v = 0;
      for (std::size_t k = 0; k < s.c; ++k) v += hm.alpha[k] * static_cast<double>(a[k * s.plane() + i]);
      cam[i] = static_cast<T>(std::max(v, 0.0));
    }
    hm.low_res = Tensor<T>(Shape{1, 1, s.h, s.w}, std::move(cam));
    auto up = ops::resize_bilinear(hm.low_res, H, W);
    auto uv = up.data();
    hm.raw_max = static_cast<double>(*std::max_element(uv.begin(), uv.end()));
    std::vector<T> norm(uv.begin(), uv.end());
    if (hm.raw_max > 0)
      for (auto& v : norm) v = static_cast<T>(static_cast<double>(v) / hm.raw_max);
    hm.values = Tensor<T>(up.shape(), std::move(norm));
    maps.push_back(std::move(hm));
  }
  return maps;
}

std::vector<GridCell> suite_layout() {
  std::vector<GridCell> cells;
  for (std::size_t d = 0; d < 5; ++d)
    for (const char* col : {"block", "dsc_path", "shortcut", "cbam"}) {
      const std::string lvl = "enc" + std::to_string(d);
      const std::string c = col;
      const std::string layer =
          c == "cbam" ? lvl + ".cbam" : c == "block" ? lvl + ".block" : lvl + ".block." + c;
      cells.push_back({layer, "encoder", d, c});
    }
  for (std::size_t d = 4; d-- > 0;)
    for (const char* col : {"block", "dsc_path", "shortcut"}) {
      const std::string lvl = "dec" + std::to_string(d);
      const std::string c = col;
      cells.push_back({c == "block" ? lvl + ".block" : lvl + ".block." + c, "decoder", d, c});
    }
  return cells;
}

template <Real T>
std::vector<Heatmap<T>> explain_suite(const SarUNet<T>& model, const Tensor<T>& x,
                                      const GradCamOptions& options) {
  if (model.config().variant != Variant::sar)
    throw UsageError("the explanation suite needs a sar model (dsc_path and shortcut maps)");
  std::vector<std::string> layers;
  for (const auto& cell : suite_layout()) layers.push_back(cell.layer);
  return grad_cam(model, x, layers, options);
}

const std::array<Rgb, 256>& colormap() {
  static const std::array<Rgb, 256> table = [] {
    std::array<Rgb, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double x = i / 255.0;
      auto channel = [x](double centre) {
        const double v = std::clamp(1.5 - std::abs(4.0 * x - centre), 0.0, 1.0);
        return static_cast<std::uint8_t>(std::lround(255.0 * v));
      };
      t[i] = {channel(3.0), channel(2.0), channel(1.0)};
    }
    return t;
  }();
  return table;
}

template <Real T>
void write_ppm(std::ostream& os, const Tensor<T>& map) {
  const Shape& s = map.shape();
  if (s.n != 1 || s.c != 1) throw DimensionError("write_ppm expects [1,1,H,W], got " + s.str());
  os << "P6\n" << s.w << ' ' << s.h << "\n255\n";
  const auto& table = colormap();
  for (T v : map.data()) {
    const auto idx = std::lround(255.0 * std::clamp(static_cast<double>(v), 0.0, 1.0));
    const Rgb& c = table[static_cast<std::size_t>(idx)];
    os.write(reinterpret_cast<const char*>(c.data()), 3);
  }
  if (!os) throw DataError("failed writing PPM image");
}

#define NOWCAST_INSTANTIATE_GRADCAM(T)                                                      \
  template RainScore<T> rain_score<T>(Tape<T>*, const Tensor<T>&, const metrics::UnitInfo&, \
                                      double, ScoreMode);                                   \
  template std::vector<Heatmap<T>> grad_cam<T>(const SarUNet<T>&, const Tensor<T>&,         \
                                               const std::vector<std::string>&,             \
                                               const GradCamOptions&);                      \
  template std::vector<Heatmap<T>> explain_suite<T>(const SarUNet<T>&, const Tensor<T>&,    \
                                                    const GradCamOptions&);                 \
  template void write_ppm<T>(std::ostream&, const Tensor<T>&);

NOWCAST_INSTANTIATE_GRADCAM(float)
NOWCAST_INSTANTIATE_GRADCAM(double)
#undef NOWCAST_INSTANTIATE_GRADCAM

}  // namespace nowcast::explain

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "nowcast/metrics.hpp"
#include "nowcast/model.hpp"
#include "nowcast/tape.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast::explain {

enum class ScoreMode {
  masked_sum,   ///< sum of predicted values over the rain mask
  masked_mean,  ///< the same sum divided by the mask size
};

template <Real T>
struct RainScore {
  Tensor<T> score;  // [1,1,1,1]
  Tensor<T> mask;   // binarised prediction, constant
  std::size_t masked_pixels = 0;
  bool empty() const { return masked_pixels == 0; }
};

/// Score of the rain (or cloud) class over the pixels the prediction itself
/// classifies as positive. The mask carries no gradient. `pred` must hold a
/// single sample.
template <Real T>
RainScore<T> rain_score(Tape<T>* tape, const Tensor<T>& pred, const metrics::UnitInfo& unit,
                        double threshold = metrics::kRainThresholdMmPerHour,
                        ScoreMode mode = ScoreMode::masked_sum);

struct GradCamOptions {
  metrics::UnitInfo unit;
  double threshold = metrics::kRainThresholdMmPerHour;
  ScoreMode mode = ScoreMode::masked_sum;
  /// Positive factor applied to the score before differentiation.
  double score_scale = 1.0;
};

template <Real T>
struct Heatmap {
  std::string layer;
  Tensor<T> values;  // [1,1,H,W] in [0,1]
  double raw_max = 0;  ///< maximum before normalisation
  std::vector<double> alpha;  ///< per-channel weights (spatial mean of the gradient)
  Tensor<T> low_res;  ///< relu(sum_k alpha_k A_k) at the layer's resolution
  bool empty_score = false;  ///< no pixel predicted positive
};

/// Valid Grad-CAM layer names for a model: enc{d}.block[.dsc_path|.shortcut],
/// enc{d}.cbam and dec{d}.block[.dsc_path|.shortcut] (sub-paths only for sar).
std::vector<std::string> explain_targets(const ModelConfig& config);

/// Heatmaps for several layers of one input from a single forward/backward
/// pass, with the model in eval mode. Throws UsageError for names outside
/// explain_targets().
template <Real T>
std::vector<Heatmap<T>> grad_cam(const SarUNet<T>& model, const Tensor<T>& x,
                                 const std::vector<std::string>& layers,
                                 const GradCamOptions& options);

template <Real T>
Heatmap<T> grad_cam(const SarUNet<T>& model, const Tensor<T>& x, const std::string& layer,
                    const GradCamOptions& options) {
  return std::move(grad_cam(model, x, std::vector<std::string>{layer}, options).front());
}

struct GridCell {
  std::string layer;
  std::string section;  ///< "encoder" or "decoder"
  std::size_t depth = 0;  ///< row
  std::string column;     ///< block, dsc_path, shortcut or cbam
};

/// The 32-cell layout: encoder depth 0..4 x (block, dsc_path, shortcut,
/// cbam), then decoder depth 3..0 x (block, dsc_path, shortcut).
std::vector<GridCell> suite_layout();

/// All suite_layout() heatmaps in layout order; requires a sar model.
template <Real T>
std::vector<Heatmap<T>> explain_suite(const SarUNet<T>& model, const Tensor<T>& x,
                                      const GradCamOptions& options);

using Rgb = std::array<std::uint8_t, 3>;

/// 256-entry blue-cyan-yellow-red table. Entry i at t = i / 255 holds
/// round(255 * clamp(1.5 - |4t - c|, 0, 1)) with c = 3, 2, 1 for r, g, b.
const std::array<Rgb, 256>& colormap();

/// Binary PPM (P6) of a [1,1,H,W] map; value v in [0,1] selects entry round(255 v).
template <Real T>
void write_ppm(std::ostream& os, const Tensor<T>& map);

}  // namespace nowcast::explain

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nowcast/data.hpp"
#include "nowcast/model.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast::metrics {

/// How stored or predicted values map to physical quantities.
struct UnitInfo {
  data::Unit unit = data::Unit::raw_hundredths_mm;
  double scale = 1.0;                 ///< normalised value * scale = raw value
  std::uint32_t interval_minutes = 5;
  /// Hourly rate per raw frame value: 60 / interval (x12 for 5-minute frames).
  double rate_factor() const { return 60.0 / static_cast<double>(interval_minutes); }
};

/// 0.5 mm/h, the rain / no-rain threshold.
inline constexpr double kRainThresholdMmPerHour = 0.5;

/// 1 where the pixel reaches the threshold (>=), else 0.
///
/// Precipitation values are normalised units: raw = value * scale, rate in
/// mm/h = raw / 100 * 60 / interval. Binary data compares the value itself
/// against the threshold. A missing UnitInfo raises UsageError.
template <Real T>
Tensor<T> binarize(const Tensor<T>& image, const std::optional<UnitInfo>& unit,
                   double threshold = kRainThresholdMmPerHour);

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Counts over two equally shaped {0,1} tensors; positive class = 1.
/// Throws DimensionError on a shape mismatch and UsageError on other values.
template <Real T>
ConfusionCounts confusion(const Tensor<T>& pred_bin, const Tensor<T>& target_bin);

struct Scores {
  double precision = 0;
  double recall = 0;
  double accuracy = 0;
  double f1 = 0;
  bool precision_undefined = false;  ///< tp + fp == 0, reported as 0
  bool recall_undefined = false;     ///< tp + fn == 0, reported as 0
  bool f1_undefined = false;         ///< precision + recall == 0, reported as 0
  bool accuracy_undefined = false;   ///< no pixels
};

Scores scores(const ConfusionCounts& counts);

struct Setup {
  std::size_t input_minutes = 0;
  std::size_t lead_minutes = 0;  ///< lead of the first target
  std::string model;
};

struct MetricReport {
  Setup setup;
  double mse = 0;           ///< normalised units
  double mse_physical = 0;  ///< raw units squared
  ConfusionCounts counts;
  Scores scores;
  /// MSE per target channel (lead time), normalised units.
  std::vector<double> mse_per_lead;
};

/// Anything that maps an input batch to a prediction.
template <Real T>
using Predictor = std::function<Tensor<T>(const Tensor<T>&)>;

/// Model evaluated in eval mode.
template <Real T>
Predictor<T> model_predictor(const SarUNet<T>& model);
/// Persistence baseline for the given number of output channels.
template <Real T>
Predictor<T> persistence_predictor(std::size_t out_channels);

/// MSE over every pixel and sample plus micro-averaged confusion counts,
/// accumulated in window order.
template <Real T>
MetricReport evaluate_setup(const Predictor<T>& predict, const data::WindowDataset& test_set,
                            const Setup& setup, std::size_t batch_size = 6,
                            double threshold = kRainThresholdMmPerHour);

/// Model names in report order within one setup.
inline const std::vector<std::string>& model_order() {
  static const std::vector<std::string> order = {"Persistence", "SmaAt-config", "SAR-UNet"};
  return order;
}

/// Sorts rows by input minutes, then lead minutes, then model_order()
/// (unknown model names last, alphabetical).
void sort_rows(std::vector<MetricReport>& rows);

/// CSV with header model,mse,precision,recall,accuracy,f1 (plus setup columns
/// when `with_setup`).
void write_report_csv(std::ostream& os, const std::vector<MetricReport>& rows,
                      bool with_setup = false);

/// Fixed-width table grouped by setup; '*' marks the best value per column
/// within a setup (lowest MSE, highest otherwise).
void write_report_table(std::ostream& os, const std::vector<MetricReport>& rows);

/// Plot-ready averages per model over all setups: model,mse,precision,recall,accuracy,f1.
void write_average_csv(std::ostream& os, const std::vector<MetricReport>& rows);

/// Per-lead MSE rows: input_minutes,lead_minutes,model,lead_index,mse.
void write_lead_csv(std::ostream& os, const std::vector<MetricReport>& rows);

}  // namespace nowcast::metrics

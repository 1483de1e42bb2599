#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nowcast/tensor.hpp"

namespace nowcast::data {

/// Physical meaning of stored pixel values.
enum class Unit : std::uint8_t {
  raw_hundredths_mm = 0,  ///< accumulation per frame interval, 0.01 mm
  binary = 1,             ///< cloud mask, values in {0, 1}
};

std::string_view to_string(Unit u);
Unit parse_unit(std::string_view s);

/// Time-ordered single-channel frames of equal size.
struct FrameSeries {
  std::vector<Tensor<float>> frames;  // each [1,1,H,W]
  std::uint32_t interval_minutes = 5;
  Unit unit = Unit::raw_hundredths_mm;
  std::vector<std::int64_t> timestamps;  // empty or one per frame, increasing

  std::size_t size() const { return frames.size(); }
  std::size_t height() const { return frames.empty() ? 0 : frames.front().shape().h; }
  std::size_t width() const { return frames.empty() ? 0 : frames.front().shape().w; }

  /// Throws DataError on mixed sizes, negative values, non-binary values in
  /// a binary series, or non-increasing timestamps.
  void validate() const;

  /// Frames [begin, end) with the same metadata.
  FrameSeries slice(std::size_t begin, std::size_t end) const;
};

/// Indices of frames whose share of strictly positive pixels is >= fraction.
std::vector<std::size_t> select_rainy(const FrameSeries& series, double fraction = 0.5);

/// Centre crop to size x size; the offset on each axis is floor((extent - size) / 2).
template <Real T>
Tensor<T> crop_center(const Tensor<T>& frame, std::size_t size = 288);

/// Applies crop_center to every frame.
FrameSeries crop_series(const FrameSeries& series, std::size_t size);

struct WindowSpec {
  std::size_t input_frames = 12;
  std::vector<std::size_t> target_offsets = {6};  ///< frames after the last input
  std::size_t stride = 1;

  void validate() const;
  std::size_t max_offset() const;
};

inline constexpr std::size_t kPrecipitationInputs[] = {6, 12, 18};
inline constexpr std::size_t kPrecipitationLeadMinutes[] = {30, 60, 90, 120, 180};

/// One of the 15 precipitation setups (5-minute frames, single target).
/// Throws ConfigError listing the valid grid otherwise.
WindowSpec precipitation_spec(std::size_t input_frames, std::size_t lead_minutes);

/// Cloud-cover setup: four inputs, six 15-minute steps ahead.
WindowSpec cloud_spec();

struct Window {
  std::size_t anchor = 0;  ///< index of the last input frame
  std::vector<std::size_t> inputs;
  std::vector<std::size_t> targets;
};

enum class SelectionScope {
  targets,             ///< a window needs all target frames selected
  inputs_and_targets,  ///< ... and all input frames too
};

/// Windows anchored at input_frames-1, input_frames-1+stride, ... that fit in
/// n_frames and satisfy the selection rule. Throws DataError when none remain.
std::vector<Window> make_windows(std::size_t n_frames, const WindowSpec& spec,
                                 std::span<const std::size_t> selected,
                                 SelectionScope scope = SelectionScope::targets);

/// Normalisation scale from the training split: its maximum raw value, or 1
/// for binary data. Throws DataError when the maximum is not positive.
double fit_scale(const FrameSeries& train);

struct SplitSeries {
  FrameSeries train;
  FrameSeries val;
  FrameSeries test;
};

/// Chronological split without shuffling; defaults 70/15/15.
SplitSeries split_chronological(const FrameSeries& series, double train_share = 0.7,
                                double val_share = 0.15);

template <Real T>
struct SampleBatch {
  Tensor<T> inputs;   // [n, input_frames, H, W], raw / scale
  Tensor<T> targets;  // [n, offsets, H, W], raw / scale
  double scale = 1.0;
};

/// Windows over one split, normalised by a shared scale.
class WindowDataset {
 public:
  WindowDataset(std::shared_ptr<const FrameSeries> series, std::vector<Window> windows,
                double scale);

  std::size_t size() const { return windows_.size(); }
  double scale() const { return scale_; }
  const FrameSeries& series() const { return *series_; }
  const std::vector<Window>& windows() const { return windows_; }

  /// Stacks the listed windows into one batch.
  template <Real T>
  SampleBatch<T> batch(std::span<const std::size_t> indices) const;
  /// All windows in order.
  template <Real T>
  SampleBatch<T> all() const;

 private:
  std::shared_ptr<const FrameSeries> series_;
  std::vector<Window> windows_;
  double scale_;
};

/// Train/val/test datasets built from one series with the scale of the training split.
struct DatasetSplits {
  WindowDataset train;
  WindowDataset val;
  WindowDataset test;
};

struct DatasetOptions {
  WindowSpec spec;
  double rain_fraction = 0.5;
  SelectionScope scope = SelectionScope::targets;
  double train_share = 0.7;
  double val_share = 0.15;
};

DatasetSplits build_datasets(const FrameSeries& series, const DatasetOptions& options);

struct SynthParams {
  std::uint64_t seed = 0;
  std::size_t frames = 200;
  std::size_t height = 96;
  std::size_t width = 96;
  std::size_t blobs = 6;
  double wind_x = 1.0;  ///< pixels per frame
  double wind_y = 0.0;
  double growth = 1.0;  ///< intensity factor per frame
  double sigma_min = 4.0;
  double sigma_max = 10.0;
  double amplitude_min = 100.0;  ///< peak raw value (0.01 mm per frame)
  double amplitude_max = 800.0;

  void validate() const;
};

/// Gaussian blobs on a periodic domain, advected by the wind and scaled by
/// growth^t. Blob centres, widths and peaks are drawn once from the seed.
FrameSeries synth_generate(const SynthParams& params);

/// "NWDS" container: magic, u32 interval_minutes, u8 unit, u64 frame count,
/// then one T4v1 record per frame.
void write_series(std::ostream& os, const FrameSeries& series);
FrameSeries read_series(std::istream& is);
void save_series(const std::string& path, const FrameSeries& series);
FrameSeries load_series(const std::string& path);

/// CSV audit trail: window,anchor,inputs,targets (indices joined by ';').
void write_window_manifest(std::ostream& os, std::span<const Window> windows);

}  // namespace nowcast::data

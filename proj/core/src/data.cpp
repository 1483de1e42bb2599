#include "nowcast/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "nowcast/random.hpp"
#include "nowcast/serialize.hpp"

namespace nowcast::data {

namespace {

constexpr std::string_view kSeriesMagic = "NWDS";

std::string join(std::span<const std::size_t> v, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(v[i]);
  }
  return s;
}

// Signed distance from c to x on a ring of the given length, in [-len/2, len/2).
double ring_delta(double x, double c, double len) {
  double d = std::fmod(x - c, len);
  if (d < -len / 2) d += len;
  if (d >= len / 2) d -= len;
  return d;
}

}  // namespace

std::string_view to_string(Unit u) { return u == Unit::binary ? "binary" : "raw_hundredths_mm"; }

Unit parse_unit(std::string_view s) {
  if (s == "raw_hundredths_mm" || s == "raw") return Unit::raw_hundredths_mm;
  if (s == "binary") return Unit::binary;
  throw ConfigError("unknown unit '" + std::string(s) + "' (expected raw_hundredths_mm or binary)");
}

void FrameSeries::validate() const {
  if (interval_minutes == 0) throw DataError("interval_minutes must be >= 1");
  if (!timestamps.empty() && timestamps.size() != frames.size())
    throw DataError("series has " + std::to_string(frames.size()) + " frames but " +
                    std::to_string(timestamps.size()) + " timestamps");
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    if (timestamps[i] <= timestamps[i - 1])
      throw DataError("timestamps must increase strictly (index " + std::to_string(i) + ")");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Shape& s = frames[i].shape();
    if (s.n != 1 || s.c != 1 || s.h != height() || s.w != width())
      throw DataError("frame " + std::to_string(i) + " has shape " + s.str() +
                      ", expected [1,1," + std::to_string(height()) + "," +
                      std::to_string(width()) + "]");
    for (float v : frames[i].data()) {
      if (v < 0) throw DataError("frame " + std::to_string(i) + " has a negative value");
      if (unit == Unit::binary && v != 0 && v != 1)
        throw DataError("binary frame " + std::to_string(i) + " has a value outside {0,1}");
    }
  }
}

FrameSeries FrameSeries::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > frames.size())
    throw UsageError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside series of " + std::to_string(frames.size()) + " frames");
  FrameSeries out;
  out.interval_minutes = interval_minutes;
  out.unit = unit;
  out.frames.assign(frames.begin() + begin, frames.begin() + end);
  if (!timestamps.empty()) out.timestamps.assign(timestamps.begin() + begin, timestamps.begin() + end);
  return out;
}

std::vector<std::size_t> select_rainy(const FrameSeries& series, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw ConfigError("rain fraction must lie in [0,1], got " + std::to_string(fraction));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto px = series.frames[i].data();
    const auto wet = std::count_if(px.begin(), px.end(), [](float v) { return v > 0.0f; });
    // Compare counts, not ratios, so the 50% boundary is exact.
    if (static_cast<double>(wet) >= fraction * static_cast<double>(px.size())) out.push_back(i);
  }
  return out;
}

template <Real T>
Tensor<T> crop_center(const Tensor<T>& frame, std::size_t size) {
  const Shape& s = frame.shape();
  if (size == 0 || s.h < size || s.w < size)
    throw DimensionError("cannot crop " + s.str() + " to " + std::to_string(size) + "x" +
                         std::to_string(size));
  const std::size_t oy = (s.h - size) / 2;
  const std::size_t ox = (s.w - size) / 2;
  const Shape os{s.n, s.c, size, size};
  std::vector<T> out(os.numel());
  auto in = frame.data();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < size; ++y) {
        auto row = in.subspan(s.offset(n, c, y + oy, ox), size);
        std::copy(row.begin(), row.end(), out.begin() + os.offset(n, c, y, 0));
      }
  return Tensor<T>(os, std::move(out));
}

FrameSeries crop_series(const FrameSeries& series, std::size_t size) {
  FrameSeries out = series;
  for (auto& f : out.frames) f = crop_center(f, size);
  return out;
}

void WindowSpec::validate() const {
  if (input_frames == 0) throw ConfigError("window needs at least one input frame");
  if (target_offsets.empty()) throw ConfigError("window needs at least one target offset");
  if (stride == 0) throw ConfigError("window stride must be >= 1");
  for (std::size_t o : target_offsets)
    if (o == 0) throw ConfigError("target offsets must be positive");
}

std::size_t WindowSpec::max_offset() const {
  return target_offsets.empty() ? 0 : *std::max_element(target_offsets.begin(), target_offsets.end());
}

WindowSpec precipitation_spec(std::size_t input_frames, std::size_t lead_minutes) {
  const bool in_ok = std::ranges::find(kPrecipitationInputs, input_frames) !=
                     std::end(kPrecipitationInputs);
  const bool lead_ok = std::ranges::find(kPrecipitationLeadMinutes, lead_minutes) !=
                       std::end(kPrecipitationLeadMinutes);
  if (!in_ok || !lead_ok)
    throw ConfigError("no precipitation setup with " + std::to_string(input_frames) +
                      " input frames and " + std::to_string(lead_minutes) +
                      " min lead; valid grid: input frames {6,12,18} x lead minutes "
                      "{30,60,90,120,180}");
  return {.input_frames = input_frames, .target_offsets = {lead_minutes / 5}, .stride = 1};
}

WindowSpec cloud_spec() { return {.input_frames = 4, .target_offsets = {1, 2, 3, 4, 5, 6}, .stride = 1}; }

std::vector<Window> make_windows(std::size_t n_frames, const WindowSpec& spec,
                                 std::span<const std::size_t> selected, SelectionScope scope) {
  spec.validate();
  std::vector<char> is_selected(n_frames, 0);
  for (std::size_t i : selected)
    if (i < n_frames) is_selected[i] = 1;

  std::vector<Window> out;
  const std::size_t reach = spec.max_offset();
  for (std::size_t anchor = spec.input_frames - 1; anchor + reach < n_frames;
       anchor += spec.stride) {
    Window w;
    w.anchor = anchor;
    for (std::size_t k = 0; k < spec.input_frames; ++k)
      w.inputs.push_back(anchor + 1 + k - spec.input_frames);
    for (std::size_t o : spec.target_offsets) w.targets.push_back(anchor + o);
    auto ok = [&](const std::vector<std::size_t>& idx) {
      return std::all_of(idx.begin(), idx.end(), [&](std::size_t i) { return is_selected[i] != 0; });
    };
    if (!ok(w.targets)) continue;
    if (scope == SelectionScope::inputs_and_targets && !ok(w.inputs)) continue;
    out.push_back(std::move(w));
  }
  if (out.empty())
    throw DataError("no windows: " + std::to_string(n_frames) + " frames, " +
                    std::to_string(selected.size()) + " selected, " +
                    std::to_string(spec.input_frames) + " inputs, max offset " +
                    std::to_string(reach));
  return out;
}

double fit_scale(const FrameSeries& train) {
  if (train.unit == Unit::binary) return 1.0;
  float mx = 0.0f;
  for (const auto& f : train.frames)
    for (float v : f.data()) mx = std::max(mx, v);
  if (!(mx > 0.0f)) throw DataError("training split has no positive value; cannot normalise");
  return mx;
}

SplitSeries split_chronological(const FrameSeries& series, double train_share, double val_share) {
  if (!(train_share > 0 && val_share >= 0 && train_share + val_share < 1))
    throw ConfigError("split shares must satisfy train > 0, val >= 0, train + val < 1");
  const auto n = static_cast<double>(series.size());
  const auto a = static_cast<std::size_t>(std::floor(n * train_share));
  const auto b = static_cast<std::size_t>(std::floor(n * (train_share + val_share)));
  return {series.slice(0, a), series.slice(a, b), series.slice(b, series.size())};
}

WindowDataset::WindowDataset(std::shared_ptr<const FrameSeries> series,
                             std::vector<Window> windows, double scale)
    : series_(std::move(series)), windows_(std::move(windows)), scale_(scale) {
  if (!(scale_ > 0)) throw DataError("normalisation scale must be positive");
  for (const auto& w : windows_)
    for (const auto* idx : {&w.inputs, &w.targets})
      for (std::size_t i : *idx)
        if (i >= series_->size())
          throw DataError("window index " + std::to_string(i) + " outside series of " +
                          std::to_string(series_->size()) + " frames");
}

template <Real T>
SampleBatch<T> WindowDataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw UsageError("empty batch");
  const std::size_t h = series_->height(), w = series_->width(), plane = h * w;
  const std::size_t cin = windows_.front().inputs.size();
  const std::size_t cout = windows_.front().targets.size();
  const Shape is{indices.size(), cin, h, w}, ts{indices.size(), cout, h, w};
  std::vector<T> in(is.numel()), tg(ts.numel());
  const double inv = 1.0 / scale_;
  auto fill = [&](std::vector<T>& dst, std::size_t base, std::size_t frame) {
    auto src = series_->frames[frame].data();
    for (std::size_t p = 0; p < plane; ++p)
      dst[base + p] = static_cast<T>(static_cast<double>(src[p]) * inv);
  };
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Window& win = windows_.at(indices[b]);
    for (std::size_t k = 0; k < cin; ++k) fill(in, is.offset(b, k, 0, 0), win.inputs[k]);
    for (std::size_t k = 0; k < cout; ++k) fill(tg, ts.offset(b, k, 0, 0), win.targets[k]);
  }
  return {Tensor<T>(is, std::move(in)), Tensor<T>(ts, std::move(tg)), scale_};
}

template <Real T>
SampleBatch<T> WindowDataset::all() const {
  std::vector<std::size_t> idx(size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return batch<T>(idx);
}

DatasetSplits build_datasets(const FrameSeries& series, const DatasetOptions& options) {
  auto parts = split_chronological(series, options.train_share, options.val_share);
  const double scale = fit_scale(parts.train);
  auto make = [&](FrameSeries&& part, const char* name) {
    auto shared = std::make_shared<const FrameSeries>(std::move(part));
    const auto selected = select_rainy(*shared, options.rain_fraction);
    try {
      return WindowDataset(shared, make_windows(shared->size(), options.spec, selected, options.scope),
                           scale);
    } catch (const DataError& e) {
      throw DataError(std::string(name) + " split: " + e.what());
    }
  };
  return {make(std::move(parts.train), "train"), make(std::move(parts.val), "val"),
          make(std::move(parts.test), "test")};
}

void SynthParams::validate() const {
  if (height < 32 || width < 32)
    throw ConfigError("synthetic frames need height and width >= 32, got " +
                      std::to_string(height) + "x" + std::to_string(width));
  if (frames == 0) throw ConfigError("synthetic series needs at least one frame");
  if (!(growth > 0)) throw ConfigError("growth must be positive");
  if (!(sigma_min > 0 && sigma_min <= sigma_max)) throw ConfigError("need 0 < sigma_min <= sigma_max");
  if (!(amplitude_min >= 0 && amplitude_min <= amplitude_max))
    throw ConfigError("need 0 <= amplitude_min <= amplitude_max");
}

FrameSeries synth_generate(const SynthParams& p) {
  p.validate();
  struct Blob {
    double cx, cy, sigma, amplitude;
  };
  Rng rng(p.seed);
  std::vector<Blob> blobs(p.blobs);
  for (auto& b : blobs) {
    b.cx = rng.uniform(0.0, static_cast<double>(p.width));
    b.cy = rng.uniform(0.0, static_cast<double>(p.height));
    b.sigma = rng.uniform(p.sigma_min, p.sigma_max);
    b.amplitude = rng.uniform(p.amplitude_min, p.amplitude_max);
  }

  FrameSeries series;
  series.interval_minutes = 5;
  series.unit = Unit::raw_hundredths_mm;
  const auto W = static_cast<double>(p.width), H = static_cast<double>(p.height);
  const Shape fs{1, 1, p.height, p.width};
  std::vector<double> acc(fs.numel());
  for (std::size_t t = 0; t < p.frames; ++t) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const double td = static_cast<double>(t);
    const double gain = std::pow(p.growth, td);
    for (const auto& b : blobs) {
      const double cx = b.cx + p.wind_x * td;
      const double cy = b.cy + p.wind_y * td;
      const double inv2s2 = 1.0 / (2.0 * b.sigma * b.sigma);
      std::vector<double> gx(p.width);
      for (std::size_t x = 0; x < p.width; ++x) {
        const double d = ring_delta(static_cast<double>(x), cx, W);
        gx[x] = std::exp(-d * d * inv2s2);
      }
      for (std::size_t y = 0; y < p.height; ++y) {
        const double d = ring_delta(static_cast<double>(y), cy, H);
        const double gy = b.amplitude * gain * std::exp(-d * d * inv2s2);
        double* row = acc.data() + y * p.width;
        for (std::size_t x = 0; x < p.width; ++x) row[x] += gy * gx[x];
      }
    }
    std::vector<float> frame(acc.begin(), acc.end());
    series.frames.emplace_back(fs, std::move(frame));
  }
  return series;
}

void write_series(std::ostream& os, const FrameSeries& series) {
  series.validate();
  io::put_magic(os, kSeriesMagic);
  io::put_u32(os, series.interval_minutes);
  io::put_u8(os, static_cast<std::uint8_t>(series.unit));
  io::put_u64(os, series.size());
  for (const auto& f : series.frames) io::write_tensor(os, f);
  if (!os) throw DataError("failed writing NWDS container");
}

FrameSeries read_series(std::istream& is) {
  io::expect_magic(is, kSeriesMagic);
  FrameSeries s;
  s.interval_minutes = io::get_u32(is);
  const auto unit = io::get_u8(is);
  if (unit > 1) throw DataError("unknown unit code " + std::to_string(unit));
  s.unit = static_cast<Unit>(unit);
  const std::uint64_t n = io::get_u64(is);
  for (std::uint64_t i = 0; i < n; ++i) s.frames.push_back(io::read_tensor<float>(is));
  s.validate();
  return s;
}

void save_series(const std::string& path, const FrameSeries& series) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_series(os, series);
}

FrameSeries load_series(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return read_series(is);
}

void write_window_manifest(std::ostream& os, std::span<const Window> windows) {
  os << "window,anchor,inputs,targets\n";
  for (std::size_t i = 0; i < windows.size(); ++i)
    os << i << ',' << windows[i].anchor << ',' << join(windows[i].inputs, ";") << ','
       << join(windows[i].targets, ";") << '\n';
}

template Tensor<float> crop_center<float>(const Tensor<float>&, std::size_t);
template Tensor<double> crop_center<double>(const Tensor<double>&, std::size_t);
template SampleBatch<float> WindowDataset::batch<float>(std::span<const std::size_t>) const;
template SampleBatch<double> WindowDataset::batch<double>(std::span<const std::size_t>) const;
template SampleBatch<float> WindowDataset::all<float>() const;
template SampleBatch<double> WindowDataset::all<double>() const;

}  // namespace nowcast::data

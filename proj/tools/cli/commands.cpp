#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>

#include "manifest.hpp"
#include "nowcast/data.hpp"
#include "nowcast/gradcam.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/model.hpp"
#include "nowcast/train.hpp"

namespace nowcast::cli {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_real(const std::string& key, const std::string& s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ConfigError("checkpoint metadata '" + key + "' is not a number: '" + s + "'");
  return v;
}

void refuse_overwrite(const fs::path& path, bool force) {
  if (fs::exists(path) && !force)
    throw UsageError("'" + path.string() + "' already exists; pass --force to overwrite");
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  body(os);
  os.flush();
  if (!os) throw DataError("failed writing '" + path.string() + "'");
}

/// Write to a sibling temporary and rename, so readers never see half a file.
void write_file_atomic(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  fs::path tmp = path;
  tmp += ".tmp";
  write_file(tmp, body);
  fs::rename(tmp, path);
}

data::WindowSpec window_spec(const WindowOptions& w) {
  data::WindowSpec spec;
  if (w.cloud) {
    if (w.in_frames != 4)
      throw ConfigError("--cloud uses 4 input frames and 6 outputs, got --in-frames " +
                        std::to_string(w.in_frames));
    spec = data::cloud_spec();
  } else {
    spec = data::precipitation_spec(w.in_frames, w.lead_minutes);
  }
  spec.stride = w.window_stride;
  spec.validate();
  return spec;
}

data::DatasetOptions dataset_options(const WindowOptions& w) {
  data::DatasetOptions d;
  d.spec = window_spec(w);
  d.rain_fraction = w.rain_fraction;
  d.train_share = w.train_share;
  d.val_share = w.val_share;
  return d;
}

std::map<std::string, std::string> window_keys(const WindowOptions& w) {
  return {{"setup", w.cloud ? "cloud" : "precipitation"},
          {"in_frames", std::to_string(w.in_frames)},
          {"lead_minutes", std::to_string(w.lead_minutes)},
          {"window_stride", std::to_string(w.window_stride)},
          {"rain_fraction", num(w.rain_fraction)},
          {"crop", std::to_string(w.crop)},
          {"train_share", num(w.train_share)},
          {"val_share", num(w.val_share)}};
}

WindowOptions window_from_metadata(const Metadata& md) {
  auto get = [&](const std::string& key) {
    auto it = md.find(key);
    if (it == md.end()) throw ConfigError("checkpoint metadata lacks '" + key + "'");
    return it->second;
  };
  auto count = [&](const std::string& key) {
    return static_cast<std::size_t>(parse_real(key, get(key)));
  };
  WindowOptions w;
  w.cloud = get("setup") == "cloud";
  w.in_frames = count("in_frames");
  w.lead_minutes = count("lead_minutes");
  w.window_stride = count("window_stride");
  w.rain_fraction = parse_real("rain_fraction", get("rain_fraction"));
  w.crop = count("crop");
  w.train_share = parse_real("train_share", get("train_share"));
  w.val_share = parse_real("val_share", get("val_share"));
  return w;
}

/// "key: a=x b=y" lines for every differing key; empty when equal.
std::string diff_keys(const std::map<std::string, std::string>& a, const std::string& a_name,
                      const std::map<std::string, std::string>& b, const std::string& b_name,
                      const std::vector<std::string>& only = {}) {
  std::string out;
  for (const auto& [k, v] : a) {
    if (!only.empty() && std::find(only.begin(), only.end(), k) == only.end()) continue;
    auto it = b.find(k);
    const std::string other = it == b.end() ? "<missing>" : it->second;
    if (other != v) out += "  " + k + ": " + a_name + "=" + v + " " + b_name + "=" + other + "\n";
  }
  return out;
}

data::FrameSeries load_data(const std::string& path, std::size_t crop) {
  auto series = data::load_series(path);
  if (crop > 0) series = data::crop_series(series, crop);
  return series;
}

std::string model_name(Variant v) { return v == Variant::sar ? "SAR-UNet" : "SmaAt-config"; }

std::size_t input_minutes(const data::WindowSpec& spec, const data::FrameSeries& s) {
  return spec.input_frames * s.interval_minutes;
}
std::size_t lead_minutes(const data::WindowSpec& spec, const data::FrameSeries& s) {
  return spec.target_offsets.front() * s.interval_minutes;
}

void require_model_fits(const ModelConfig& mc, const data::WindowSpec& spec,
                        const data::FrameSeries& series, const std::string& what) {
  std::string diff;
  if (mc.in_channels != spec.input_frames)
    diff += "  in_channels: " + what + "=" + std::to_string(mc.in_channels) +
            " data=" + std::to_string(spec.input_frames) + "\n";
  if (mc.out_channels != spec.target_offsets.size())
    diff += "  out_channels: " + what + "=" + std::to_string(mc.out_channels) +
            " data=" + std::to_string(spec.target_offsets.size()) + "\n";
  if (series.height() % 16 != 0 || series.width() % 16 != 0)
    diff += "  frame size: " + std::to_string(series.height()) + "x" +
            std::to_string(series.width()) + " is not a multiple of 16 (use --crop)\n";
  if (!diff.empty()) throw DimensionError("model and data are incompatible:\n" + diff);
}

const data::WindowDataset& pick_split(const data::DatasetSplits& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "val") return ds.val;
  if (split == "test") return ds.test;
  throw UsageError("unknown split '" + split + "' (expected train, val or test)");
}

data::WindowDataset rescaled(const data::WindowDataset& d, double scale) {
  return {std::make_shared<const data::FrameSeries>(d.series()), d.windows(), scale};
}

/// Checkpoint plus the data view it was trained on.
struct CheckpointData {
  LoadedModel<float> loaded;
  WindowOptions window;
  double scale = 1;
};

CheckpointData open_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint '" + path + "'");
  CheckpointData c{load_checkpoint<float>(in), {}, 1};
  c.window = window_from_metadata(c.loaded.metadata);
  auto it = c.loaded.metadata.find("scale");
  if (it == c.loaded.metadata.end()) throw ConfigError("checkpoint metadata lacks 'scale'");
  c.scale = parse_real("scale", it->second);
  return c;
}

nlohmann::json window_json(const WindowOptions& w) {
  nlohmann::json j;
  for (const auto& [k, v] : window_keys(w)) j[k] = v;
  return j;
}

}  // namespace

int cmd_synth(const SynthOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  data::SynthParams p;
  p.seed = o.seed;
  p.frames = o.frames;
  p.height = p.width = o.size;
  p.blobs = o.blobs;
  const auto comma = o.wind.find(',');
  if (comma == std::string::npos) throw UsageError("--wind expects dx,dy, got '" + o.wind + "'");
  try {
    p.wind_x = std::stod(o.wind.substr(0, comma));
    p.wind_y = std::stod(o.wind.substr(comma + 1));
  } catch (const std::logic_error&) {
    throw UsageError("--wind expects two numbers dx,dy, got '" + o.wind + "'");
  }
  p.growth = o.growth;
  p.validate();

  const fs::path path = o.out;
  fs::path manifest_path = path;
  manifest_path += ".manifest.json";
  refuse_overwrite(path, o.force);
  RunManifest manifest("synth", args);
  const auto series = data::synth_generate(p);
  data::save_series(path.string(), series);

  manifest.set_seed(o.seed);
  manifest.config() = {{"seed", o.seed},   {"frames", o.frames},   {"size", o.size},
                       {"blobs", o.blobs}, {"wind", o.wind},       {"growth", o.growth},
                       {"out", o.out}};
  manifest.add_output(path);
  manifest.write(manifest_path);
  out << "wrote " << series.size() << " frames of " << o.size << "x" << o.size << " to " << o.out
      << '\n';
  return 0;
}

int cmd_train(const TrainOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  const fs::path dir = o.out_dir;
  const fs::path model_path = dir / "model.sar";
  refuse_overwrite(model_path, o.force);

  const auto series = load_data(o.data, o.window.crop);
  const auto options = dataset_options(o.window);
  const auto ds = data::build_datasets(series, options);

  ModelConfig mc;
  mc.in_channels = options.spec.input_frames;
  mc.out_channels = options.spec.target_offsets.size();
  mc.base_channels = o.base_channels;
  mc.variant = parse_variant(o.variant);
  mc.cbam_reduction = o.cbam_reduction ? o.cbam_reduction : std::gcd<std::size_t>(16, o.base_channels);
  mc.zero_output_init = o.output_init == "zero";
  mc.validate();
  require_model_fits(mc, options.spec, series, "model");

  train::TrainConfig tc;
  tc.lr0 = o.lr;
  tc.plateau_patience = o.plateau_patience;
  tc.lr_factor = o.lr_factor;
  tc.early_stop_patience = o.early_stop_patience;
  tc.max_epochs = o.epochs;
  tc.batch_size = o.batch_size;
  tc.seed = o.seed;
  tc.validate();

  RunManifest manifest("train", args);
  manifest.add_input(o.data);
  Metadata metadata = window_keys(o.window);
  metadata["scale"] = num(ds.train.scale());
  metadata["model_name"] = model_name(mc.variant);
  metadata["seed"] = std::to_string(o.seed);
  metadata["data_sha1"] = git_blob_sha1(o.data);

  SarUNet<float> model(mc, o.seed);
  std::optional<train::TrainState<float>> resume;
  if (!o.resume.empty()) {
    std::ifstream in(o.resume, std::ios::binary);
    if (!in) throw DataError("cannot read '" + o.resume + "'");
    auto lt = train::load_training_checkpoint<float>(in);
    const std::string diff =
        diff_keys(metadata, "run", lt.loaded.metadata, "resume") +
        diff_keys(mc.to_key_values(), "run", lt.loaded.model.config().to_key_values(), "resume");
    if (!diff.empty()) throw ConfigError("resume checkpoint does not match this run:\n" + diff);
    manifest.add_input(o.resume);
    model = std::move(lt.loaded.model);
    resume = std::move(lt.state);
  }

  fs::create_directories(dir);
  const fs::path resume_path = dir / "resume.sar";
  train::FitHooks<float> hooks;
  hooks.on_epoch_end = [&](const SarUNet<float>& m, const train::TrainState<float>& st) {
    // Timings go to the manifest only, keeping the checkpoint byte-stable.
    train::TrainState<float> stable = st;
    for (auto& r : stable.history) r.seconds = 0;
    write_file_atomic(resume_path, [&](std::ostream& os) {
      train::save_training_checkpoint(os, m, stable, metadata);
    });
    const auto& r = st.history.back();
    if (!o.quiet) {
      char line[128];
      std::snprintf(line, sizeof line, "epoch %3zu  train %.6g  val %.6g  lr %.3g  %.1fs\n",
                    r.epoch, r.train_mse, r.val_mse, r.lr, r.seconds);
      out << line << std::flush;
    }
  };
  const auto result = train::fit(model, ds.train, ds.val, tc, hooks, resume ? &*resume : nullptr);

  write_file(model_path, [&](std::ostream& os) { save_checkpoint(os, model, metadata); });
  const fs::path history_path = dir / "history.csv";
  write_file(history_path,
             [&](std::ostream& os) { train::write_history_csv(os, result.history(), false); });
  std::vector<fs::path> outputs = {model_path, history_path};
  // a resumed run that had already stopped trains no epoch and writes no resume file
  if (fs::exists(resume_path)) outputs.push_back(resume_path);
  for (const auto& [name, split] : {std::pair<const char*, const data::WindowDataset*>{"train", &ds.train},
                                    {"val", &ds.val},
                                    {"test", &ds.test}}) {
    const fs::path p = dir / (std::string("windows_") + name + ".csv");
    write_file(p, [&](std::ostream& os) { data::write_window_manifest(os, split->windows()); });
    outputs.push_back(p);
  }

  manifest.set_seed(o.seed);
  auto& cfg = manifest.config();
  cfg["data"] = o.data;
  cfg["window"] = window_json(o.window);
  cfg["model"] = mc.to_key_values();
  cfg["train"] = {{"lr", o.lr},
                  {"plateau_patience", o.plateau_patience},
                  {"lr_factor", o.lr_factor},
                  {"early_stop_patience", o.early_stop_patience},
                  {"epochs", o.epochs},
                  {"batch_size", o.batch_size},
                  {"resume", o.resume}};
  cfg["scale"] = ds.train.scale();
  cfg["windows"] = {{"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()}};
  std::vector<double> seconds;
  for (const auto& r : result.history()) seconds.push_back(r.seconds);
  manifest.timings()["epoch_seconds"] = seconds;
  for (const auto& p : outputs) manifest.add_output(p);
  manifest.write(dir / "manifest.json");

  out << "best epoch " << result.best_epoch() << " val_mse " << num(result.best_val())
      << (result.stopped_early ? " (early stop)" : "") << "\nwrote " << model_path.string()
      << '\n';
  return 0;
}

int cmd_evaluate(const EvaluateOptions& o, const std::vector<std::string>& args,
                 std::ostream& out) {
  if (o.checkpoints.empty() && o.baseline != "persistence")
    throw UsageError("nothing to evaluate: pass --checkpoint and/or --baseline persistence");
  const fs::path dir = o.out_dir;
  const fs::path report_path = dir / "report.csv";
  refuse_overwrite(report_path, o.force);

  std::vector<CheckpointData> models;
  for (const auto& path : o.checkpoints) models.push_back(open_checkpoint(path));
  WindowOptions window = models.empty() ? o.window : models.front().window;
  const double scale_override = models.empty() ? 0.0 : models.front().scale;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const std::string diff = diff_keys(window_keys(window), "first", window_keys(models[i].window),
                                       o.checkpoints[i]);
    if (!diff.empty()) throw ConfigError("checkpoints were trained on different setups:\n" + diff);
  }
  if (!models.empty() && !o.explicit_window_flags.empty()) {
    const std::string diff = diff_keys(window_keys(o.window), "flag", window_keys(window),
                                       "checkpoint", o.explicit_window_flags);
    if (!diff.empty()) throw ConfigError("flags contradict the checkpoint setup:\n" + diff);
  }

  const auto series = load_data(o.data, window.crop);
  const auto options = dataset_options(window);
  const auto ds = data::build_datasets(series, options);
  const double scale = scale_override > 0 ? scale_override : ds.train.scale();
  const auto test = rescaled(ds.test, scale);

  RunManifest manifest("evaluate", args);
  manifest.add_input(o.data);
  std::vector<metrics::MetricReport> rows;
  const std::size_t in_min = input_minutes(options.spec, series);
  const std::size_t lead_min = lead_minutes(options.spec, series);
  if (o.baseline == "persistence")
    rows.push_back(metrics::evaluate_setup(
        metrics::persistence_predictor<float>(options.spec.target_offsets.size()), test,
        {in_min, lead_min, "Persistence"}, o.batch_size, o.threshold));
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& m = models[i].loaded.model;
    require_model_fits(m.config(), options.spec, series, o.checkpoints[i]);
    auto name = models[i].loaded.metadata.contains("model_name")
                    ? models[i].loaded.metadata.at("model_name")
                    : model_name(m.config().variant);
    rows.push_back(metrics::evaluate_setup(metrics::model_predictor(m), test,
                                           {in_min, lead_min, name}, o.batch_size, o.threshold));
    manifest.add_input(o.checkpoints[i]);
  }
  metrics::sort_rows(rows);

  fs::create_directories(dir);
  const fs::path table_path = dir / "report.txt", lead_path = dir / "leads.csv",
                 avg_path = dir / "averages.csv";
  write_file(report_path, [&](std::ostream& os) { metrics::write_report_csv(os, rows); });
  write_file(table_path, [&](std::ostream& os) { metrics::write_report_table(os, rows); });
  write_file(lead_path, [&](std::ostream& os) { metrics::write_lead_csv(os, rows); });
  write_file(avg_path, [&](std::ostream& os) { metrics::write_average_csv(os, rows); });
  metrics::write_report_table(out, rows);

  auto& cfg = manifest.config();
  cfg["data"] = o.data;
  cfg["checkpoints"] = o.checkpoints;
  cfg["baseline"] = o.baseline;
  cfg["window"] = window_json(window);
  cfg["scale"] = scale;
  cfg["threshold"] = o.threshold;
  cfg["batch_size"] = o.batch_size;
  cfg["test_windows"] = test.size();
  for (const auto& p : {report_path, table_path, lead_path, avg_path}) manifest.add_output(p);
  manifest.write(dir / "manifest.json");
  return 0;
}

int cmd_predict(const PredictOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  const fs::path path = o.out;
  fs::path manifest_path = path;
  manifest_path += ".manifest.json";
  refuse_overwrite(path, o.force);

  const auto ckpt = open_checkpoint(o.checkpoint);
  const auto series = load_data(o.data, ckpt.window.crop);
  const auto options = dataset_options(ckpt.window);
  const auto ds = data::build_datasets(series, options);
  const auto split = rescaled(pick_split(ds, o.split), ckpt.scale);
  if (o.window >= split.size())
    throw UsageError("--window " + std::to_string(o.window) + " is out of range; the " + o.split +
                     " split has " + std::to_string(split.size()) + " windows");
  require_model_fits(ckpt.loaded.model.config(), options.spec, series, "checkpoint");

  const std::size_t idx[] = {o.window};
  const auto batch = split.batch<float>(idx);
  auto model = ckpt.loaded.model;
  model.set_training(false);
  const auto pred = model.predict(batch.inputs);

  data::FrameSeries result;
  result.interval_minutes = series.interval_minutes;
  result.unit = series.unit;
  const Shape& s = pred.shape();
  const auto values = pred.data();
  const auto& window = split.windows()[o.window];
  for (std::size_t c = 0; c < s.c; ++c) {
    std::vector<float> frame(s.plane());
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const double raw = static_cast<double>(values[c * s.plane() + i]) * ckpt.scale;
      frame[i] = series.unit == data::Unit::binary
                     ? static_cast<float>(raw >= metrics::kRainThresholdMmPerHour)
                     : static_cast<float>(std::max(raw, 0.0));
    }
    result.frames.emplace_back(Shape{1, 1, s.h, s.w}, std::move(frame));
    if (!split.series().timestamps.empty())
      result.timestamps.push_back(split.series().timestamps[window.targets[c]]);
  }
  data::save_series(path.string(), result);

  RunManifest manifest("predict", args);
  manifest.add_input(o.data);
  manifest.add_input(o.checkpoint);
  manifest.config() = {{"checkpoint", o.checkpoint},
                       {"data", o.data},
                       {"split", o.split},
                       {"window", o.window},
                       {"anchor", window.anchor},
                       {"scale", ckpt.scale}};
  manifest.add_output(path);
  manifest.write(manifest_path);
  out << "wrote " << result.size() << " predicted frames to " << o.out << '\n';
  return 0;
}

int cmd_explain(const ExplainOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  const fs::path dir = o.out_dir;
  const fs::path index_path = dir / "index.csv";
  refuse_overwrite(index_path, o.force);

  const auto ckpt = open_checkpoint(o.checkpoint);
  const auto& model = ckpt.loaded.model;
  const auto series = load_data(o.data, ckpt.window.crop);
  const auto options = dataset_options(ckpt.window);
  const auto ds = data::build_datasets(series, options);
  const auto split = rescaled(pick_split(ds, o.split), ckpt.scale);
  if (o.input_window >= split.size())
    throw UsageError("--input-window " + std::to_string(o.input_window) +
                     " is out of range; the " + o.split + " split has " +
                     std::to_string(split.size()) + " windows");
  require_model_fits(model.config(), options.spec, series, "checkpoint");

  std::vector<std::string> layers;
  if (o.targets == "all") {
    if (model.config().variant == Variant::sar)
      for (const auto& cell : explain::suite_layout()) layers.push_back(cell.layer);
    else
      layers = explain::explain_targets(model.config());
  } else {
    std::stringstream ss(o.targets);
    for (std::string name; std::getline(ss, name, ',');)
      if (!name.empty()) layers.push_back(name);
    if (layers.empty()) throw UsageError("--targets is empty");
  }

  explain::GradCamOptions go;
  go.unit = {series.unit, ckpt.scale, series.interval_minutes};
  go.threshold = o.threshold;
  if (o.score == "sum") go.mode = explain::ScoreMode::masked_sum;
  else if (o.score == "mean") go.mode = explain::ScoreMode::masked_mean;
  else throw UsageError("--score must be sum or mean, got '" + o.score + "'");

  const std::size_t idx[] = {o.input_window};
  const auto batch = split.batch<float>(idx);
  const auto maps = explain::grad_cam(model, batch.inputs, layers, go);

  fs::create_directories(dir);
  const auto layout = explain::suite_layout();
  RunManifest manifest("explain", args);
  manifest.add_input(o.data);
  manifest.add_input(o.checkpoint);
  std::vector<fs::path> outputs;
  std::ostringstream index;
  index << "file,layer,section,row,column,raw_max,empty_score\n";
  for (const auto& hm : maps) {
    const fs::path file = dir / (hm.layer + ".nwds");
    data::FrameSeries single;
    single.interval_minutes = series.interval_minutes;
    single.frames.push_back(hm.values.template cast<float>());
    data::save_series(file.string(), single);
    outputs.push_back(file);
    if (o.ppm) {
      const fs::path image = dir / (hm.layer + ".ppm");
      write_file(image, [&](std::ostream& os) { explain::write_ppm(os, hm.values); });
      outputs.push_back(image);
    }
    auto cell = std::find_if(layout.begin(), layout.end(),
                             [&](const explain::GridCell& c) { return c.layer == hm.layer; });
    index << file.filename().string() << ',' << hm.layer << ',' << cell->section << ','
          << cell->depth << ',' << cell->column << ',' << num(hm.raw_max) << ','
          << (hm.empty_score ? 1 : 0) << '\n';
  }
  write_file(index_path, [&](std::ostream& os) { os << index.str(); });
  outputs.push_back(index_path);

  manifest.config() = {{"checkpoint", o.checkpoint}, {"data", o.data},
                       {"split", o.split},           {"input_window", o.input_window},
                       {"targets", layers},          {"score", o.score},
                       {"threshold", o.threshold},   {"scale", ckpt.scale},
                       {"ppm", o.ppm}};
  for (const auto& p : outputs) manifest.add_output(p);
  manifest.write(dir / "manifest.json");
  out << "wrote " << maps.size() << " heatmaps to " << o.out_dir
      << (maps.front().empty_score ? " (no pixel predicted above the threshold; maps are zero)" : "")
      << '\n';
  return 0;
}

}  // namespace nowcast::cli

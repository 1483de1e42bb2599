#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "commands.hpp"
#include "nowcast/conv.hpp"
#include "nowcast/errors.hpp"

namespace nowcast::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Config file arguments go right after the subcommand name, so flags given
/// on the command line come later and win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].starts_with("--config=")) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  auto sub = std::find_if(args.begin(), args.end(), [](const std::string& a) { return !a.starts_with("-"); });
  if (sub == args.end()) return args;
  const auto extra = config_arguments(path);
  args.insert(std::next(sub), extra.begin(), extra.end());
  return args;
}

using WindowFlags = std::map<CLI::Option*, std::string>;

void add_window_options(CLI::App* sub, WindowOptions& w, WindowFlags* flags = nullptr) {
  auto track = [&](CLI::Option* opt, const char* key) {
    if (flags) (*flags)[opt] = key;
  };
  track(sub->add_option("--in-frames", w.in_frames, "Input frames (6, 12 or 18; 4 with --cloud)")
            ->capture_default_str(),
        "in_frames");
  track(sub->add_option("--lead-minutes", w.lead_minutes, "Lead time of the target (30, 60, 90, 120, 180)")
            ->capture_default_str(),
        "lead_minutes");
  track(sub->add_flag("--cloud", w.cloud, "Cloud setup: 4 inputs, 6 outputs"), "setup");
  track(sub->add_option("--window-stride", w.window_stride, "Step between window anchors")
            ->capture_default_str(),
        "window_stride");
  track(sub->add_option("--rain-fraction", w.rain_fraction,
                        "Minimum share of rainy pixels for a target frame")
            ->capture_default_str(),
        "rain_fraction");
  track(sub->add_option("--crop", w.crop, "Centre crop size in pixels (0 = none)")->capture_default_str(),
        "crop");
  track(sub->add_option("--train-share", w.train_share)->capture_default_str(), "train_share");
  track(sub->add_option("--val-share", w.val_share)->capture_default_str(), "val_share");
}

void add_config_option(CLI::App* sub) {
  sub->add_option("--config", "key=value file; keys are long flag names, flags override it");
}

int error_exit(std::ostream& err, const char* kind, const std::exception& e, int code) {
  err << "error (" << kind << "): " << e.what() << '\n';
  return code;
}

}  // namespace

std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(n) + ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "config") throw UsageError(path + ": config files cannot include other configs");
    out.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
  }
  return out;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  configure_threads_from_env();

  CLI::App app{"SAR-UNet precipitation nowcasting toolkit", "nowcast"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic advecting-blob series");
  s->add_option("--seed", synth.seed)->capture_default_str();
  s->add_option("--frames", synth.frames)->capture_default_str();
  s->add_option("--size", synth.size, "Frame height and width")->capture_default_str();
  s->add_option("--blobs", synth.blobs)->capture_default_str();
  s->add_option("--wind", synth.wind, "dx,dy in pixels per frame")->capture_default_str();
  s->add_option("--growth", synth.growth, "Intensity factor per frame")->capture_default_str();
  s->add_option("--out", synth.out, "Output NWDS file")->required();
  s->add_flag("--force", synth.force, "Overwrite existing outputs");
  add_config_option(s);

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Train a model on one setup");
  t->add_option("--data", train.data, "Input NWDS series")->required();
  t->add_option("--variant", train.variant)
      ->check(CLI::IsMember({"sar", "smaat"}))
      ->capture_default_str();
  add_window_options(t, train.window);
  t->add_option("--base-channels", train.base_channels)->capture_default_str();
  t->add_option("--cbam-reduction", train.cbam_reduction, "0 = gcd(16, base channels)")
      ->capture_default_str();
  t->add_option("--output-init", train.output_init, "Output projection init: zero or kaiming")
      ->check(CLI::IsMember({"zero", "kaiming"}))
      ->capture_default_str();
  t->add_option("--seed", train.seed)->capture_default_str();
  t->add_option("--epochs", train.epochs, "Maximum epochs")->capture_default_str();
  t->add_option("--batch-size", train.batch_size)->capture_default_str();
  t->add_option("--lr", train.lr)->capture_default_str();
  t->add_option("--plateau-patience", train.plateau_patience)->capture_default_str();
  t->add_option("--lr-factor", train.lr_factor)->capture_default_str();
  t->add_option("--early-stop-patience", train.early_stop_patience)->capture_default_str();
  t->add_option("--resume", train.resume, "Continue from a resume.sar file");
  t->add_option("--out-dir", train.out_dir)->required();
  t->add_flag("--force", train.force, "Overwrite existing outputs");
  t->add_flag("--quiet", train.quiet, "No per-epoch progress");
  add_config_option(t);

  EvaluateOptions eval;
  WindowFlags eval_window_flags;
  auto* e = app.add_subcommand("evaluate", "Score checkpoints and baselines on the test split");
  e->add_option("--checkpoint", eval.checkpoints, "Model checkpoint (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  e->add_option("--data", eval.data)->required();
  e->add_option("--baseline", eval.baseline)
      ->check(CLI::IsMember({"none", "persistence"}))
      ->capture_default_str();
  add_window_options(e, eval.window, &eval_window_flags);
  e->add_option("--batch-size", eval.batch_size)->capture_default_str();
  e->add_option("--threshold", eval.threshold, "Rain threshold in mm/h")->capture_default_str();
  e->add_option("--out-dir", eval.out_dir)->required();
  e->add_flag("--force", eval.force, "Overwrite existing outputs");
  add_config_option(e);

  PredictOptions predict;
  auto* p = app.add_subcommand("predict", "Write the model prediction for one window");
  p->add_option("--checkpoint", predict.checkpoint)->required();
  p->add_option("--data", predict.data)->required();
  p->add_option("--split", predict.split)
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  p->add_option("--window", predict.window, "Window index within the split")->capture_default_str();
  p->add_option("--out", predict.out, "Output NWDS file")->required();
  p->add_flag("--force", predict.force, "Overwrite existing outputs");
  add_config_option(p);

  ExplainOptions explain;
  auto* x = app.add_subcommand("explain", "Grad-CAM heatmaps for one input window");
  x->add_option("--checkpoint", explain.checkpoint)->required();
  x->add_option("--data", explain.data)->required();
  x->add_option("--split", explain.split)
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  x->add_option("--input-window", explain.input_window, "Window index within the split")
      ->capture_default_str();
  x->add_option("--targets", explain.targets, "all, or comma-separated layer names")
      ->capture_default_str();
  x->add_option("--score", explain.score, "sum or mean over the predicted rain mask")
      ->check(CLI::IsMember({"sum", "mean"}))
      ->capture_default_str();
  x->add_option("--threshold", explain.threshold, "Rain threshold in mm/h")->capture_default_str();
  x->add_option("--out-dir", explain.out_dir)->required();
  x->add_flag("--ppm", explain.ppm, "Also write colour-mapped PPM images");
  x->add_flag("--force", explain.force, "Overwrite existing outputs");
  add_config_option(x);

  std::vector<std::string> args;
  try {
    args = expand_config(raw_args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  } catch (const UsageError& ex) {
    return error_exit(err, "usage", ex, kUsage);
  }

  try {
    if (*s) return cmd_synth(synth, raw_args, out);
    if (*t) {
      if (train.window.cloud && t->get_option("--in-frames")->count() == 0) train.window.in_frames = 4;
      return cmd_train(train, raw_args, out);
    }
    if (*e) {
      if (eval.window.cloud && e->get_option("--in-frames")->count() == 0) eval.window.in_frames = 4;
      for (const auto& [opt, key] : eval_window_flags)
        if (opt->count() > 0) eval.explicit_window_flags.push_back(key);
      return cmd_evaluate(eval, raw_args, out);
    }
    if (*p) return cmd_predict(predict, raw_args, out);
    if (*x) return cmd_explain(explain, raw_args, out);
  } catch (const UsageError& ex) {
    return error_exit(err, "usage", ex, kUsage);
  } catch (const NumericError& ex) {
    return error_exit(err, "numeric", ex, kNumeric);
  } catch (const DimensionError& ex) {
    return error_exit(err, "dimension", ex, kDataOrConfig);
  } catch (const ConfigError& ex) {
    return error_exit(err, "config", ex, kDataOrConfig);
  } catch (const DataError& ex) {
    return error_exit(err, "data", ex, kDataOrConfig);
  } catch (const Error& ex) {
    return error_exit(err, "nowcast", ex, kDataOrConfig);
  } catch (const std::filesystem::filesystem_error& ex) {
    return error_exit(err, "filesystem", ex, kDataOrConfig);
  } catch (const std::exception& ex) {
    return error_exit(err, "internal", ex, kInternal);
  }
  return kUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace nowcast::cli

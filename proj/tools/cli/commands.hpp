#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace nowcast::cli {

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t frames = 200;
  std::size_t size = 96;
  std::size_t blobs = 6;
  std::string wind = "1,0";  ///< "dx,dy" in pixels per frame
  double growth = 1.0;
  std::string out;
  bool force = false;
};

/// How windows are cut from a series; shared by every command that reads data.
struct WindowOptions {
  std::size_t in_frames = 12;
  std::size_t lead_minutes = 30;
  bool cloud = false;
  std::size_t window_stride = 1;
  double rain_fraction = 0.5;
  std::size_t crop = 0;  ///< centre crop size, 0 keeps the full frame
  double train_share = 0.7;
  double val_share = 0.15;
};

struct TrainOptions {
  std::string data;
  std::string variant = "sar";
  WindowOptions window;
  std::size_t base_channels = 64;
  std::size_t cbam_reduction = 0;  ///< 0 picks gcd(16, base_channels)
  std::string output_init = "zero";  ///< zero or kaiming
  std::uint64_t seed = 0;
  std::size_t epochs = 200;
  std::size_t batch_size = 6;
  double lr = 1e-3;
  std::size_t plateau_patience = 4;
  double lr_factor = 0.1;
  std::size_t early_stop_patience = 15;
  std::string resume;
  std::string out_dir;
  bool force = false;
  bool quiet = false;
};

struct EvaluateOptions {
  std::vector<std::string> checkpoints;
  std::string data;
  std::string baseline = "none";
  WindowOptions window;
  /// Window flags given on the command line; they must agree with checkpoints.
  std::vector<std::string> explicit_window_flags;
  std::size_t batch_size = 6;
  double threshold = 0.5;
  std::string out_dir;
  bool force = false;
};

struct PredictOptions {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::size_t window = 0;
  std::string out;
  bool force = false;
};

struct ExplainOptions {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::size_t input_window = 0;
  std::string targets = "all";
  std::string score = "sum";
  double threshold = 0.5;
  std::string out_dir;
  bool ppm = false;  ///< also write colour-mapped PPM images
  bool force = false;
};

/// Every command receives the full argument list for its manifest.
int cmd_synth(const SynthOptions& o, const std::vector<std::string>& args, std::ostream& out);
int cmd_train(const TrainOptions& o, const std::vector<std::string>& args, std::ostream& out);
int cmd_evaluate(const EvaluateOptions& o, const std::vector<std::string>& args,
                 std::ostream& out);
int cmd_predict(const PredictOptions& o, const std::vector<std::string>& args, std::ostream& out);
int cmd_explain(const ExplainOptions& o, const std::vector<std::string>& args, std::ostream& out);

}  // namespace nowcast::cli

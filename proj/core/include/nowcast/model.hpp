#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nowcast/blocks.hpp"
#include "nowcast/tape.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

enum class Variant {
  sar,    ///< residual DSC blocks, CBAM output feeds skip and next level, 16x bottleneck
  smaat,  ///< smaat-config ablation: plain double-DSC blocks, CBAM feeds skip only, 8x bottleneck
};

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);

struct ModelConfig {
  std::size_t in_channels = 12;
  std::size_t out_channels = 1;
  std::size_t base_channels = 64;
  std::size_t depth = 4;
  Variant variant = Variant::sar;
  std::size_t cbam_reduction = 16;
  std::size_t cbam_kernel = 7;
  bool shortcut_batch_norm = false;
  /// Zero output projection weights at construction (first prediction = bias).
  bool zero_output_init = false;

  std::size_t bottleneck_channels() const {
    return base_channels * (variant == Variant::sar ? 16 : 8);
  }
  /// Throws ConfigError naming the violated rule.
  void validate() const;

  std::map<std::string, std::string> to_key_values() const;
  /// Parses the keys written by to_key_values(); unknown keys are ignored.
  static ModelConfig from_key_values(const std::map<std::string, std::string>& kv);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Activations retained for the layers named in ForwardOptions::trace.
template <Real T>
struct ActivationTrace {
  std::map<std::string, Tensor<T>> activations;

  bool contains(const std::string& name) const { return activations.contains(name); }
  const Tensor<T>& at(const std::string& name) const;
  /// Gradient of the traced activation after tape.backward(); empty if unreached.
  std::span<const T> gradient(const std::string& name, const Tape<T>& tape) const {
    return tape.grad_of(at(name));
  }
};

template <Real T>
struct ForwardOptions {
  /// Layer names to retain; each must be one of SarUNet::trace_names().
  std::vector<std::string> trace;
  /// Optional hook applied to every intervention point (enc{d}.block,
  /// enc{d}.cbam, dec{d}.reduce, dec{d}.block, out); its return value replaces
  /// the activation downstream. Used by finite-difference oracles.
  std::function<Tensor<T>(const std::string& name, const Tensor<T>& activation)> intervene;
};

template <Real T>
struct ForwardResult {
  Tensor<T> output;
  ActivationTrace<T> trace;
};

/// SAR-UNet encoder/decoder (and the smaat-config ablation).
///
/// Layer names: enc{0..4}.block|cbam, dec{0..3}.reduce|block, out. Decoder
/// depth 3 is the level right below the bottleneck and depth 0 feeds the
/// output convolution. Parameter names extend those prefixes, e.g.
/// enc0.block.dsc1.depthwise.
template <Real T>
class SarUNet {
 public:
  using value_type = T;
  static constexpr std::size_t kLevels = 5;

  SarUNet(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Batch-norm mode; a freshly built model starts in training mode.
  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  ForwardResult<T> forward(Tape<T>* tape, const Tensor<T>& x,
                           const ForwardOptions<T>& options = {}) const;

  /// Untraced forward without a tape.
  Tensor<T> predict(const Tensor<T>& x) const { return forward(nullptr, x).output; }

  void parameters(const std::string& prefix, NamedTensors<T>& out) const;
  void buffers(const std::string& prefix, NamedTensors<T>& out) const;
  NamedTensors<T> parameters() const;
  NamedTensors<T> buffers() const;
  /// Parameters followed by buffers; the checkpoint payload.
  NamedTensors<T> state() const;
  /// Copies values by name; names and shapes must match exactly.
  void load_state(const NamedTensors<T>& state);
  void zero_grad();

  /// Every name accepted by ForwardOptions::trace for this configuration.
  std::vector<std::string> trace_names() const;

  std::array<nn::ResidualDscBlock<T>, kLevels> enc_block;
  std::array<nn::Cbam<T>, kLevels> enc_cbam;
  std::array<std::optional<nn::Pointwise<T>>, kLevels - 1> dec_reduce;  // sar only
  std::array<nn::ResidualDscBlock<T>, kLevels - 1> dec_block;
  nn::Pointwise<T> out;

 private:
  ModelConfig config_;
  bool training_ = true;
};

/// Same configuration and values in another precision.
template <Real To, Real From>
SarUNet<To> convert_model(const SarUNet<From>& model);

/// Persistence baseline: the last input channel repeated out_channels times.
template <Real T>
Tensor<T> persistence_forward(const Tensor<T>& x, std::size_t out_channels);

/// Trainable parameters of a regular-convolution UNet (3x3 double convs with
/// batch norm, bilinear upsampling) at the smaat-config widths. Reference
/// point for parameter comparisons; not a runnable model.
std::size_t unet_reference_param_count(const ModelConfig& config);

using Metadata = std::map<std::string, std::string>;

/// "SARv1" model checkpoint: magic, u32 line count, length-prefixed
/// key=value lines (model config plus metadata), u64 tensor count, then
/// (length-prefixed name, T4v1 record) pairs.
template <Real T>
void save_checkpoint(std::ostream& os, const SarUNet<T>& model, const Metadata& metadata = {});

template <Real T>
struct LoadedModel {
  SarUNet<T> model;
  Metadata metadata;
};

/// Reads a checkpoint into precision T (stored dtype is converted).
template <Real T>
LoadedModel<T> load_checkpoint(std::istream& is);

}  // namespace nowcast

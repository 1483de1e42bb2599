#include "nowcast/model.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <set>

#include "nowcast/ops.hpp"
#include "nowcast/serialize.hpp"

namespace nowcast {

namespace {

constexpr std::string_view kCheckpointMagic = "SARv1";

const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys = {
      "in_channels",    "out_channels", "base_channels",       "depth",
      "variant",        "cbam_reduction", "cbam_kernel",       "shortcut_batch_norm",
      "bottleneck_channels", "zero_output_init"};
  return keys;
}

std::size_t parse_count(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("model config is missing key '" + key + "'");
  std::size_t v = 0;
  const auto& s = it->second;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ConfigError("model config key '" + key + "' is not a count: '" + s + "'");
  return v;
}

std::string level_name(const char* side, std::size_t d) {
  return std::string(side) + std::to_string(d);
}

}  // namespace

std::string_view to_string(Variant v) { return v == Variant::sar ? "sar" : "smaat"; }

Variant parse_variant(std::string_view s) {
  if (s == "sar") return Variant::sar;
  if (s == "smaat") return Variant::smaat;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected sar or smaat)");
}

void ModelConfig::validate() const {
  if (in_channels == 0) throw ConfigError("in_channels must be >= 1");
  if (out_channels == 0) throw ConfigError("out_channels must be >= 1");
  if (base_channels == 0) throw ConfigError("base_channels must be >= 1");
  if (depth != 4)
    throw ConfigError("depth must be 4 (four poolings, five levels), got " +
                      std::to_string(depth));
  if (cbam_reduction == 0 || base_channels % cbam_reduction != 0)
    throw ConfigError("cbam_reduction " + std::to_string(cbam_reduction) +
                      " must divide every encoder width; base_channels " +
                      std::to_string(base_channels) + " is not divisible by it");
  if (cbam_kernel % 2 == 0) throw ConfigError("cbam_kernel must be odd");
  if (variant == Variant::smaat && shortcut_batch_norm)
    throw ConfigError("shortcut_batch_norm needs residual blocks (variant sar)");
}

std::map<std::string, std::string> ModelConfig::to_key_values() const {
  return {{"in_channels", std::to_string(in_channels)},
          {"out_channels", std::to_string(out_channels)},
          {"base_channels", std::to_string(base_channels)},
          {"depth", std::to_string(depth)},
          {"variant", std::string(to_string(variant))},
          {"cbam_reduction", std::to_string(cbam_reduction)},
          {"cbam_kernel", std::to_string(cbam_kernel)},
          {"shortcut_batch_norm", shortcut_batch_norm ? "1" : "0"},
          {"bottleneck_channels", std::to_string(bottleneck_channels())},
          {"zero_output_init", zero_output_init ? "1" : "0"}};
}

ModelConfig ModelConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.in_channels = parse_count(kv, "in_channels");
  c.out_channels = parse_count(kv, "out_channels");
  c.base_channels = parse_count(kv, "base_channels");
  c.depth = parse_count(kv, "depth");
  auto v = kv.find("variant");
  if (v == kv.end()) throw ConfigError("model config is missing key 'variant'");
  c.variant = parse_variant(v->second);
  c.cbam_reduction = parse_count(kv, "cbam_reduction");
  c.cbam_kernel = parse_count(kv, "cbam_kernel");
  c.shortcut_batch_norm = parse_count(kv, "shortcut_batch_norm") != 0;
  if (kv.contains("zero_output_init")) c.zero_output_init = parse_count(kv, "zero_output_init") != 0;
  return c;
}

template <Real T>
const Tensor<T>& ActivationTrace<T>::at(const std::string& name) const {
  auto it = activations.find(name);
  if (it == activations.end()) throw UsageError("activation '" + name + "' was not traced");
  return it->second;
}

template <Real T>
SarUNet<T>::SarUNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  Rng rng(seed);
  const std::size_t b = config.base_channels;
  const bool sar = config.variant == Variant::sar;
  const std::size_t widths[kLevels] = {b, 2 * b, 4 * b, 8 * b, config.bottleneck_channels()};

  std::size_t cin = config.in_channels;
  for (std::size_t d = 0; d < kLevels; ++d) {
    enc_block[d] = nn::ResidualDscBlock<T>(
        {.in_channels = cin,
         .mid_channels = widths[d],
         .out_channels = widths[d],
         .residual = sar,
         .shortcut_batch_norm = config.shortcut_batch_norm},
        rng);
    enc_cbam[d] = nn::Cbam<T>(
        {.channels = widths[d], .reduction = config.cbam_reduction,
         .spatial_kernel = config.cbam_kernel},
        rng);
    cin = widths[d];
  }

  // Decoder, built bottom-up (depth 3 first).
  std::size_t below = widths[kLevels - 1];
  for (std::size_t k = kLevels - 1; k-- > 0;) {
    const std::size_t skip = widths[k];
    if (sar) {
      dec_reduce[k].emplace(below, below / 2, rng);
      const std::size_t merged = below / 2 + skip;
      dec_block[k] = nn::ResidualDscBlock<T>(
          {.in_channels = merged,
           .mid_channels = merged / 2,
           .out_channels = merged / 2,
           .residual = true,
           .shortcut_batch_norm = config.shortcut_batch_norm},
          rng);
      below = merged / 2;
    } else {
      // SmaAt-UNet up path: concat, then a double DSC with mid = in / 2 whose
      // output matches the next skip width (b at the top level).
      const std::size_t merged = below + skip;
      const std::size_t outc = k == 0 ? b : widths[k - 1];
      dec_block[k] = nn::ResidualDscBlock<T>(
          {.in_channels = merged,
           .mid_channels = merged / 2,
           .out_channels = outc,
           .residual = false,
           .shortcut_batch_norm = false},
          rng);
      below = outc;
    }
  }
  out = nn::Pointwise<T>(b, config.out_channels, rng);
  if (config.zero_output_init) std::ranges::fill(out.weight.mutable_data(), T(0));
}

template <Real T>
ForwardResult<T> SarUNet<T>::forward(Tape<T>* tape, const Tensor<T>& x,
                                     const ForwardOptions<T>& options) const {
  const Shape s = x.shape();
  if (s.c != config_.in_channels)
    throw DimensionError("model expects " + std::to_string(config_.in_channels) +
                         " input channels, got " + s.str());
  if (s.h % 16 != 0 || s.w % 16 != 0)
    throw DimensionError("input height and width must be divisible by 16, got " + s.str());

  std::set<std::string> wanted(options.trace.begin(), options.trace.end());
  if (!wanted.empty()) {
    const auto valid = trace_names();
    for (const auto& name : wanted)
      if (std::find(valid.begin(), valid.end(), name) == valid.end()) {
        std::string list;
        for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
        throw UsageError("unknown trace layer '" + name + "'; valid names: " + list);
      }
  }

  ForwardResult<T> result;
  auto keep = [&](const std::string& name, const Tensor<T>& t) {
    if (t.defined() && wanted.contains(name)) result.trace.activations[name] = t;
  };
  auto hook = [&](const std::string& name, Tensor<T> t) {
    if (options.intervene) t = options.intervene(name, t);
    keep(name, t);
    return t;
  };
  auto keep_block = [&](const std::string& name, const nn::BlockOutput<T>& b) {
    keep(name + ".dsc_path", b.dsc_path);
    keep(name + ".shortcut", b.shortcut);
  };

  const bool sar = config_.variant == Variant::sar;
  std::array<Tensor<T>, kLevels> skips;
  Tensor<T> h = x;
  for (std::size_t d = 0; d < kLevels; ++d) {
    const std::string lvl = level_name("enc", d);
    auto blk = enc_block[d].forward(tape, h, training_);
    keep_block(lvl + ".block", blk);
    auto block_out = hook(lvl + ".block", blk.output);
    auto att = hook(lvl + ".cbam", enc_cbam[d].forward(tape, block_out).output);
    skips[d] = att;
    if (d + 1 == kLevels) break;
    const Tensor<T>& pool_input = sar ? att : block_out;
    keep(lvl + ".pool_input", pool_input);
    h = ops::max_pool2(tape, pool_input);
  }

  h = skips[kLevels - 1];
  for (std::size_t k = kLevels - 1; k-- > 0;) {
    const std::string lvl = level_name("dec", k);
    if (dec_reduce[k]) h = hook(lvl + ".reduce", dec_reduce[k]->forward(tape, h));
    h = ops::upsample_bilinear2(tape, h);
    keep(lvl + ".skip", skips[k]);
    auto merged = ops::concat_channels(tape, skips[k], h);
    auto blk = dec_block[k].forward(tape, merged, training_);
    keep_block(lvl + ".block", blk);
    h = hook(lvl + ".block", blk.output);
  }
  result.output = hook("out", out.forward(tape, h));
  return result;
}

template <Real T>
std::vector<std::string> SarUNet<T>::trace_names() const {
  const bool sar = config_.variant == Variant::sar;
  std::vector<std::string> names;
  for (std::size_t d = 0; d < kLevels; ++d) {
    const std::string lvl = level_name("enc", d);
    names.push_back(lvl + ".block");
    names.push_back(lvl + ".block.dsc_path");
    if (sar) names.push_back(lvl + ".block.shortcut");
    names.push_back(lvl + ".cbam");
    if (d + 1 < kLevels) names.push_back(lvl + ".pool_input");
  }
  for (std::size_t k = kLevels - 1; k-- > 0;) {
    const std::string lvl = level_name("dec", k);
    if (sar) names.push_back(lvl + ".reduce");
    names.push_back(lvl + ".skip");
    names.push_back(lvl + ".block");
    names.push_back(lvl + ".block.dsc_path");
    if (sar) names.push_back(lvl + ".block.shortcut");
  }
  names.push_back("out");
  return names;
}

template <Real T>
void SarUNet<T>::parameters(const std::string& prefix, NamedTensors<T>& list) const {
  for (std::size_t d = 0; d < kLevels; ++d) {
    const std::string lvl = prefix + level_name("enc", d);
    enc_block[d].parameters(lvl + ".block.", list);
    enc_cbam[d].parameters(lvl + ".cbam.", list);
  }
  for (std::size_t k = kLevels - 1; k-- > 0;) {
    const std::string lvl = prefix + level_name("dec", k);
    if (dec_reduce[k]) dec_reduce[k]->parameters(lvl + ".reduce.", list);
    dec_block[k].parameters(lvl + ".block.", list);
  }
  out.parameters(prefix + "out.", list);
}

template <Real T>
void SarUNet<T>::buffers(const std::string& prefix, NamedTensors<T>& list) const {
  for (std::size_t d = 0; d < kLevels; ++d)
    enc_block[d].buffers(prefix + level_name("enc", d) + ".block.", list);
  for (std::size_t k = kLevels - 1; k-- > 0;)
    dec_block[k].buffers(prefix + level_name("dec", k) + ".block.", list);
}

template <Real T>
NamedTensors<T> SarUNet<T>::parameters() const {
  NamedTensors<T> list;
  parameters("", list);
  return list;
}

template <Real T>
NamedTensors<T> SarUNet<T>::buffers() const {
  NamedTensors<T> list;
  buffers("", list);
  return list;
}

template <Real T>
NamedTensors<T> SarUNet<T>::state() const {
  auto list = parameters();
  buffers("", list);
  return list;
}

template <Real T>
void SarUNet<T>::load_state(const NamedTensors<T>& incoming) {
  auto mine = state();
  if (mine.size() != incoming.size())
    throw DataError("state has " + std::to_string(incoming.size()) + " tensors, model expects " +
                    std::to_string(mine.size()));
  std::map<std::string, const Tensor<T>*> by_name;
  for (const auto& [name, t] : incoming) by_name[name] = &t;
  for (auto& [name, t] : mine) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("state is missing tensor '" + name + "'");
    if (it->second->shape() != t.shape())
      throw DimensionError("tensor '" + name + "' has shape " + it->second->shape().str() +
                           ", model expects " + t.shape().str());
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

template <Real T>
void SarUNet<T>::zero_grad() {
  for (auto& [name, t] : parameters()) t.zero_grad();
}

template <Real To, Real From>
SarUNet<To> convert_model(const SarUNet<From>& model) {
  SarUNet<To> result(model.config(), 0);
  NamedTensors<To> converted;
  for (const auto& [name, t] : model.state()) converted.emplace_back(name, t.template cast<To>());
  result.load_state(converted);
  result.set_training(model.training());
  return result;
}

template <Real T>
Tensor<T> persistence_forward(const Tensor<T>& x, std::size_t out_channels) {
  const Shape s = x.shape();
  if (out_channels == 0) throw ConfigError("persistence needs out_channels >= 1");
  const Shape os{s.n, out_channels, s.h, s.w};
  std::vector<T> out(os.numel());
  auto xd = x.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    auto last = xd.subspan(s.offset(n, s.c - 1, 0, 0), s.plane());
    for (std::size_t k = 0; k < out_channels; ++k)
      std::copy(last.begin(), last.end(), out.begin() + os.offset(n, k, 0, 0));
  }
  return Tensor<T>::from_op(os, std::move(out));
}

std::size_t unet_reference_param_count(const ModelConfig& config) {
  // 3x3 conv (no bias) + BN(gamma, beta), twice
  auto double_conv = [](std::size_t cin, std::size_t mid, std::size_t cout) {
    return 9 * cin * mid + 2 * mid + 9 * mid * cout + 2 * cout;
  };
  const std::size_t b = config.base_channels;
  std::size_t total = double_conv(config.in_channels, b, b) + double_conv(b, 2 * b, 2 * b) +
                      double_conv(2 * b, 4 * b, 4 * b) + double_conv(4 * b, 8 * b, 8 * b) +
                      double_conv(8 * b, 8 * b, 8 * b);
  total += double_conv(16 * b, 8 * b, 4 * b) + double_conv(8 * b, 4 * b, 2 * b) +
           double_conv(4 * b, 2 * b, b) + double_conv(2 * b, b, b);
  total += b * config.out_channels + config.out_channels;
  return total;
}

template <Real T>
void save_checkpoint(std::ostream& os, const SarUNet<T>& model, const Metadata& metadata) {
  auto lines = model.config().to_key_values();
  for (const auto& [k, v] : metadata) {
    if (config_keys().contains(k))
      throw UsageError("metadata key '" + k + "' collides with a model config key");
    if (k.find('=') != std::string::npos)
      throw UsageError("metadata key '" + k + "' must not contain '='");
    lines[k] = v;
  }
  io::put_magic(os, kCheckpointMagic);
  io::put_u32(os, static_cast<std::uint32_t>(lines.size()));
  for (const auto& [k, v] : lines) io::put_string(os, k + "=" + v);
  const auto state = model.state();
  io::put_u64(os, state.size());
  for (const auto& [name, t] : state) {
    io::put_string(os, name);
    io::write_tensor(os, t);
  }
  if (!os) throw DataError("failed writing checkpoint");
}

template <Real T>
LoadedModel<T> load_checkpoint(std::istream& is) {
  io::expect_magic(is, kCheckpointMagic);
  const std::uint32_t count = io::get_u32(is);
  std::map<std::string, std::string> kv;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string line = io::get_string(is);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const ModelConfig config = ModelConfig::from_key_values(kv);
  Metadata metadata;
  for (const auto& [k, v] : kv)
    if (!config_keys().contains(k)) metadata[k] = v;

  const std::uint64_t tensors = io::get_u64(is);
  NamedTensors<T> state;
  for (std::uint64_t i = 0; i < tensors; ++i) {
    std::string name = io::get_string(is);
    state.emplace_back(std::move(name), io::read_tensor<T>(is));
  }
  LoadedModel<T> loaded{SarUNet<T>(config, 0), std::move(metadata)};
  loaded.model.load_state(state);
  return loaded;
}

#define NOWCAST_INSTANTIATE_MODEL(T)                                                  \
  template struct ActivationTrace<T>;                                                 \
  template class SarUNet<T>;                                                          \
  template Tensor<T> persistence_forward<T>(const Tensor<T>&, std::size_t);           \
  template void save_checkpoint<T>(std::ostream&, const SarUNet<T>&, const Metadata&); \
  template LoadedModel<T> load_checkpoint<T>(std::istream&);

NOWCAST_INSTANTIATE_MODEL(float)
NOWCAST_INSTANTIATE_MODEL(double)
#undef NOWCAST_INSTANTIATE_MODEL

template SarUNet<float> convert_model<float, float>(const SarUNet<float>&);
template SarUNet<double> convert_model<double, float>(const SarUNet<float>&);
template SarUNet<float> convert_model<float, double>(const SarUNet<double>&);
template SarUNet<double> convert_model<double, double>(const SarUNet<double>&);

}  // namespace nowcast

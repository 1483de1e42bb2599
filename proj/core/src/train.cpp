#include "nowcast/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>

#include "nowcast/random.hpp"
#include "nowcast/serialize.hpp"

namespace nowcast::train {

namespace {

constexpr std::string_view kOptimizerMagic = "OPTv1";

template <Real T>
NamedTensors<T> snapshot(const NamedTensors<T>& state) {
  NamedTensors<T> out;
  out.reserve(state.size());
  for (const auto& [name, t] : state) out.emplace_back(name, t.template cast<T>());
  return out;
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
  io::put_u64(os, v.size());
  for (double x : v) io::put_f64(os, x);
}

std::vector<double> get_doubles(std::istream& is) {
  const std::uint64_t n = io::get_u64(is);
  std::vector<double> v;
  v.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) v.push_back(io::get_f64(is));
  return v;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr0 > 0)) throw ConfigError("lr0 must be positive");
  if (!(lr_factor > 0 && lr_factor < 1)) throw ConfigError("lr_factor must lie in (0,1)");
  if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
    throw ConfigError("Adam betas must lie in [0,1)");
  if (!(adam_eps > 0)) throw ConfigError("Adam eps must be positive");
}

PlateauScheduler::PlateauScheduler(const TrainConfig& c)
    : lr0_(c.lr0),
      factor_(c.lr_factor),
      plateau_patience_(c.plateau_patience),
      stop_patience_(c.early_stop_patience),
      reset_on_drop_(c.reset_plateau_on_drop) {}

PlateauScheduler::Decision PlateauScheduler::step(double val_loss) {
  if (std::isnan(val_loss))
    throw NumericError("validation loss is NaN at epoch " + std::to_string(epoch_ + 1));
  Decision d;
  ++epoch_;
  const bool first = epoch_ == 1;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    d.improved = true;
  }
  if (d.improved && !first) {
    since_improvement_ = 0;
    plateau_count_ = 0;
  } else {
    ++since_improvement_;
    ++plateau_count_;
  }
  if (plateau_count_ >= plateau_patience_) {
    ++drops_;
    d.lr_dropped = true;
    plateau_count_ = reset_on_drop_ ? 0 : plateau_count_;
  }
  d.stop = since_improvement_ >= stop_patience_;
  d.lr = lr();
  return d;
}

double PlateauScheduler::lr() const {
  return lr0_ * std::pow(factor_, static_cast<double>(drops_));
}

void PlateauScheduler::write(std::ostream& os) const {
  io::put_f64(os, lr0_);
  io::put_f64(os, factor_);
  io::put_u64(os, plateau_patience_);
  io::put_u64(os, stop_patience_);
  io::put_u8(os, reset_on_drop_ ? 1 : 0);
  io::put_f64(os, best_);
  for (std::size_t v : {best_epoch_, epoch_, since_improvement_, plateau_count_, drops_})
    io::put_u64(os, v);
}

void PlateauScheduler::read(std::istream& is) {
  lr0_ = io::get_f64(is);
  factor_ = io::get_f64(is);
  plateau_patience_ = io::get_u64(is);
  stop_patience_ = io::get_u64(is);
  reset_on_drop_ = io::get_u8(is) != 0;
  best_ = io::get_f64(is);
  best_epoch_ = io::get_u64(is);
  epoch_ = io::get_u64(is);
  since_improvement_ = io::get_u64(is);
  plateau_count_ = io::get_u64(is);
  drops_ = io::get_u64(is);
}

template <Real T>
void Adam<T>::step(const NamedTensors<T>& params, double lr) {
  for (const auto& [name, p] : params)
    if (!p.requires_grad()) throw UsageError("parameter '" + name + "' has no gradient buffer");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, param] : params) {
    Tensor<T> p = param;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(p.numel(), 0.0);
      v.assign(p.numel(), 0.0);
    } else if (m.size() != p.numel()) {
      throw DimensionError("Adam state for '" + name + "' has " + std::to_string(m.size()) +
                           " entries, parameter has " + std::to_string(p.numel()));
    }
    auto w = p.mutable_data();
    auto g = std::as_const(p).grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const double update = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
    }
  }
}

template <Real T>
void Adam<T>::write(std::ostream& os) const {
  io::put_f64(os, beta1_);
  io::put_f64(os, beta2_);
  io::put_f64(os, eps_);
  io::put_u64(os, t_);
  io::put_u64(os, m_.size());
  for (const auto& [name, m] : m_) {
    io::put_string(os, name);
    put_doubles(os, m);
    put_doubles(os, v_.at(name));
  }
}

template <Real T>
void Adam<T>::read(std::istream& is) {
  beta1_ = io::get_f64(is);
  beta2_ = io::get_f64(is);
  eps_ = io::get_f64(is);
  t_ = io::get_u64(is);
  m_.clear();
  v_.clear();
  const std::uint64_t n = io::get_u64(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = io::get_string(is);
    m_[name] = get_doubles(is);
    v_[name] = get_doubles(is);
  }
}

template <Real T>
double evaluate_mse(const SarUNet<T>& model, const data::WindowDataset& dataset,
                    std::size_t batch_size) {
  if (dataset.size() == 0) throw DataError("cannot evaluate on an empty split");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  SarUNet<T> eval = model;  // shares parameters, private mode flag
  eval.set_training(false);
  double sum = 0;
  std::size_t count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < dataset.size(); begin += batch_size) {
    idx.clear();
    for (std::size_t i = begin; i < std::min(dataset.size(), begin + batch_size); ++i) idx.push_back(i);
    const auto batch = dataset.batch<T>(idx);
    const auto pred = eval.predict(batch.inputs);
    const auto p = pred.data();
    const auto t = batch.targets.data();
    if (p.size() != t.size())
      throw DimensionError("prediction " + pred.shape().str() + " does not match target " +
                           batch.targets.shape().str());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
      sum += d * d;
    }
    count += p.size();
  }
  return sum / static_cast<double>(count);
}

template <Real T>
FitResult<T> fit(SarUNet<T>& model, const data::WindowDataset& train_set,
                 const data::WindowDataset& val_set, const TrainConfig& config,
                 const FitHooks<T>& hooks, const TrainState<T>* resume) {
  config.validate();
  if (train_set.size() == 0) throw DataError("training split is empty");
  if (val_set.size() == 0) throw DataError("validation split is empty");

  FitResult<T> result;
  TrainState<T>& st = result.state;
  Rng rng(config.seed);
  if (resume) {
    st = *resume;
    st.best_state = snapshot(resume->best_state);
    rng.set_state(st.rng_state);
    st.finished = st.scheduler.stopped();
  } else {
    st.scheduler = PlateauScheduler(config);
    st.optimizer = Adam<T>(config);
  }

  const auto params = model.parameters();
  std::vector<std::size_t> order(train_set.size());
  std::vector<std::size_t> idx;
  using clock = std::chrono::steady_clock;

  while (!st.finished && st.epochs_done() < config.max_epochs) {
    const auto started = clock::now();
    const std::size_t epoch = st.epochs_done() + 1;
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    const double lr = st.scheduler.lr();
    model.set_training(true);
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                 order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto batch = train_set.batch<T>(idx);
      Tape<T> tape;
      model.zero_grad();
      const auto pred = model.forward(&tape, batch.inputs).output;
      const auto loss = mse_loss(&tape, pred, batch.targets);
      const double value = loss.item();
      if (!std::isfinite(value) || value > config.divergence_limit)
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(begin / config.batch_size + 1) + ": loss " +
                           std::to_string(value) + " (limit " +
                           std::to_string(config.divergence_limit) + ")");
      tape.backward(loss);
      st.optimizer.step(params, lr);
      sum += value * static_cast<double>(batch.targets.numel());
      count += batch.targets.numel();
    }

    const double val = evaluate_mse(model, val_set, config.batch_size);
    model.set_training(false);
    const auto decision = st.scheduler.step(val);
    if (decision.improved) st.best_state = snapshot(model.state());

    const std::chrono::duration<double> elapsed = clock::now() - started;
    st.history.push_back({epoch, sum / static_cast<double>(count), val, lr, elapsed.count()});
    st.rng_state = rng.state();
    st.finished = decision.stop || st.epochs_done() >= config.max_epochs;
    result.stopped_early = decision.stop;
    if (hooks.on_epoch_end) hooks.on_epoch_end(model, st);
  }

  if (!st.best_state.empty()) model.load_state(st.best_state);
  model.set_training(false);
  return result;
}

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history,
                       bool with_seconds) {
  os << "epoch,train_mse,val_mse,lr" << (with_seconds ? ",seconds\n" : "\n");
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g", r.epoch, r.train_mse, r.val_mse, r.lr);
    os << buf;
    if (with_seconds) {
      std::snprintf(buf, sizeof buf, ",%.3f", r.seconds);
      os << buf;
    }
    os << '\n';
  }
}

template <Real T>
void save_training_checkpoint(std::ostream& os, const SarUNet<T>& model,
                              const TrainState<T>& state, const Metadata& metadata) {
  save_checkpoint(os, model, metadata);
  io::put_magic(os, kOptimizerMagic);
  state.scheduler.write(os);
  state.optimizer.write(os);
  io::put_string(os, state.rng_state);
  io::put_u8(os, state.finished ? 1 : 0);
  io::put_u64(os, state.history.size());
  for (const auto& r : state.history) {
    io::put_u64(os, r.epoch);
    for (double v : {r.train_mse, r.val_mse, r.lr, r.seconds}) io::put_f64(os, v);
  }
  io::put_u64(os, state.best_state.size());
  for (const auto& [name, t] : state.best_state) {
    io::put_string(os, name);
    io::write_tensor(os, t);
  }
  if (!os) throw DataError("failed writing training checkpoint");
}

template <Real T>
LoadedTraining<T> load_training_checkpoint(std::istream& is) {
  LoadedTraining<T> out{load_checkpoint<T>(is), {}};
  io::expect_magic(is, kOptimizerMagic);
  auto& st = out.state;
  st.scheduler.read(is);
  st.optimizer.read(is);
  st.rng_state = io::get_string(is);
  st.finished = io::get_u8(is) != 0;
  const std::uint64_t rows = io::get_u64(is);
  for (std::uint64_t i = 0; i < rows; ++i) {
    EpochRecord r;
    r.epoch = io::get_u64(is);
    r.train_mse = io::get_f64(is);
    r.val_mse = io::get_f64(is);
    r.lr = io::get_f64(is);
    r.seconds = io::get_f64(is);
    st.history.push_back(r);
  }
  const std::uint64_t tensors = io::get_u64(is);
  for (std::uint64_t i = 0; i < tensors; ++i) {
    std::string name = io::get_string(is);
    st.best_state.emplace_back(std::move(name), io::read_tensor<T>(is));
  }
  return out;
}

#define NOWCAST_INSTANTIATE_TRAIN(T)                                                          \
  template class Adam<T>;                                                                     \
  template double evaluate_mse<T>(const SarUNet<T>&, const data::WindowDataset&, std::size_t); \
  template FitResult<T> fit<T>(SarUNet<T>&, const data::WindowDataset&,                       \
                               const data::WindowDataset&, const TrainConfig&,                \
                               const FitHooks<T>&, const TrainState<T>*);                     \
  template void save_training_checkpoint<T>(std::ostream&, const SarUNet<T>&,                 \
                                            const TrainState<T>&, const Metadata&);           \
  template LoadedTraining<T> load_training_checkpoint<T>(std::istream&);

NOWCAST_INSTANTIATE_TRAIN(float)
NOWCAST_INSTANTIATE_TRAIN(double)
#undef NOWCAST_INSTANTIATE_TRAIN

}  // namespace nowcast::train

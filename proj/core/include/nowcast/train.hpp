#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "nowcast/data.hpp"
#include "nowcast/model.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast::train {

struct TrainConfig {
  double lr0 = 1e-3;
  std::size_t plateau_patience = 4;
  double lr_factor = 0.1;
  std::size_t early_stop_patience = 15;
  std::size_t max_epochs = 200;
  std::size_t batch_size = 6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  /// Restart the plateau count after a learning-rate drop.
  bool reset_plateau_on_drop = true;
  /// Abort when a training batch loss exceeds this value.
  double divergence_limit = 1e6;

  /// Throws ConfigError naming the violated rule.
  void validate() const;
};

/// Learning-rate plateau schedule plus early stopping, driven once per epoch
/// by the validation loss.
///
/// An epoch improves iff its loss is strictly below the best so far. The
/// first epoch only sets the reference and counts as a non-improving epoch
/// for both counters. After `plateau_patience` non-improving epochs the rate
/// is multiplied by lr_factor; after `early_stop_patience` non-improving
/// epochs training stops. The early-stop count ignores rate drops.
class PlateauScheduler {
 public:
  struct Decision {
    bool improved = false;
    bool lr_dropped = false;
    bool stop = false;
    double lr = 0;
  };

  PlateauScheduler() = default;
  explicit PlateauScheduler(const TrainConfig& config);

  /// Throws NumericError on a NaN loss.
  Decision step(double val_loss);

  /// lr0 * lr_factor^drops
  double lr() const;
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t since_improvement() const { return since_improvement_; }
  std::size_t since_lr_drop() const { return plateau_count_; }
  std::size_t drops() const { return drops_; }
  /// True once the early-stop patience is exhausted.
  bool stopped() const { return since_improvement_ >= stop_patience_; }

  void write(std::ostream& os) const;
  void read(std::istream& is);

 private:
  double lr0_ = 1e-3;
  double factor_ = 0.1;
  std::size_t plateau_patience_ = 4;
  std::size_t stop_patience_ = 15;
  bool reset_on_drop_ = true;

  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t epoch_ = 0;
  std::size_t since_improvement_ = 0;
  std::size_t plateau_count_ = 0;
  std::size_t drops_ = 0;
};

/// Bias-corrected Adam with moment buffers keyed by parameter name.
template <Real T>
class Adam {
 public:
  Adam() = default;
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  explicit Adam(const TrainConfig& c) : Adam(c.beta1, c.beta2, c.adam_eps) {}

  /// One update from the parameters' grad buffers. Throws UsageError naming a
  /// parameter without a gradient buffer.
  void step(const NamedTensors<T>& params, double lr);

  std::uint64_t steps() const { return t_; }
  const std::map<std::string, std::vector<double>>& first_moments() const { return m_; }
  const std::map<std::string, std::vector<double>>& second_moments() const { return v_; }

  void write(std::ostream& os) const;
  void read(std::istream& is);

 private:
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_mse = 0;
  double val_mse = 0;
  double lr = 0;  ///< rate used during this epoch
  double seconds = 0;
};

/// Everything needed to continue a run exactly where it stopped (the model
/// parameters and batch-norm buffers are stored alongside, in the model).
template <Real T>
struct TrainState {
  PlateauScheduler scheduler;
  Adam<T> optimizer;
  std::string rng_state;
  std::vector<EpochRecord> history;
  NamedTensors<T> best_state;
  bool finished = false;

  std::size_t epochs_done() const { return history.size(); }
};

template <Real T>
struct FitHooks {
  /// Called after every epoch with the model in its post-epoch state.
  std::function<void(const SarUNet<T>&, const TrainState<T>&)> on_epoch_end;
};

template <Real T>
struct FitResult {
  TrainState<T> state;
  bool stopped_early = false;

  const std::vector<EpochRecord>& history() const { return state.history; }
  std::size_t best_epoch() const { return state.scheduler.best_epoch(); }
  double best_val() const { return state.scheduler.best(); }
};

/// MSE loss of a prediction (differentiable).
template <Real T>
Tensor<T> mse_loss(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& target) {
  return ops::mse(tape, pred, target);
}

/// Mean squared error of the model in eval mode over a whole dataset,
/// accumulated in double in index order.
template <Real T>
double evaluate_mse(const SarUNet<T>& model, const data::WindowDataset& dataset,
                    std::size_t batch_size);

/// Trains with shuffled mini-batches (the last partial batch is kept), Adam,
/// the plateau schedule and early stopping. On return the model holds the
/// best-validation parameters. Pass `resume` to continue a saved run; a run
/// that ended at its epoch cap continues up to the new `max_epochs`.
template <Real T>
FitResult<T> fit(SarUNet<T>& model, const data::WindowDataset& train_set,
                 const data::WindowDataset& val_set, const TrainConfig& config,
                 const FitHooks<T>& hooks = {}, const TrainState<T>* resume = nullptr);

/// History as CSV: epoch,train_mse,val_mse,lr[,seconds]. Without the
/// wall-clock column the output is byte-stable across identical runs.
void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history,
                       bool with_seconds = true);

/// Model checkpoint followed by an "OPTv1" section holding the train state.
template <Real T>
void save_training_checkpoint(std::ostream& os, const SarUNet<T>& model,
                              const TrainState<T>& state, const Metadata& metadata = {});

template <Real T>
struct LoadedTraining {
  LoadedModel<T> loaded;
  TrainState<T> state;
};

template <Real T>
LoadedTraining<T> load_training_checkpoint(std::istream& is);

}  // namespace nowcast::train

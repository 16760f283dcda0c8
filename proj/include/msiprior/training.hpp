#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "msiprior/bag.hpp"
#include "msiprior/models.hpp"
#include "msiprior/rng.hpp"

namespace msiprior {

struct TrainConfig {
  double lr_base = 1e-4;
  double weight_decay = 1e-5;
  int epochs = 30;
  int warmup_epochs = 3;
  double clip_norm = 1.0;
  std::optional<int> max_tiles;  // nullopt: all tiles
  std::uint64_t seed = 0;
  double clam_instance_coeff = 0.3;
  double decision_threshold = 0.5;
  /// Replaces the N_total / N_pos rule when set.
  std::optional<std::array<double, kNumTasks>> class_weights;

  void validate() const;
};

/// Linear warmup over warmup_epochs * steps_per_epoch steps, then cosine
/// annealing reaching exactly zero on the final step.
double lr_at(long step, long steps_per_epoch, const TrainConfig& cfg);

struct AdamState {
  std::vector<ad::Matrix> first_moment;
  std::vector<ad::Matrix> second_moment;
  long step = 0;

  static AdamState zeros_like(const ModelParams& params);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One Adam update with bias correction. Weight decay is decoupled:
/// p <- p - lr * wd * p is applied before the moment update. Throws
/// kNumeric without touching params or state if any gradient is non-finite.
void adam_step(ModelParams& params, const std::vector<ad::Matrix>& grads, AdamState& state,
               double lr, const TrainConfig& cfg);

double global_norm(const std::vector<ad::Matrix>& grads);

/// Rescales all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_gradients(std::vector<ad::Matrix>& grads, double max_norm);

/// Sorted tile indices: all of them when n <= max_tiles, otherwise a uniform
/// sample of exactly max_tiles without replacement.
std::vector<std::size_t> subsample_indices(std::size_t n, int max_tiles, CounterRng& rng);
SlideBag subsample_tiles(const SlideBag& bag, int max_tiles, CounterRng& rng);

/// N_total / N_pos per task over the given slides; tasks without positives
/// get weight 1.
std::array<double, kNumTasks> class_weights(const Cohort& slides);

std::array<int, kNumTasks> task_labels(const LabelSet& labels);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double mean_train_loss = 0.0;
  double val_msi_auc = 0.0;
  double val_mss_spec = 0.0;
  double val_hyper_auc = 0.0;
};

struct FoldResult {
  ModelParams best;
  ModelParams last;
  int best_epoch = 0;  // 1-based
  std::vector<EpochRecord> trace;
  std::array<double, kNumTasks> class_weights{};
};

/// Full epoch loop with one optimizer step per slide. Slide order and tile
/// subsamples are drawn from streams keyed by (seed, fold, epoch). Returns
/// the parameters of the epoch with the highest validation MSI AUC (earliest
/// on ties; the last epoch when validation AUC is never defined).
FoldResult train_fold(const Cohort& train, const Cohort& val, const ModelConfig& model_cfg,
                      const TrainConfig& train_cfg, int fold_index = 0);

/// Validation metrics for one set of parameters on all tiles.
struct ValMetrics {
  double msi_auc;
  double mss_spec;
  double hyper_auc;
};
ValMetrics validation_metrics(const ModelParams& params, const Cohort& val, double threshold);

void write_trace_csv(std::ostream& os, const std::vector<EpochRecord>& trace);

}  // namespace msiprior

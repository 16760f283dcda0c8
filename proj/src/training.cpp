#include "msiprior/training.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "msiprior/error.hpp"
#include "msiprior/metrics.hpp"

namespace msiprior {

using ad::Matrix;

void TrainConfig::validate() const {
  require(lr_base > 0.0, ErrorKind::kConfig, "lr must be positive");
  require(weight_decay >= 0.0, ErrorKind::kConfig, "weight_decay must be non-negative");
  require(epochs >= warmup_epochs && warmup_epochs >= 0, ErrorKind::kConfig,
          "need epochs >= warmup_epochs >= 0");
  require(epochs >= 1, ErrorKind::kConfig, "epochs must be >= 1");
  require(clip_norm > 0.0, ErrorKind::kConfig, "clip_norm must be positive");
  require(!max_tiles || *max_tiles >= 1, ErrorKind::kConfig, "max_tiles must be >= 1");
  require(clam_instance_coeff >= 0.0, ErrorKind::kConfig,
          "clam_instance_coeff must be non-negative");
  require(decision_threshold > 0.0 && decision_threshold < 1.0, ErrorKind::kConfig,
          "threshold must lie in (0, 1)");
  if (class_weights) {
    for (double w : *class_weights)
      require(w > 0.0, ErrorKind::kConfig, "class weights must be positive");
  }
}

double lr_at(long step, long steps_per_epoch, const TrainConfig& cfg) {
  require(steps_per_epoch > 0, ErrorKind::kInvalidInput, "steps_per_epoch must be positive");
  require(step >= 0, ErrorKind::kInvalidInput, "step must be non-negative");
  const long warmup = static_cast<long>(cfg.warmup_epochs) * steps_per_epoch;
  const long total = static_cast<long>(cfg.epochs) * steps_per_epoch;
  if (step < warmup) return cfg.lr_base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const long span = total - 1 - warmup;
  if (span <= 0) return 0.0;
  const double t = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
  return cfg.lr_base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

AdamState AdamState::zeros_like(const ModelParams& params) {
  AdamState s;
  for (const auto& t : params.tensors()) {
    s.first_moment.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    s.second_moment.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
  }
  return s;
}

void adam_step(ModelParams& params, const std::vector<Matrix>& grads, AdamState& state,
               double lr, const TrainConfig& cfg) {
  auto& tensors = params.tensors();
  require(grads.size() == tensors.size() && state.first_moment.size() == tensors.size(),
          ErrorKind::kInvalidInput, "adam_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    require(grads[i].rows() == tensors[i].value.rows() && grads[i].cols() == tensors[i].value.cols(),
            ErrorKind::kInvalidInput, "adam_step: gradient shape mismatch for " + tensors[i].name);
    require(grads[i].allFinite(), ErrorKind::kNumeric,
            "adam_step: non-finite gradient for " + tensors[i].name);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Matrix& p = tensors[i].value;
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    if (cfg.weight_decay != 0.0) p -= lr * cfg.weight_decay * p;
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grads[i];
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grads[i].cwiseAbs2();
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + kAdamEps);
  }
}

double global_norm(const std::vector<Matrix>& grads) {
  double ss = 0.0;
  for (const auto& g : grads) ss += g.squaredNorm();
  return std::sqrt(ss);
}

double clip_gradients(std::vector<Matrix>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) g *= factor;
  }
  return norm;
}

std::vector<std::size_t> subsample_indices(std::size_t n, int max_tiles, CounterRng& rng) {
  require(max_tiles >= 1, ErrorKind::kInvalidInput, "max_tiles must be >= 1");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const auto keep = static_cast<std::size_t>(max_tiles);
  if (n <= keep) return idx;
  // Partial Fisher-Yates: the first `keep` slots become a uniform sample.
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

SlideBag subsample_tiles(const SlideBag& bag, int max_tiles, CounterRng& rng) {
  if (bag.n_tiles() <= static_cast<std::size_t>(max_tiles)) return bag;
  return bag.select(subsample_indices(bag.n_tiles(), max_tiles, rng));
}

std::array<int, kNumTasks> task_labels(const LabelSet& labels) {
  return {labels.msi, labels.mss(), labels.hypermut};
}

std::array<double, kNumTasks> class_weights(const Cohort& slides) {
  std::array<std::size_t, kNumTasks> pos{};
  for (const auto& s : slides) {
    const auto y = task_labels(s.labels);
    for (std::size_t t = 0; t < kNumTasks; ++t) pos[t] += static_cast<std::size_t>(y[t]);
  }
  std::array<double, kNumTasks> w{};
  for (std::size_t t = 0; t < kNumTasks; ++t)
    w[t] = pos[t] == 0 ? 1.0 : static_cast<double>(slides.size()) / static_cast<double>(pos[t]);
  return w;
}

namespace {

double metric_or_nan(auto&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kUndefinedMetric) throw;
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

ValMetrics validation_metrics(const ModelParams& params, const Cohort& val, double threshold) {
  std::vector<double> msi, hyper;
  std::vector<int> y_msi, y_hyper;
  for (const auto& s : val) {
    const BagOutput out = predict(params, s.bag.features);
    msi.push_back(out.logits[kMSI]);
    hyper.push_back(out.logits[kHyper]);
    y_msi.push_back(s.labels.msi);
    y_hyper.push_back(s.labels.hypermut);
  }
  return {metric_or_nan([&] { return roc_auc(msi, y_msi); }),
          metric_or_nan([&] { return specificity(msi, y_msi, threshold); }),
          metric_or_nan([&] { return roc_auc(hyper, y_hyper); })};
}

FoldResult train_fold(const Cohort& train, const Cohort& val, const ModelConfig& model_cfg,
                      const TrainConfig& cfg, int fold_index) {
  cfg.validate();
  model_cfg.validate();
  std::size_t n_pos = 0;
  for (const auto& s : train) n_pos += static_cast<std::size_t>(s.labels.msi);
  require(n_pos > 0 && n_pos < train.size(), ErrorKind::kConfig,
          "training split must contain both MSI-positive and MSI-negative slides");

  FoldResult result;
  result.class_weights = cfg.class_weights ? *cfg.class_weights : class_weights(train);
  ModelParams params = init_params(model_cfg);
  AdamState state = AdamState::zeros_like(params);
  const CounterRng fold_rng = CounterRng(cfg.seed).derive({static_cast<std::uint64_t>(fold_index)});
  const long steps_per_epoch = static_cast<long>(train.size());
  const bool clam = model_cfg.aggregator == Aggregator::kCLAM_SB;

  double best_auc = -std::numeric_limits<double>::infinity();
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto e = static_cast<std::uint64_t>(epoch);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    CounterRng order_rng = fold_rng.derive({e, 0});
    order_rng.shuffle(order);

    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t slide : order) {
      const LabeledSlide& s = train[slide];
      const Matrix* features = &s.bag.features;
      Matrix sampled;
      if (cfg.max_tiles && s.bag.n_tiles() > static_cast<std::size_t>(*cfg.max_tiles)) {
        CounterRng tile_rng = fold_rng.derive({e, 1, static_cast<std::uint64_t>(slide)});
        const auto rows = subsample_indices(s.bag.n_tiles(), *cfg.max_tiles, tile_rng);
        sampled.resize(static_cast<Eigen::Index>(rows.size()), s.bag.features.cols());
        for (std::size_t k = 0; k < rows.size(); ++k)
          sampled.row(static_cast<Eigen::Index>(k)) = s.bag.features.row(static_cast<Eigen::Index>(rows[k]));
        features = &sampled;
      }

      ad::Tape tape;
      const BoundParams bound(tape, params);
      const ForwardGraph graph = forward(bound, tape.constant(*features), s.labels.msi);
      std::optional<ad::Var> inst;
      if (clam && !graph.pseudo_rows.empty()) inst = instance_loss(graph);
      const ad::Var loss = multitask_loss(graph.logits, task_labels(s.labels), result.class_weights,
                                          inst, cfg.clam_instance_coeff);
      require(std::isfinite(loss.scalar()), ErrorKind::kNumeric, "non-finite training loss");
      tape.backward(loss);

      std::vector<Matrix> grads;
      grads.reserve(bound.vars().size());
      for (const auto& v : bound.vars()) grads.push_back(v.grad());
      clip_gradients(grads, cfg.clip_norm);
      lr = lr_at(step, steps_per_epoch, cfg);
      adam_step(params, grads, state, lr, cfg);
      loss_sum += loss.scalar();
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.mean_train_loss = loss_sum / static_cast<double>(train.size());
    if (!val.empty()) {
      const ValMetrics vm = validation_metrics(params, val, cfg.decision_threshold);
      rec.val_msi_auc = vm.msi_auc;
      rec.val_mss_spec = vm.mss_spec;
      rec.val_hyper_auc = vm.hyper_auc;
    } else {
      rec.val_msi_auc = rec.val_mss_spec = rec.val_hyper_auc = std::numeric_limits<double>::quiet_NaN();
    }
    result.trace.push_back(rec);
    if (std::isfinite(rec.val_msi_auc) && rec.val_msi_auc > best_auc) {
      best_auc = rec.val_msi_auc;
      result.best = params;
      result.best_epoch = rec.epoch;
    }
  }
  result.last = params;
  if (result.best_epoch == 0) {
    result.best = params;
    result.best_epoch = cfg.epochs;
  }
  return result;
}

void write_trace_csv(std::ostream& os, const std::vector<EpochRecord>& trace) {
  os << "epoch,lr,mean_train_loss,val_msi_auc,val_mss_spec,val_hyper_auc\n";
  for (const auto& r : trace) {
    fmt::print(os, "{},{:.10g},{:.10g},{:.6f},{:.6f},{:.6f}\n", r.epoch, r.lr, r.mean_train_loss,
               r.val_msi_auc, r.val_mss_spec, r.val_hyper_auc);
  }
}

}  // namespace msiprior

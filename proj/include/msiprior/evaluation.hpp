#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "msiprior/bag.hpp"
#include "msiprior/metrics.hpp"
#include "msiprior/models.hpp"
#include "msiprior/training.hpp"

namespace msiprior {

/// Specificity on MSS slides under both head conventions.
///   msi_head: MSS slides whose MSI probability is below the threshold.
///   mss_head: MSS slides whose MSS-head probability reaches the threshold.
struct MssSpecificity {
  double msi_head = 0.0;
  double mss_head = 0.0;
};

struct FoldMetrics {
  int fold = 0;
  std::size_t n_val = 0;
  int best_epoch = 0;
  double msi_auc = 0.0;
  double hyper_auc = 0.0;
  MssSpecificity mss_spec;
  // Same metrics for the final-epoch parameters.
  double last_msi_auc = 0.0;
  MssSpecificity last_mss_spec;
};

/// One scored slide; probabilities are means over the scoring models.
struct SlideScore {
  std::string slide_id;
  std::string site;
  int fold = -1;  // -1 for external slides
  int msi = 0;
  int hypermut = 0;
  double p_msi = 0.0;
  double p_mss = 0.0;
  double p_hyper = 0.0;
};

struct ExternalMetrics {
  std::size_t n_slides = 0;
  std::size_t n_msi = 0;
  MssSpecificity mss_spec;
  std::optional<double> msi_auc;
  std::optional<double> hyper_auc;
  std::vector<std::string> flags;
  /// Per fold model, scored alone.
  std::vector<MssSpecificity> per_model_mss_spec;
  std::vector<SlideScore> scores;
};

struct MetricsReport {
  std::vector<FoldMetrics> folds;
  MeanStd msi_auc;
  MeanStd hyper_auc;
  MeanStd mss_spec_msi_head;
  MeanStd mss_spec_mss_head;
  std::vector<std::vector<std::size_t>> fold_assignment;
  std::vector<SlideScore> scores;
  std::optional<ExternalMetrics> external;
  std::vector<std::string> warnings;
  double threshold = 0.5;

  /// Recomputes the mean/std fields from the per-fold rows.
  void aggregate();
};

MssSpecificity mss_specificity(std::span<const double> p_msi, std::span<const double> p_mss,
                               std::span<const int> msi_labels, double threshold);

struct CrossValidation {
  MetricsReport report;
  std::vector<ModelParams> models;  // best checkpoint per fold
  std::vector<std::vector<EpochRecord>> traces;
};

CrossValidation cross_validate(const Cohort& cohort, const ModelConfig& model_cfg,
                               const TrainConfig& train_cfg, int k = 5);

/// Scores every external slide with every model; the slide score is the mean
/// probability across models. No retraining happens here.
ExternalMetrics eval_external(const std::vector<ModelParams>& models, const Cohort& cohort,
                              double threshold = 0.5);

void write_report_csv(std::ostream& os, const MetricsReport& report);
void write_scores_csv(std::ostream& os, const std::vector<SlideScore>& scores);
void write_summary(std::ostream& os, const MetricsReport& report, const std::string& label);

}  // namespace msiprior

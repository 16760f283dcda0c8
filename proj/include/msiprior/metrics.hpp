#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace msiprior {

/// Mann-Whitney U over all (positive, negative) pairs normalized by
/// n_pos * n_neg, ties counted 1/2. Throws kUndefinedMetric unless both
/// classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Fraction of label-0 entries whose probability is below `threshold`.
double specificity_from_probabilities(std::span<const double> probs, std::span<const int> labels,
                                      double threshold);

/// Same, with logits mapped through the sigmoid first.
double specificity(std::span<const double> scores, std::span<const int> labels, double threshold);

double sigmoid(double x);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population (denominator n)
  std::size_t n = 0;
};

/// Mean and population standard deviation over the finite entries.
MeanStd mean_std(std::span<const double> values);

struct FoldAssignment {
  std::vector<std::vector<std::size_t>> folds;
  std::vector<std::string> warnings;
};

/// Deterministic stratified k-fold split: each class is shuffled from the
/// seed and dealt round-robin, negatives continuing where positives stopped
/// so fold sizes also differ by at most one.
FoldAssignment stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed);

}  // namespace msiprior

#include "msiprior/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "msiprior/error.hpp"
#include "msiprior/rng.hpp"

namespace msiprior {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorKind::kInvalidInput,
          "roc_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Count, for each positive, negatives strictly below plus half the tied ones.
  // Work in half-units so the numerator stays an exact integer.
  std::uint64_t n_pos = 0, n_neg = 0, half_units = 0, neg_below = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    std::uint64_t group_pos = 0, group_neg = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] != 0) ++group_pos; else ++group_neg;
      ++j;
    }
    half_units += group_pos * (2 * neg_below + group_neg);
    neg_below += group_neg;
    n_pos += group_pos;
    n_neg += group_neg;
    i = j;
  }
  require(n_pos > 0 && n_neg > 0, ErrorKind::kUndefinedMetric,
          "roc_auc: needs at least one positive and one negative label");
  return static_cast<double>(half_units) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double specificity_from_probabilities(std::span<const double> probs, std::span<const int> labels,
                                      double threshold) {
  require(probs.size() == labels.size(), ErrorKind::kInvalidInput,
          "specificity: scores and labels differ in length");
  std::size_t negatives = 0, below = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] != 0) continue;
    ++negatives;
    if (probs[i] < threshold) ++below;
  }
  require(negatives > 0, ErrorKind::kUndefinedMetric, "specificity: no negative labels");
  return static_cast<double>(below) / static_cast<double>(negatives);
}

double specificity(std::span<const double> scores, std::span<const int> labels, double threshold) {
  std::vector<double> probs(scores.size());
  std::transform(scores.begin(), scores.end(), probs.begin(), sigmoid);
  return specificity_from_probabilities(probs, labels, threshold);
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  double sum = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    sum += v;
    ++out.n;
  }
  if (out.n == 0) {
    out.mean = out.std = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.mean = sum / static_cast<double>(out.n);
  double ss = 0.0;
  for (double v : values)
    if (std::isfinite(v)) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(out.n));
  return out;
}

FoldAssignment stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed) {
  require(k >= 2, ErrorKind::kInvalidInput, "stratified_kfold: k must be >= 2");
  require(labels.size() >= static_cast<std::size_t>(k), ErrorKind::kInvalidInput,
          "stratified_kfold: fewer samples than folds");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] != 0 ? pos : neg).push_back(i);

  FoldAssignment out;
  out.folds.resize(static_cast<std::size_t>(k));
  if (pos.empty() || neg.empty())
    out.warnings.push_back("single-class labels: folds cannot be stratified");
  else if (pos.size() < static_cast<std::size_t>(k) || neg.size() < static_cast<std::size_t>(k))
    out.warnings.push_back("fewer members of a class than folds: some folds lack that class");

  CounterRng rng = CounterRng(seed).derive("kfold");
  CounterRng pos_rng = rng.derive({1});
  CounterRng neg_rng = rng.derive({0});
  pos_rng.shuffle(pos);
  neg_rng.shuffle(neg);
  std::size_t slot = 0;
  for (auto idx : pos) out.folds[slot++ % out.folds.size()].push_back(idx);
  for (auto idx : neg) out.folds[slot++ % out.folds.size()].push_back(idx);
  for (auto& f : out.folds) std::sort(f.begin(), f.end());
  return out;
}

}  // namespace msiprior

#include "msiprior/evaluation.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "msiprior/error.hpp"

namespace msiprior {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double or_nan(auto&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kUndefinedMetric) throw;
    return kNaN;
  }
}

struct ScoredSet {
  std::vector<double> p_msi, p_mss, p_hyper, msi_logit, hyper_logit;
  std::vector<int> msi, hyper;
};

ScoredSet score(const ModelParams& params, const Cohort& slides) {
  ScoredSet s;
  for (const auto& slide : slides) {
    const BagOutput out = predict(params, slide.bag.features);
    s.msi_logit.push_back(out.logits[kMSI]);
    s.hyper_logit.push_back(out.logits[kHyper]);
    s.p_msi.push_back(sigmoid(out.logits[kMSI]));
    s.p_mss.push_back(sigmoid(out.logits[kMSS]));
    s.p_hyper.push_back(sigmoid(out.logits[kHyper]));
    s.msi.push_back(slide.labels.msi);
    s.hyper.push_back(slide.labels.hypermut);
  }
  return s;
}

std::string fmt_metric(double v) { return std::isfinite(v) ? fmt::format("{:.6f}", v) : "nan"; }

}  // namespace

MssSpecificity mss_specificity(std::span<const double> p_msi, std::span<const double> p_mss,
                               std::span<const int> msi_labels, double threshold) {
  MssSpecificity out;
  out.msi_head = or_nan([&] { return specificity_from_probabilities(p_msi, msi_labels, threshold); });
  std::size_t mss = 0, called_mss = 0;
  for (std::size_t i = 0; i < p_mss.size(); ++i) {
    if (msi_labels[i] != 0) continue;
    ++mss;
    if (p_mss[i] >= threshold) ++called_mss;
  }
  out.mss_head = mss == 0 ? kNaN : static_cast<double>(called_mss) / static_cast<double>(mss);
  return out;
}

void MetricsReport::aggregate() {
  std::vector<double> a, h, s1, s2;
  for (const auto& f : folds) {
    a.push_back(f.msi_auc);
    h.push_back(f.hyper_auc);
    s1.push_back(f.mss_spec.msi_head);
    s2.push_back(f.mss_spec.mss_head);
  }
  msi_auc = mean_std(a);
  hyper_auc = mean_std(h);
  mss_spec_msi_head = mean_std(s1);
  mss_spec_mss_head = mean_std(s2);
}

CrossValidation cross_validate(const Cohort& cohort, const ModelConfig& model_cfg,
                               const TrainConfig& train_cfg, int k) {
  std::vector<int> msi;
  for (const auto& s : cohort) msi.push_back(s.labels.msi);
  FoldAssignment split = stratified_kfold(msi, k, train_cfg.seed);

  CrossValidation cv;
  cv.report.threshold = train_cfg.decision_threshold;
  cv.report.fold_assignment = split.folds;
  cv.report.warnings = split.warnings;
  cv.report.scores.resize(cohort.size());

  std::vector<int> fold_of(cohort.size(), -1);
  for (std::size_t f = 0; f < split.folds.size(); ++f)
    for (auto i : split.folds[f]) fold_of[i] = static_cast<int>(f);

  for (int f = 0; f < k; ++f) {
    Cohort train, val;
    for (std::size_t i = 0; i < cohort.size(); ++i)
      (fold_of[i] == f ? val : train).push_back(cohort[i]);
    FoldResult fr = train_fold(train, val, model_cfg, train_cfg, f);

    FoldMetrics m;
    m.fold = f;
    m.n_val = val.size();
    m.best_epoch = fr.best_epoch;
    const ScoredSet best = score(fr.best, val);
    m.msi_auc = or_nan([&] { return roc_auc(best.msi_logit, best.msi); });
    m.hyper_auc = or_nan([&] { return roc_auc(best.hyper_logit, best.hyper); });
    m.mss_spec = mss_specificity(best.p_msi, best.p_mss, best.msi, train_cfg.decision_threshold);
    const ScoredSet last = score(fr.last, val);
    m.last_msi_auc = or_nan([&] { return roc_auc(last.msi_logit, last.msi); });
    m.last_mss_spec = mss_specificity(last.p_msi, last.p_mss, last.msi, train_cfg.decision_threshold);
    if (!std::isfinite(m.hyper_auc))
      cv.report.warnings.push_back(fmt::format("fold {}: hypermutation AUC undefined (single class)", f));
    cv.report.folds.push_back(m);

    const auto& rows = split.folds[static_cast<std::size_t>(f)];
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const auto& slide = cohort[rows[j]];
      cv.report.scores[rows[j]] = SlideScore{slide.bag.slide_id, slide.labels.site, f,
                                             slide.labels.msi, slide.labels.hypermut,
                                             best.p_msi[j], best.p_mss[j], best.p_hyper[j]};
    }
    cv.models.push_back(std::move(fr.best));
    cv.traces.push_back(std::move(fr.trace));
  }
  cv.report.aggregate();
  return cv;
}

ExternalMetrics eval_external(const std::vector<ModelParams>& models, const Cohort& cohort,
                              double threshold) {
  require(!models.empty(), ErrorKind::kInvalidInput, "eval_external: no models");
  require(!cohort.empty(), ErrorKind::kInvalidInput, "eval_external: empty cohort");
  for (const auto& m : models) {
    for (const auto& s : cohort) {
      require(s.bag.feature_dim() == m.config().input_dim, ErrorKind::kConfig,
              fmt::format("slide '{}' has feature dimension {} but the model expects {}",
                          s.bag.slide_id, s.bag.feature_dim(), m.config().input_dim));
    }
  }

  ExternalMetrics ext;
  ext.n_slides = cohort.size();
  const std::size_t n = cohort.size();
  std::vector<double> p_msi(n, 0.0), p_mss(n, 0.0), p_hyper(n, 0.0);
  std::vector<int> msi, hyper;
  for (const auto& s : cohort) {
    msi.push_back(s.labels.msi);
    hyper.push_back(s.labels.hypermut);
    ext.n_msi += static_cast<std::size_t>(s.labels.msi);
  }
  for (const auto& model : models) {
    const ScoredSet one = score(model, cohort);
    ext.per_model_mss_spec.push_back(mss_specificity(one.p_msi, one.p_mss, msi, threshold));
    for (std::size_t i = 0; i < n; ++i) {
      p_msi[i] += one.p_msi[i];
      p_mss[i] += one.p_mss[i];
      p_hyper[i] += one.p_hyper[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(models.size());
  for (std::size_t i = 0; i < n; ++i) {
    p_msi[i] *= inv;
    p_mss[i] *= inv;
    p_hyper[i] *= inv;
  }
  ext.mss_spec = mss_specificity(p_msi, p_mss, msi, threshold);
  const double auc = or_nan([&] { return roc_auc(p_msi, msi); });
  if (std::isfinite(auc)) ext.msi_auc = auc;
  if (ext.n_msi == 0 || ext.n_msi == n) {
    ext.flags.push_back("MSI AUC undefined: single class");
  } else if (ext.n_msi == 1) {
    ext.flags.push_back("MSI AUC unstable: single positive");
  }
  const double hauc = or_nan([&] { return roc_auc(p_hyper, hyper); });
  if (std::isfinite(hauc)) ext.hyper_auc = hauc;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = cohort[i];
    ext.scores.push_back(SlideScore{s.bag.slide_id, s.labels.site, -1, s.labels.msi,
                                    s.labels.hypermut, p_msi[i], p_mss[i], p_hyper[i]});
  }
  return ext;
}

void write_report_csv(std::ostream& os, const MetricsReport& r) {
  fmt::print(os, "# std columns use the population denominator (n); threshold={}\n", r.threshold);
  os << "row,fold,n_val,best_epoch,msi_auc,hyper_auc,mss_spec_msi_head,mss_spec_mss_head,"
        "last_msi_auc,last_mss_spec_msi_head,last_mss_spec_mss_head\n";
  for (const auto& f : r.folds) {
    fmt::print(os, "fold,{},{},{},{},{},{},{},{},{},{}\n", f.fold, f.n_val, f.best_epoch,
               fmt_metric(f.msi_auc), fmt_metric(f.hyper_auc), fmt_metric(f.mss_spec.msi_head),
               fmt_metric(f.mss_spec.mss_head), fmt_metric(f.last_msi_auc),
               fmt_metric(f.last_mss_spec.msi_head), fmt_metric(f.last_mss_spec.mss_head));
  }
  fmt::print(os, "mean,,,,{},{},{},{},,,\n", fmt_metric(r.msi_auc.mean), fmt_metric(r.hyper_auc.mean),
             fmt_metric(r.mss_spec_msi_head.mean), fmt_metric(r.mss_spec_mss_head.mean));
  fmt::print(os, "std,,,,{},{},{},{},,,\n", fmt_metric(r.msi_auc.std), fmt_metric(r.hyper_auc.std),
             fmt_metric(r.mss_spec_msi_head.std), fmt_metric(r.mss_spec_mss_head.std));
  if (r.external) {
    const auto& e = *r.external;
    fmt::print(os, "external,,{},,{},{},{},{},,,\n", e.n_slides,
               fmt_metric(e.msi_auc.value_or(kNaN)), fmt_metric(e.hyper_auc.value_or(kNaN)),
               fmt_metric(e.mss_spec.msi_head), fmt_metric(e.mss_spec.mss_head));
    for (std::size_t i = 0; i < e.per_model_mss_spec.size(); ++i) {
      fmt::print(os, "external_model,{},{},,,,{},{},,,\n", i, e.n_slides,
                 fmt_metric(e.per_model_mss_spec[i].msi_head),
                 fmt_metric(e.per_model_mss_spec[i].mss_head));
    }
  }
  for (std::size_t f = 0; f < r.fold_assignment.size(); ++f) {
    os << "# fold " << f << ":";
    for (auto i : r.fold_assignment[f]) os << ' ' << i;
    os << '\n';
  }
}

void write_scores_csv(std::ostream& os, const std::vector<SlideScore>& scores) {
  os << "slide_id,site,fold,msi,hypermut,p_msi,p_mss,p_hyper\n";
  for (const auto& s : scores) {
    fmt::print(os, "{},{},{},{},{},{:.9f},{:.9f},{:.9f}\n", s.slide_id, s.site, s.fold, s.msi,
               s.hypermut, s.p_msi, s.p_mss, s.p_hyper);
  }
}

void write_summary(std::ostream& os, const MetricsReport& r, const std::string& label) {
  auto pm = [](const MeanStd& m) {
    return std::isfinite(m.mean) ? fmt::format("{:.3f} ± {:.3f}", m.mean, m.std) : std::string("n/a");
  };
  fmt::print(os, "{:<28} | internal MSI AUC {} | Hyper AUC {} | MSS Spec {}", label, pm(r.msi_auc),
             pm(r.hyper_auc), pm(r.mss_spec_msi_head));
  if (r.external) {
    fmt::print(os, " | external MSS Spec {:.3f} (MSS head {:.3f})", r.external->mss_spec.msi_head,
               r.external->mss_spec.mss_head);
  }
  os << '\n';
  fmt::print(os, "  mean ± std over {} folds, population std (denominator n), threshold {}\n",
             r.folds.size(), r.threshold);
  if (r.external)
    for (const auto& f : r.external->flags) fmt::print(os, "  external: {}\n", f);
  for (const auto& w : r.warnings) fmt::print(os, "  warning: {}\n", w);
}

}  // namespace msiprior

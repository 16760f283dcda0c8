// msiprior: command-line front end.
//
// Every subcommand reads an optional flat config file, applies `--set
// key=value` overrides on top (flags win), and writes run_manifest.txt next
// to its outputs recording the inputs, the resolved config, its hash and the
// seed. Errors exit with the numeric value of their ErrorKind.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "msiprior/config.hpp"
#include "msiprior/error.hpp"
#include "msiprior/evaluation.hpp"
#include "msiprior/harness.hpp"
#include "msiprior/io.hpp"
#include "msiprior/render.hpp"
#include "msiprior/spatial_priors.hpp"
#include "msiprior/synthetic.hpp"

namespace fs = std::filesystem;
using namespace msiprior;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "Config file (key = value lines)");
  sub->add_option("--set", c.overrides, "Override a config key: key=value (repeatable)");
}

Config load_config(const Common& c) {
  Config cfg;
  if (!c.config_path.empty()) cfg = Config::from_file(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, ErrorKind::kConfig,
            fmt::format("--set expects key=value, got '{}'", kv));
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, fmt::format("cannot write '{}'", path.string()));
  return out;
}

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, fmt::format("cannot open '{}'", path.string()));
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void write_run_manifest(const fs::path& dir, const std::string& command, const Config& cfg,
                        std::uint64_t seed, const std::vector<fs::path>& inputs) {
  std::ofstream out = open_out(dir / "run_manifest.txt");
  fmt::print(out, "command: {}\n", command);
  fmt::print(out, "seed: {}\n", seed);
  fmt::print(out, "config_hash: {:016x}\n", cfg.hash());
  out << "inputs:\n";
  for (const auto& p : inputs) fmt::print(out, "  {} fnv1a64={:016x}\n", p.string(), file_hash(p));
  out << "config:\n";
  std::istringstream lines(cfg.canonical());
  for (std::string line; std::getline(lines, line);) out << "  " << line << '\n';
}

Cohort augment(const Cohort& cohort, const PriorConfig& priors) {
  if (priors.extra_dims() == 0) return cohort;
  Cohort out;
  out.reserve(cohort.size());
  for (const auto& s : cohort) out.push_back({augment_features(s.bag, priors), s.labels});
  return out;
}

std::vector<fs::path> manifest_inputs(const fs::path& manifest) {
  std::vector<fs::path> paths{manifest};
  for (const auto& e : io::read_manifest(manifest)) paths.emplace_back(e.path);
  return paths;
}

// ---- subcommands ----------------------------------------------------------

struct GenArgs {
  Common common;
  std::string out;
  std::string site;  // default: A, or B with --external
  bool external = false;
  std::optional<std::uint64_t> seed;
};

int gen_synthetic(const GenArgs& a) {
  const Config cfg = load_config(a.common);
  const RunSettings rs = resolve_settings(cfg);
  CohortSpec spec = rs.cohort;
  if (a.external) {
    // External-site shape unless the config sets these keys explicitly.
    const CohortSpec ext = default_external_spec(spec.seed);
    if (!cfg.has("cohort.n_slides")) spec.n_slides = ext.n_slides;
    if (!cfg.has("cohort.msi_fraction")) spec.msi_fraction = ext.msi_fraction;
    if (!cfg.has("cohort.offset_label_coupling")) spec.offset_label_coupling = ext.offset_label_coupling;
  }
  if (a.seed) spec.seed = *a.seed;
  const SyntheticCohort syn =
      generate_cohort(spec, a.site.empty() ? (a.external ? "B" : "A") : a.site);
  const CohortDiagnostics diag = verify_cohort(syn);
  io::write_cohort(a.out, syn.cohort());
  {
    std::ofstream d = open_out(fs::path(a.out) / "diagnostics.txt");
    for (const auto& line : diag.checks) d << line << '\n';
  }
  write_run_manifest(a.out, a.external ? "gen-synthetic --external" : "gen-synthetic", cfg,
                     spec.seed, {});
  fmt::print("wrote {} slides ({} MSI-H) to {}\n", syn.slides.size(), diag.n_msi, a.out);
  return 0;
}

struct EncodeArgs {
  Common common;
  std::string bag;
  std::string manifest;
  std::string out;
};

int encode_priors(const EncodeArgs& a) {
  const Config cfg = load_config(a.common);
  const RunSettings rs = resolve_settings(cfg);
  require(rs.priors.extra_dims() > 0, ErrorKind::kConfig,
          "encode-priors: enable use_pd and/or use_lin");
  require(a.bag.empty() != a.manifest.empty(), ErrorKind::kInvalidInput,
          "encode-priors: give exactly one of --bag or --manifest");
  if (!a.bag.empty()) {
    const SlideBag out = augment_features(io::read_bag_file(a.bag), rs.priors);
    io::write_bag_file(a.out, out);
    const fs::path dir = fs::path(a.out).has_parent_path() ? fs::path(a.out).parent_path() : ".";
    write_run_manifest(dir, "encode-priors", cfg, 0, {a.bag});
    fmt::print("{}: feature_dim {}\n", a.out, out.feature_dim());
    return 0;
  }
  const Cohort cohort = augment(io::load_cohort(a.manifest), rs.priors);
  io::write_cohort(a.out, cohort);
  write_run_manifest(a.out, "encode-priors", cfg, 0, manifest_inputs(a.manifest));
  fmt::print("wrote {} bags to {} (feature_dim {})\n", cohort.size(), a.out,
             cohort.empty() ? 0 : cohort.front().bag.feature_dim());
  return 0;
}

struct CvArgs {
  Common common;
  std::string manifest;
  std::string out;
  std::string external;
  std::optional<std::uint64_t> seed;
};

int cross_validate_cmd(const CvArgs& a) {
  const Config cfg = load_config(a.common);
  RunSettings rs = resolve_settings(cfg);
  if (a.seed) rs.train.seed = *a.seed;
  const Cohort cohort = augment(io::load_cohort(a.manifest), rs.priors);
  require(!cohort.empty(), ErrorKind::kInvalidInput, "cross-validate: empty manifest");
  rs.model.input_dim = static_cast<int>(cohort.front().bag.feature_dim());

  CrossValidation cv = cross_validate(cohort, rs.model, rs.train, rs.folds);
  std::vector<fs::path> inputs = manifest_inputs(a.manifest);
  if (!a.external.empty()) {
    const std::vector<fs::path> ext = manifest_inputs(a.external);
    inputs.insert(inputs.end(), ext.begin(), ext.end());
    cv.report.external =
        eval_external(cv.models, augment(io::load_cohort(a.external), rs.priors),
                      rs.train.decision_threshold);
  }

  const fs::path out(a.out);
  fs::create_directories(out / "checkpoints");
  for (std::size_t f = 0; f < cv.models.size(); ++f) {
    io::write_checkpoint_file(out / "checkpoints" / fmt::format("fold_{}.ckpt", f), cv.models[f]);
    std::ofstream t = open_out(out / "traces" / fmt::format("fold_{}.csv", f));
    write_trace_csv(t, cv.traces[f]);
  }
  {
    std::ofstream r = open_out(out / "report.csv");
    write_report_csv(r, cv.report);
  }
  {
    std::ofstream s = open_out(out / "scores.csv");
    write_scores_csv(s, cv.report.scores);
  }
  if (cv.report.external) {
    std::ofstream s = open_out(out / "external_scores.csv");
    write_scores_csv(s, cv.report.external->scores);
  }
  std::ostringstream summary;
  std::string label = to_string(rs.model.aggregator);
  if (rs.priors.use_pd) label += "+PD";
  if (rs.priors.use_lin) label += "+LIN";
  write_summary(summary, cv.report, label);
  {
    std::ofstream s = open_out(out / "summary.txt");
    s << summary.str();
  }
  write_run_manifest(out, "cross-validate", cfg, rs.train.seed, inputs);
  std::cout << summary.str();
  return 0;
}

struct ExtArgs {
  Common common;
  std::vector<std::string> checkpoints;
  std::string manifest;
  std::string out;
};

int eval_external_cmd(const ExtArgs& a) {
  const Config cfg = load_config(a.common);
  const RunSettings rs = resolve_settings(cfg);
  std::vector<fs::path> paths;
  for (const auto& c : a.checkpoints) {
    if (fs::is_directory(c)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(c))
        if (e.path().extension() == ".ckpt") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      paths.insert(paths.end(), found.begin(), found.end());
    } else {
      paths.emplace_back(c);
    }
  }
  require(!paths.empty(), ErrorKind::kInvalidInput, "eval-external: no checkpoints found");
  std::vector<ModelParams> models;
  for (const auto& p : paths) models.push_back(io::read_checkpoint_file(p));

  MetricsReport report;
  report.threshold = rs.train.decision_threshold;
  report.external = eval_external(models, augment(io::load_cohort(a.manifest), rs.priors),
                                  rs.train.decision_threshold);
  const fs::path out(a.out);
  {
    std::ofstream r = open_out(out / "external_report.csv");
    write_report_csv(r, report);
  }
  {
    std::ofstream s = open_out(out / "external_scores.csv");
    write_scores_csv(s, report.external->scores);
  }
  std::vector<fs::path> inputs = paths;
  const std::vector<fs::path> m = manifest_inputs(a.manifest);
  inputs.insert(inputs.end(), m.begin(), m.end());
  write_run_manifest(out, "eval-external", cfg, rs.train.seed, inputs);

  const auto& e = *report.external;
  fmt::print("external: {} slides, {} MSI-H, MSS specificity {:.3f} (MSS head {:.3f}), MSI AUC {}\n",
             e.n_slides, e.n_msi, e.mss_spec.msi_head, e.mss_spec.mss_head,
             e.msi_auc ? fmt::format("{:.3f}", *e.msi_auc) : std::string("n/a"));
  for (const auto& f : e.flags) fmt::print("  {}\n", f);
  return 0;
}

struct RenderArgs {
  Common common;
  std::string checkpoint;
  std::string bag;
  std::string out;
};

int render_attention_cmd(const RenderArgs& a) {
  const Config cfg = load_config(a.common);
  const RunSettings rs = resolve_settings(cfg);
  const ModelParams model = io::read_checkpoint_file(a.checkpoint);
  const SlideBag raw = io::read_bag_file(a.bag);
  const SlideBag bag = rs.priors.extra_dims() > 0 ? augment_features(raw, rs.priors) : raw;
  require(bag.feature_dim() == model.config().input_dim, ErrorKind::kConfig,
          fmt::format("bag '{}' has feature dimension {} but the checkpoint expects {}",
                      bag.slide_id, bag.feature_dim(), model.config().input_dim));
  const BagOutput pred = predict(model, bag.features);
  write_ppm_file(a.out, render_attention(bag, pred.attention, rs.tile_px));
  const fs::path dir = fs::path(a.out).has_parent_path() ? fs::path(a.out).parent_path() : ".";
  write_run_manifest(dir, "render-attention", cfg, model.config().seed, {a.checkpoint, a.bag});
  fmt::print("{}: {} tiles, MSI logit {:.4f}\n", a.out, bag.n_tiles(), pred.logits[kMSI]);
  return 0;
}

struct GradArgs {
  Common common;
  int seeds = 5;
  double eps = 1e-5;
  double tol = 1e-4;
  std::string out = ".";
};

int grad_check_cmd(const GradArgs& a) {
  const Config cfg = load_config(a.common);
  bool ok = true;
  for (GradCheckCase& c : tiny_grad_check_cases(a.seeds)) {
    run_grad_check(c, a.eps);
    const bool pass = c.max_rel_error < a.tol;
    ok = ok && pass;
    fmt::print("{:<22} max rel error {:.3e}  {}\n", c.label, c.max_rel_error, pass ? "ok" : "FAIL");
  }
  write_run_manifest(a.out, "grad-check", cfg, 0, {});
  require(ok, ErrorKind::kNumeric, fmt::format("gradient check above tolerance {}", a.tol));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial-prior MIL pipeline for slide-level MSI prediction"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-synthetic", "Generate a synthetic cohort (bags + manifest)");
  add_common(g, gen.common);
  g->add_option("-o,--out", gen.out, "Output directory")->required();
  g->add_option("--site", gen.site, "Site tag written to the manifest");
  g->add_flag("--external", gen.external, "External-site shape: 50 slides, 2 MSI-H, offset uncoupled");
  g->add_option("--seed", gen.seed, "Overrides cohort.seed");

  EncodeArgs enc;
  auto* e = app.add_subcommand("encode-priors", "Append prior features to a bag or a cohort");
  add_common(e, enc.common);
  e->add_option("--bag", enc.bag, "Input bag file");
  e->add_option("--manifest", enc.manifest, "Input manifest");
  e->add_option("-o,--out", enc.out, "Output bag (with --bag) or directory (with --manifest)")->required();

  CvArgs cva;
  auto* cv = app.add_subcommand("cross-validate", "Stratified k-fold training and evaluation");
  add_common(cv, cva.common);
  cv->add_option("-m,--manifest", cva.manifest, "Training-site manifest")->required();
  cv->add_option("--external", cva.external, "Optional external-site manifest scored by the fold ensemble");
  cv->add_option("-o,--out", cva.out, "Output directory")->required();
  cv->add_option("--seed", cva.seed, "Overrides the training seed");

  ExtArgs ext;
  auto* x = app.add_subcommand("eval-external", "Score an external cohort with saved checkpoints");
  add_common(x, ext.common);
  x->add_option("--checkpoints", ext.checkpoints, "Checkpoint files or directories")->required();
  x->add_option("-m,--manifest", ext.manifest, "External manifest")->required();
  x->add_option("-o,--out", ext.out, "Output directory")->required();

  RenderArgs ren;
  auto* r = app.add_subcommand("render-attention", "Write a PPM attention map for one bag");
  add_common(r, ren.common);
  r->add_option("--checkpoint", ren.checkpoint, "Checkpoint file")->required();
  r->add_option("--bag", ren.bag, "Bag file")->required();
  r->add_option("-o,--out", ren.out, "Output .ppm")->required();

  GradArgs gr;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks at tiny size");
  add_common(gc, gr.common);
  gc->add_option("--seeds", gr.seeds, "Seeds per aggregator")->check(CLI::PositiveNumber);
  gc->add_option("--eps", gr.eps, "Central-difference step");
  gc->add_option("--tol", gr.tol, "Maximum relative error");
  gc->add_option("-o,--out", gr.out, "Directory for run_manifest.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*g) return gen_synthetic(gen);
    if (*e) return encode_priors(enc);
    if (*cv) return cross_validate_cmd(cva);
    if (*x) return eval_external_cmd(ext);
    if (*r) return render_attention_cmd(ren);
    if (*gc) return grad_check_cmd(gr);
  } catch (const Error& err) {
    fmt::print(stderr, "msiprior: {}: {}\n", to_string(err.kind()), err.what());
    return err.exit_code();
  } catch (const fs::filesystem_error& err) {
    fmt::print(stderr, "msiprior: i/o error: {}\n", err.what());
    return static_cast<int>(ErrorKind::kIo);
  }
  return 1;
}

#include "msiprior/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msiprior/error.hpp"
#include "msiprior/rng.hpp"

namespace msiprior {

using ad::Matrix;
using ad::Tape;
using ad::Var;

std::string to_string(Aggregator a) {
  switch (a) {
    case Aggregator::kABMIL: return "abmil";
    case Aggregator::kCLAM_SB: return "clam_sb";
    case Aggregator::kTransMIL: return "transmil";
  }
  return "unknown";
}

Aggregator parse_aggregator(std::string_view name) {
  if (name == "abmil") return Aggregator::kABMIL;
  if (name == "clam_sb" || name == "clam") return Aggregator::kCLAM_SB;
  if (name == "transmil") return Aggregator::kTransMIL;
  fail(ErrorKind::kConfig,
       "unknown aggregator '" + std::string(name) + "' (expected abmil, clam_sb, transmil)");
}

void ModelConfig::validate() const {
  require(input_dim >= 1, ErrorKind::kConfig, "input_dim must be >= 1");
  require(hidden_dim >= 1, ErrorKind::kConfig, "hidden_dim must be >= 1");
  require(n_heads >= 1 && hidden_dim % n_heads == 0, ErrorKind::kConfig,
          "hidden_dim must be divisible by n_heads");
  require(n_attn_layers >= 1, ErrorKind::kConfig, "n_attn_layers must be >= 1");
  require(clam_k >= 1, ErrorKind::kConfig, "clam_k must be >= 1");
}

ModelParams::ModelParams(ModelConfig config, std::vector<NamedTensor> tensors)
    : config_(config), tensors_(std::move(tensors)) {}

std::size_t ModelParams::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return i;
  fail(ErrorKind::kInvalidInput, "no parameter named '" + std::string(name) + "'");
}

std::size_t ModelParams::n_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

namespace {

class ParamBuilder {
 public:
  explicit ParamBuilder(std::uint64_t seed) : root_(CounterRng(seed).derive("init")) {}

  void linear(const std::string& prefix, int fan_in, int fan_out) {
    uniform(prefix + ".weight", fan_in, fan_out, fan_in);
    uniform(prefix + ".bias", 1, fan_out, fan_in);
  }

  void uniform(const std::string& name, int rows, int cols, int fan_in) {
    CounterRng rng = root_.derive(name);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
    out_.push_back({name, std::move(m)});
  }

  void layernorm(const std::string& prefix, int dim) {
    out_.push_back({prefix + ".gamma", Matrix::Ones(1, dim)});
    out_.push_back({prefix + ".beta", Matrix::Zero(1, dim)});
  }

  std::vector<NamedTensor> take() { return std::move(out_); }

 private:
  CounterRng root_;
  std::vector<NamedTensor> out_;
};

constexpr std::array<const char*, kNumTasks> kHeadNames = {"head.msi", "head.mss", "head.hyper"};

std::string layer_name(int l, const char* part) {
  return "layer" + std::to_string(l) + "." + part;
}

}  // namespace

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  const int d = config.input_dim;
  const int h = config.hidden_dim;
  ParamBuilder b(config.seed);
  b.linear("proj", d, h);
  if (config.aggregator == Aggregator::kTransMIL) {
    b.uniform("cls", 1, h, h);
    for (int l = 0; l < config.n_attn_layers; ++l) {
      b.linear(layer_name(l, "q"), h, h);
      b.linear(layer_name(l, "k"), h, h);
      b.linear(layer_name(l, "v"), h, h);
      b.linear(layer_name(l, "o"), h, h);
      b.layernorm(layer_name(l, "ln1"), h);
      b.linear(layer_name(l, "ff1"), h, 2 * h);
      b.linear(layer_name(l, "ff2"), 2 * h, h);
      b.layernorm(layer_name(l, "ln2"), h);
    }
  } else {
    b.linear("attn.V", h, h);
    b.linear("attn.U", h, h);
    b.linear("attn.w", h, 1);
    if (config.aggregator == Aggregator::kCLAM_SB) b.linear("inst", h, 1);
  }
  for (const char* head : kHeadNames) b.linear(head, h, 1);
  return ModelParams(config, b.take());
}

BoundParams::BoundParams(Tape& tape, const ModelParams& params, bool differentiable)
    : params_(&params) {
  vars_.reserve(params.tensors().size());
  for (const auto& t : params.tensors())
    vars_.push_back(differentiable ? tape.variable(t.value) : tape.constant(t.value));
}

namespace {

Var linear(Var x, const BoundParams& p, const std::string& prefix) {
  return ad::add(ad::matmul(x, p[prefix + ".weight"]), p[prefix + ".bias"]);
}

Var affine_layernorm(Var x, const BoundParams& p, const std::string& prefix) {
  return ad::add(ad::mul(ad::layernorm_rows(x), p[prefix + ".gamma"]), p[prefix + ".beta"]);
}

Var heads(Var embedding, const BoundParams& p) {
  std::vector<Var> parts;
  for (const char* head : kHeadNames) parts.push_back(linear(embedding, p, head));
  return ad::concat_cols(parts);
}

void check_features(const ModelConfig& cfg, Var features) {
  require(features.rows() >= 1, ErrorKind::kInvalidInput, "bag must contain at least one tile");
  require(features.cols() == cfg.input_dim, ErrorKind::kInvalidInput,
          "feature dimension " + std::to_string(features.cols()) +
              " does not match model input_dim " + std::to_string(cfg.input_dim));
}

struct GatedAttention {
  Var embedded;    // n x H
  Var scores;      // n x 1, pre-softmax
  Var attention;   // n x 1
  Var bag;         // 1 x H
};

GatedAttention gated_attention(const BoundParams& p, Var features) {
  GatedAttention g;
  g.embedded = ad::relu(linear(features, p, "proj"));
  const Var gate = ad::mul(ad::tanh(linear(g.embedded, p, "attn.V")),
                           ad::sigmoid(linear(g.embedded, p, "attn.U")));
  g.scores = linear(gate, p, "attn.w");
  const Var weights = ad::softmax_rows(ad::transpose(g.scores));  // 1 x n
  g.attention = ad::transpose(weights);
  g.bag = ad::matmul(weights, g.embedded);
  return g;
}

// Post-residual blocks. Only the CLS row reaches the heads, so
// the last layer evaluates its query, feedforward and normalization for that
// row alone; keys and values still cover every token.
ForwardGraph transmil_graph(const BoundParams& p, Var features) {
  const ModelConfig& cfg = p.config();
  Tape& tape = features.tape();
  const Eigen::Index n = features.rows();

  Var z = ad::concat_rows(p["cls"], linear(features, p, "proj"));
  Matrix cls_attention;
  for (int l = 0; l < cfg.n_attn_layers; ++l) {
    const bool last = l + 1 == cfg.n_attn_layers;
    const Var queries = last ? ad::slice_rows(z, 0, 1) : z;
    const Var q = linear(queries, p, layer_name(l, "q"));
    const Var k = linear(z, p, layer_name(l, "k"));
    const Var v = linear(z, p, layer_name(l, "v"));
    ad::AttentionResult attn = ad::multihead_attention(q, k, v, cfg.n_heads);
    if (last) cls_attention = attn.mean_probs.row(0).tail(n);
    const Var mixed = linear(attn.output, p, layer_name(l, "o"));
    Var y = affine_layernorm(ad::add(queries, mixed), p, layer_name(l, "ln1"));
    const Var ff = linear(ad::relu(linear(y, p, layer_name(l, "ff1"))), p, layer_name(l, "ff2"));
    z = affine_layernorm(ad::add(y, ff), p, layer_name(l, "ln2"));
  }

  ForwardGraph out;
  out.logits = heads(z, p);
  // Mean over heads, renormalized over tiles (the CLS column is dropped).
  Matrix att = (cls_attention / cls_attention.sum()).transpose();
  out.attention = tape.constant(std::move(att));
  return out;
}

}  // namespace

std::pair<std::vector<Eigen::Index>, std::vector<double>> select_pseudo_labels(
    const Eigen::VectorXd& scores, int k, int slide_label) {
  const Eigen::Index n = scores.size();
  std::pair<std::vector<Eigen::Index>, std::vector<double>> out;
  if (k < 1 || n < 2 * static_cast<Eigen::Index>(k)) return out;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });
  std::vector<Eigen::Index> ascending(static_cast<std::size_t>(n));
  std::iota(ascending.begin(), ascending.end(), 0);
  std::stable_sort(ascending.begin(), ascending.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores(a) < scores(b); });
  const double top_label = slide_label == 1 ? 1.0 : 0.0;
  for (int i = 0; i < k; ++i) {
    out.first.push_back(order[static_cast<std::size_t>(i)]);
    out.second.push_back(top_label);
  }
  for (int i = 0; i < k; ++i) {
    out.first.push_back(ascending[static_cast<std::size_t>(i)]);
    out.second.push_back(1.0 - top_label);
  }
  return out;
}

ForwardGraph forward(const BoundParams& p, Var features, std::optional<int> slide_label) {
  const ModelConfig& cfg = p.config();
  check_features(cfg, features);
  if (cfg.aggregator == Aggregator::kTransMIL) return transmil_graph(p, features);

  const GatedAttention g = gated_attention(p, features);
  ForwardGraph out;
  out.logits = heads(g.bag, p);
  out.attention = g.attention;
  if (cfg.aggregator == Aggregator::kCLAM_SB) {
    out.instance_logits = linear(g.embedded, p, "inst");
    if (slide_label) {
      auto [rows, labels] = select_pseudo_labels(g.scores.value().col(0), cfg.clam_k, *slide_label);
      out.pseudo_rows = std::move(rows);
      out.pseudo_labels = std::move(labels);
    }
  }
  return out;
}

namespace {

BagOutput to_bag_output(const ForwardGraph& g) {
  BagOutput out;
  for (int t = 0; t < kNumTasks; ++t) out.logits[static_cast<std::size_t>(t)] = g.logits.value()(0, t);
  out.attention = g.attention.value().col(0);
  return out;
}

ForwardGraph run_inference(Tape& tape, const ModelParams& params, const Eigen::MatrixXd& features,
                           std::optional<int> slide_label = std::nullopt) {
  const BoundParams bound(tape, params, false);
  return forward(bound, tape.constant(features), slide_label);
}

void expect_aggregator(const ModelParams& params, bool ok, const char* what) {
  require(ok, ErrorKind::kInvalidInput,
          std::string(what) + " called with a " + to_string(params.config().aggregator) + " model");
}

}  // namespace

BagOutput abmil_forward(const ModelParams& params, const Eigen::MatrixXd& features) {
  expect_aggregator(params, params.config().aggregator != Aggregator::kTransMIL, "abmil_forward");
  Tape tape;
  return to_bag_output(run_inference(tape, params, features));
}

BagOutput transmil_forward(const ModelParams& params, const Eigen::MatrixXd& features) {
  expect_aggregator(params, params.config().aggregator == Aggregator::kTransMIL,
                    "transmil_forward");
  Tape tape;
  return to_bag_output(run_inference(tape, params, features));
}

ClamOutput clam_forward(const ModelParams& params, const Eigen::MatrixXd& features,
                        std::optional<int> slide_label) {
  expect_aggregator(params, params.config().aggregator == Aggregator::kCLAM_SB, "clam_forward");
  Tape tape;
  const ForwardGraph g = run_inference(tape, params, features, slide_label);
  ClamOutput out;
  out.bag = to_bag_output(g);
  out.instance_logits = g.instance_logits->value().col(0);
  out.pseudo_rows = g.pseudo_rows;
  out.pseudo_labels = g.pseudo_labels;
  return out;
}

BagOutput predict(const ModelParams& params, const Eigen::MatrixXd& features) {
  Tape tape;
  return to_bag_output(run_inference(tape, params, features));
}

namespace {

void check_finite_logits(const Matrix& logits) {
  require(logits.allFinite(), ErrorKind::kNumeric, "non-finite logits in loss");
}

}  // namespace

Var multitask_loss(Var logits, const std::array<int, kNumTasks>& labels,
                   const std::array<double, kNumTasks>& pos_weights,
                   std::optional<Var> instance, double instance_coeff) {
  require(logits.rows() == 1 && logits.cols() == kNumTasks, ErrorKind::kInvalidInput,
          "multitask_loss expects 1x3 logits");
  check_finite_logits(logits.value());
  Matrix pos(1, kNumTasks);
  Matrix neg(1, kNumTasks);
  for (int t = 0; t < kNumTasks; ++t) {
    const auto i = static_cast<std::size_t>(t);
    require(pos_weights[i] > 0.0, ErrorKind::kInvalidInput, "class weights must be positive");
    pos(0, t) = pos_weights[i] * labels[i];
    neg(0, t) = 1.0 - labels[i];
  }
  Tape& tape = logits.tape();
  const Var terms = ad::add(ad::mul(ad::softplus(ad::scale(logits, -1.0)), tape.constant(pos)),
                            ad::mul(ad::softplus(logits), tape.constant(neg)));
  Var loss = ad::scale(ad::sum(terms), 1.0 / kNumTasks);
  if (instance) loss = ad::add(loss, ad::scale(*instance, instance_coeff));
  return loss;
}

double multitask_loss(const std::array<double, kNumTasks>& logits,
                      const std::array<int, kNumTasks>& labels,
                      const std::array<double, kNumTasks>& pos_weights) {
  Tape tape;
  Matrix l(1, kNumTasks);
  for (int t = 0; t < kNumTasks; ++t) l(0, t) = logits[static_cast<std::size_t>(t)];
  return multitask_loss(tape.constant(l), labels, pos_weights).scalar();
}

Var instance_loss(const ForwardGraph& graph) {
  require(graph.instance_logits.has_value() && !graph.pseudo_rows.empty(),
          ErrorKind::kInvalidInput, "instance_loss: no pseudo-labelled tiles");
  Tape& tape = graph.instance_logits->tape();
  const Var z = ad::gather_rows(*graph.instance_logits, graph.pseudo_rows);
  Matrix y(z.rows(), 1);
  for (Eigen::Index i = 0; i < z.rows(); ++i) y(i, 0) = graph.pseudo_labels[static_cast<std::size_t>(i)];
  const Matrix not_y = Matrix::Ones(z.rows(), 1) - y;
  const Var terms = ad::add(ad::mul(ad::softplus(ad::scale(z, -1.0)), tape.constant(y)),
                            ad::mul(ad::softplus(z), tape.constant(not_y)));
  return ad::scale(ad::sum(terms), 1.0 / static_cast<double>(z.rows()));
}

}  // namespace msiprior

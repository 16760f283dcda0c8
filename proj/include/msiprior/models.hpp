#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "msiprior/autodiff.hpp"

namespace msiprior {

enum class Aggregator : std::uint32_t { kABMIL = 0, kCLAM_SB = 1, kTransMIL = 2 };

std::string to_string(Aggregator a);
Aggregator parse_aggregator(std::string_view name);

/// Task order used for every logit/label/weight triple.
enum Task : int { kMSI = 0, kMSS = 1, kHyper = 2 };
inline constexpr int kNumTasks = 3;

struct ModelConfig {
  Aggregator aggregator = Aggregator::kTransMIL;
  int input_dim = 0;
  int hidden_dim = 128;
  int n_heads = 4;
  int n_attn_layers = 2;
  int clam_k = 8;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedTensor {
  std::string name;
  ad::Matrix value;
};

/// Parameters of one aggregator plus its three task heads, in a fixed order.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(ModelConfig config, std::vector<NamedTensor> tensors);

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  std::vector<NamedTensor>& tensors() { return tensors_; }
  std::size_t index_of(std::string_view name) const;
  const ad::Matrix& at(std::string_view name) const { return tensors_[index_of(name)].value; }
  ad::Matrix& at(std::string_view name) { return tensors_[index_of(name)].value; }
  std::size_t n_scalars() const;

 private:
  ModelConfig config_;
  std::vector<NamedTensor> tensors_;
};

/// Deterministic initialization: weights and biases uniform in
/// +-1/sqrt(fan_in) from a counter-based stream keyed by (seed, tensor name);
/// layer-norm gains 1 and offsets 0.
ModelParams init_params(const ModelConfig& config);

/// Parameters of a ModelParams bound as leaves on one tape.
class BoundParams {
 public:
  BoundParams(const ModelParams& params, std::vector<ad::Var> vars)
      : params_(&params), vars_(std::move(vars)) {}
  BoundParams(ad::Tape& tape, const ModelParams& params, bool differentiable = true);

  ad::Var operator[](std::string_view name) const { return vars_[params_->index_of(name)]; }
  const std::vector<ad::Var>& vars() const { return vars_; }
  const ModelConfig& config() const { return params_->config(); }

 private:
  const ModelParams* params_;
  std::vector<ad::Var> vars_;
};

/// Differentiable forward result. `attention` is n x 1.
struct ForwardGraph {
  ad::Var logits;
  ad::Var attention;
  std::optional<ad::Var> instance_logits;  // CLAM only, n x 1
  std::vector<Eigen::Index> pseudo_rows;   // CLAM only
  std::vector<double> pseudo_labels;
};

/// Tape-level forward dispatching on the configured aggregator. For CLAM,
/// `slide_label` (MSI) selects the pseudo-label direction; pass nullopt at
/// inference time.
ForwardGraph forward(const BoundParams& params, ad::Var features,
                     std::optional<int> slide_label = std::nullopt);

struct BagOutput {
  std::array<double, kNumTasks> logits{};
  Eigen::VectorXd attention;
};

struct ClamOutput {
  BagOutput bag;
  Eigen::VectorXd instance_logits;
  std::vector<Eigen::Index> pseudo_rows;
  std::vector<double> pseudo_labels;
};

BagOutput abmil_forward(const ModelParams& params, const Eigen::MatrixXd& features);
BagOutput transmil_forward(const ModelParams& params, const Eigen::MatrixXd& features);
ClamOutput clam_forward(const ModelParams& params, const Eigen::MatrixXd& features,
                        std::optional<int> slide_label = std::nullopt);
BagOutput predict(const ModelParams& params, const Eigen::MatrixXd& features);

/// Top-k and bottom-k tiles by attention score, ties broken by tile index.
/// Returns (rows, labels); empty when n < 2k. Positive slides label the top
/// tiles 1 and bottom tiles 0; negative slides the reverse.
std::pair<std::vector<Eigen::Index>, std::vector<double>> select_pseudo_labels(
    const Eigen::VectorXd& scores, int k, int slide_label);

/// Mean over the three tasks of class-weighted BCE-with-logits: positive
/// terms are multiplied by the task's positive-class weight. When an
/// instance loss is given it is added scaled by `instance_coeff`.
ad::Var multitask_loss(ad::Var logits, const std::array<int, kNumTasks>& labels,
                       const std::array<double, kNumTasks>& pos_weights,
                       std::optional<ad::Var> instance_loss = std::nullopt,
                       double instance_coeff = 0.0);

double multitask_loss(const std::array<double, kNumTasks>& logits,
                      const std::array<int, kNumTasks>& labels,
                      const std::array<double, kNumTasks>& pos_weights);

/// Mean unweighted BCE of instance logits against pseudo-labels.
ad::Var instance_loss(const ForwardGraph& graph);

}  // namespace msiprior

#include "msiprior/harness.hpp"

#include <optional>

#include "msiprior/rng.hpp"

namespace msiprior {

std::vector<GradCheckCase> tiny_grad_check_cases(int n_seeds) {
  std::vector<GradCheckCase> out;
  for (Aggregator agg : {Aggregator::kABMIL, Aggregator::kCLAM_SB, Aggregator::kTransMIL}) {
    for (int s = 0; s < n_seeds; ++s) {
      GradCheckCase c;
      c.config.aggregator = agg;
      c.config.input_dim = 8;
      c.config.hidden_dim = agg == Aggregator::kTransMIL ? 8 : 4;
      c.config.n_heads = 2;
      c.config.clam_k = 2;
      c.config.seed = static_cast<std::uint64_t>(s);
      c.input_seed = static_cast<std::uint64_t>(s) + 100;
      c.label = to_string(agg) + " seed " + std::to_string(s);
      out.push_back(c);
    }
  }
  return out;
}

void run_grad_check(GradCheckCase& c, double eps) {
  const ModelParams params = init_params(c.config);
  CounterRng rng(c.input_seed);
  Eigen::MatrixXd x(c.n_tiles, c.config.input_dim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();

  std::vector<ad::Matrix> values;
  for (const auto& t : params.tensors()) values.push_back(t.value);
  const ad::LossFn fn = [&](ad::Tape& tape, const std::vector<ad::Var>& vars) {
    const BoundParams bound(params, vars);
    const ForwardGraph g = forward(bound, tape.constant(x), 1);
    std::optional<ad::Var> inst;
    if (!g.pseudo_rows.empty()) inst = instance_loss(g);
    return multitask_loss(g.logits, {1, 0, 1}, {2.0, 1.5, 3.0}, inst, 0.3);
  };
  c.max_rel_error = ad::grad_check(fn, values, eps);
}

}  // namespace msiprior

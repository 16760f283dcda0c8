#pragma once

#include <string>
#include <vector>

#include "msiprior/models.hpp"

namespace msiprior {

struct GradCheckCase {
  std::string label;
  ModelConfig config;
  int n_tiles = 5;
  std::uint64_t input_seed = 0;
  double max_rel_error = 0.0;
};

/// Tiny configurations of every aggregator (input dim 8, five tiles; hidden
/// 4 for ABMIL and CLAM-SB, hidden 8 with two heads for TransMIL), one case
/// per (aggregator, seed). The loss is the full multitask objective,
/// including the CLAM instance term.
std::vector<GradCheckCase> tiny_grad_check_cases(int n_seeds = 5);

/// Fills max_rel_error with the central-difference comparison at `eps`.
void run_grad_check(GradCheckCase& c, double eps = 1e-5);

}  // namespace msiprior

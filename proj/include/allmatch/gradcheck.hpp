#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "allmatch/nn.hpp"

namespace allmatch {

enum class LossKind { kSupervised, kUnsupervised, kBcc };

const char* loss_kind_name(LossKind kind);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_coordinate;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compare the analytic gradient of one loss component against central
/// finite differences over every parameter of a random model on a random
/// batch. The weak-view quantities (pseudo-labels, weights, candidate sets)
/// are fixed targets, exactly as in training. `corrupt_analytic` injects an
/// offset into one analytic entry; it exists so the failure path can be
/// exercised honestly.
GradCheckResult gradcheck_loss(LossKind kind, int input_dim,
                               const std::vector<int>& hidden_dims,
                               int num_classes, int batch, std::uint64_t seed,
                               double fd_step = 1e-5,
                               double corrupt_analytic = 0.0);

}  // namespace allmatch

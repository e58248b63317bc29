#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pogmv/tape.hpp"

namespace pogmv {

// Per-view confidence from the Dirichlet strength of ReLU-activated class
// evidence: D_i = sum_k (max(0, z_ik) + 1), c_i = n / D_i.
struct CredibilityWeights {
  std::vector<double> c;       // raw, all > 0
  std::vector<double> c_norm;  // c / sum(c), sums to 1
};

CredibilityWeights credibility_weights(
    const std::vector<std::vector<double>>& view_logits, int n);

// Ordered (source, target) pairs; the default chain runs strictly
// low-altitude -> high-altitude.
using TransferPlan = std::vector<std::pair<int, int>>;

TransferPlan default_transfer_plan(int n);

// Parses "0>1,1>2" (any direction permitted, for ablations).
TransferPlan parse_transfer_plan(const std::string& text);
std::string plan_to_string(const TransferPlan& plan);

// L_kt: mean over plan pairs of c_target * ||detach(a_source) - a_target||_F^2.
// Pairs whose endpoint has no feature this batch are skipped; if none remain
// the loss is a constant zero.
Var transfer_loss(Tape& t, const std::vector<std::optional<Var>>& action_feats,
                  const CredibilityWeights& weights, const TransferPlan& plan);

// L_fd: mean over views of ||detach(a_hat) - f^c||_F^2.
Var feature_align_loss(Tape& t,
                       const std::vector<std::optional<Var>>& refined_action,
                       const std::vector<std::optional<Var>>& common_feats);

Var guide_loss(Tape& t, Var kt, Var fd);

}  // namespace pogmv

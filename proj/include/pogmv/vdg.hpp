#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pogmv/tape.hpp"

namespace pogmv {

// Inter-view graph. E holds pairwise squared distances between batch-mean
// view logits (constant per batch); W_raw is learnable and W = row-softmax.

// E_ij = ||z_i - z_j||_2^2 over per-view mean logits; symmetric, zero diag.
Tensor logit_distance_matrix(const std::vector<std::vector<double>>& view_logits);

// Pairwise squared Frobenius distances between pooled view features; used to
// initialize W_raw (negated, so nearby views start with the larger weight).
Tensor feature_distance_weights(const std::vector<Tensor>& pooled_feats);

// Row-wise softmax of W_raw.
Var normalize_graph(Tape& t, Var w_raw);

// L_vg = ||W (.) E||_F with E held constant.
Var discretize_loss(Tape& t, Var w, const Tensor& e);

// v_hat_i = sum_j W_ij * feats_j. Shapes preserved; all views required.
std::vector<Var> apply_discretization(Tape& t, Var w,
                                      const std::vector<Var>& view_feats);

// Mean over present views of ||target - pred||_F^2 / (samples in that view).
// Serves both the input reconstruction and the feature cycle terms.
Var reconstruction_loss(Tape& t, const std::vector<std::optional<Var>>& targets,
                        const std::vector<std::optional<Var>>& recons);
Var cycle_loss(Tape& t, const std::vector<std::optional<Var>>& feats,
               const std::vector<std::optional<Var>>& re_encoded);

// Plain-text dump of E and W for one epoch, appended to `path`.
void append_graph_state(const std::string& path, int epoch, const Tensor& e,
                        const Tensor& w);

}  // namespace pogmv

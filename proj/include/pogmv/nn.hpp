#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "pogmv/tape.hpp"

namespace pogmv::nn {

// Squared Frobenius norm of (a - b), as a scalar Var.
Var fro2(Var a, Var b);

// Per-(sample, channel) normalization over the inner dims, then a learnable
// per-channel affine. Built from primitives so the backward pass is exact.
Var instance_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);

// Elementwise mean of a non-empty list of same-shape Vars.
Var mean_of(Tape& t, const std::vector<Var>& xs);

// Deterministic fan-in scaled normal init.
Tensor normal_init(std::vector<int> shape, double stddev, std::mt19937_64& rng);

// Central finite-difference gradient check of `loss` w.r.t. `leaf`.
// Returns the worst relative error max(|a-f| / max(|a|,|f|,floor)).
double grad_check(Tape& t, Var loss, Var leaf, double h = 1e-5,
                  double floor_ = 1e-6);

double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b);

}  // namespace pogmv::nn

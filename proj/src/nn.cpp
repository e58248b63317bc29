#include "pogmv/nn.hpp"

#include <cmath>

#include "pogmv/errors.hpp"

namespace pogmv::nn {

Var fro2(Var a, Var b) {
  Tape& t = *a.tape;
  Var d = t.sub(a, b);
  return t.sum_all(t.mul(d, d));
}

Var instance_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  Var m = t.mean_inner_bcast(x);
  Var d = t.sub(x, m);
  Var v = t.mean_inner_bcast(t.mul(d, d));
  Var y = t.mul(d, t.rsqrt(v, eps));
  return t.channel_affine(y, gamma, beta);
}

Var mean_of(Tape& t, const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("AllViewsMissing", "mean_of: empty list");
  Var acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = t.add(acc, xs[i]);
  return t.scale(acc, 1.0 / static_cast<double>(xs.size()));
}

Tensor normal_init(std::vector<int> shape, double stddev, std::mt19937_64& rng) {
  Tensor out(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : out.data) x = dist(rng);
  return out;
}

double grad_check(Tape& t, Var loss, Var leaf, double h, double floor_) {
  t.backward(loss);
  Tensor analytic = t.grad(leaf);  // copy before perturbation sweeps
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    double lp = t.loss_under_perturbation(loss, leaf, i, h);
    double lm = t.loss_under_perturbation(loss, leaf, i, -h);
    double fd = (lp - lm) / (2.0 * h);
    double a = analytic.data[i];
    double denom = std::max({std::fabs(a), std::fabs(fd), floor_});
    worst = std::max(worst, std::fabs(a - fd) / denom);
  }
  return worst;
}

double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace pogmv::nn

#include "pogmv/vdg.hpp"

#include <cstdio>
#include <fstream>

#include "pogmv/errors.hpp"
#include "pogmv/nn.hpp"

namespace pogmv {

Tensor logit_distance_matrix(
    const std::vector<std::vector<double>>& view_logits) {
  int n = static_cast<int>(view_logits.size());
  if (n < 2) throw Error("InvalidViewCount", std::to_string(n));
  std::size_t k = view_logits[0].size();
  for (const auto& z : view_logits) {
    if (z.size() != k) throw Error("ShapeMismatch", "logit vectors differ in length");
  }
  Tensor e({n, n});
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        double diff = view_logits[i][c] - view_logits[j][c];
        d += diff * diff;
      }
      e.data[static_cast<std::size_t>(i * n + j)] = d;
      e.data[static_cast<std::size_t>(j * n + i)] = d;
    }
  }
  return e;
}

Tensor feature_distance_weights(const std::vector<Tensor>& pooled_feats) {
  int n = static_cast<int>(pooled_feats.size());
  if (n < 2) throw Error("InvalidViewCount", std::to_string(n));
  for (int i = 1; i < n; ++i) {
    require_same_shape(pooled_feats[0], pooled_feats[i],
                       "feature_distance_weights");
  }
  Tensor w({n, n});
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < pooled_feats[i].data.size(); ++c) {
        double diff = pooled_feats[i].data[c] - pooled_feats[j].data[c];
        d += diff * diff;
      }
      w.data[static_cast<std::size_t>(i * n + j)] = d;
      w.data[static_cast<std::size_t>(j * n + i)] = d;
    }
  }
  return w;
}

Var normalize_graph(Tape& t, Var w_raw) { return t.row_softmax(w_raw); }

Var discretize_loss(Tape& t, Var w, const Tensor& e) {
  require_same_shape(w.val(), e, "discretize_loss");
  Var we = t.mul_const(w, e);
  return t.sqrt_op(t.sum_all(t.mul(we, we)));
}

std::vector<Var> apply_discretization(Tape& t, Var w,
                                      const std::vector<Var>& view_feats) {
  int n = static_cast<int>(view_feats.size());
  const auto& ws = w.val().shape;
  if (ws.size() != 2 || ws[0] != n || ws[1] != n) {
    throw Error("ShapeMismatch", "graph weights " + shape_str(ws));
  }
  for (int i = 1; i < n; ++i) {
    require_same_shape(view_feats[0].val(), view_feats[i].val(),
                       "apply_discretization");
  }
  std::vector<Var> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Var acc = t.scale_by_scalar(view_feats[0], t.elem(w, i, 0));
    for (int j = 1; j < n; ++j) {
      acc = t.add(acc, t.scale_by_scalar(view_feats[static_cast<std::size_t>(j)],
                                         t.elem(w, i, j)));
    }
    out.push_back(acc);
  }
  return out;
}

namespace {

Var per_view_mse(Tape& t, const std::vector<std::optional<Var>>& targets,
                 const std::vector<std::optional<Var>>& preds,
                 const char* what) {
  if (targets.size() != preds.size()) {
    throw Error("ShapeMismatch", std::string(what) + ": view counts differ");
  }
  std::vector<Var> terms;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!targets[i] || !preds[i]) continue;
    require_same_shape(targets[i]->val(), preds[i]->val(), what);
    int batch = targets[i]->val().shape.empty() ? 1 : targets[i]->val().shape[0];
    terms.push_back(
        t.scale(nn::fro2(*targets[i], *preds[i]), 1.0 / std::max(1, batch)));
  }
  if (terms.empty()) return t.leaf(Tensor::scalar(0.0));
  return nn::mean_of(t, terms);
}

}  // namespace

Var reconstruction_loss(Tape& t, const std::vector<std::optional<Var>>& targets,
                        const std::vector<std::optional<Var>>& recons) {
  return per_view_mse(t, targets, recons, "reconstruction_loss");
}

Var cycle_loss(Tape& t, const std::vector<std::optional<Var>>& feats,
               const std::vector<std::optional<Var>>& re_encoded) {
  return per_view_mse(t, feats, re_encoded, "cycle_loss");
}

void append_graph_state(const std::string& path, int epoch, const Tensor& e,
                        const Tensor& w) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("IoFailure", path);
  auto write_matrix = [&](const char* name, const Tensor& m) {
    int n = m.shape[0];
    out << name << "\n";
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.9f",
                      m.data[static_cast<std::size_t>(i * n + j)]);
        out << (j ? " " : "") << buf;
      }
      out << "\n";
    }
  };
  out << "epoch " << epoch << "\n";
  write_matrix("E", e);
  write_matrix("W", w);
  out << "\n";
  if (!out) throw Error("IoFailure", path);
}

}  // namespace pogmv

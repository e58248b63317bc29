#include "pogmv/apog.hpp"

#include <cmath>
#include <sstream>

#include "pogmv/nn.hpp"

namespace pogmv {

CredibilityWeights credibility_weights(
    const std::vector<std::vector<double>>& view_logits, int n) {
  if (static_cast<int>(view_logits.size()) != n || n < 1) {
    throw Error("ShapeMismatch", "credibility_weights: logits for each view");
  }
  CredibilityWeights out;
  out.c.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double strength = 0.0;  // Dirichlet strength: sum of (evidence + 1)
    for (double z : view_logits[i]) {
      if (!std::isfinite(z)) throw Error("DivergenceDetected", "view logits");
      strength += std::max(0.0, z) + 1.0;
    }
    out.c[i] = static_cast<double>(n) / strength;
  }
  double total = 0.0;
  for (double c : out.c) total += c;
  out.c_norm.resize(out.c.size());
  for (std::size_t i = 0; i < out.c.size(); ++i) out.c_norm[i] = out.c[i] / total;
  return out;
}

TransferPlan default_transfer_plan(int n) {
  if (n < 2) throw Error("InvalidViewCount", std::to_string(n));
  TransferPlan plan;
  for (int i = 0; i + 1 < n; ++i) plan.emplace_back(i, i + 1);
  return plan;
}

TransferPlan parse_transfer_plan(const std::string& text) {
  TransferPlan plan;
  if (text.empty() || text == "none") return plan;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto gt = item.find('>');
    if (gt == std::string::npos) {
      throw Error("InvalidSpec", "transfer plan pair '" + item + "'");
    }
    int s = 0, t = 0;
    try {
      std::size_t ps = 0, pt = 0;
      std::string left = item.substr(0, gt), right = item.substr(gt + 1);
      s = std::stoi(left, &ps);
      t = std::stoi(right, &pt);
      if (ps != left.size() || pt != right.size()) {
        throw Error("InvalidSpec", "transfer plan pair '" + item + "'");
      }
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw Error("InvalidSpec", "transfer plan pair '" + item + "'");
    }
    if (s == t || s < 0 || t < 0) {
      throw Error("InvalidSpec", "transfer plan pair '" + item + "'");
    }
    plan.emplace_back(s, t);
  }
  return plan;
}

std::string plan_to_string(const TransferPlan& plan) {
  if (plan.empty()) return "none";
  std::ostringstream os;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (i) os << ",";
    os << plan[i].first << ">" << plan[i].second;
  }
  return os.str();
}

Var transfer_loss(Tape& t, const std::vector<std::optional<Var>>& action_feats,
                  const CredibilityWeights& weights, const TransferPlan& plan) {
  int n = static_cast<int>(action_feats.size());
  std::vector<Var> terms;
  for (const auto& [src, dst] : plan) {
    if (src < 0 || src >= n || dst < 0 || dst >= n) {
      throw Error("IndexOutOfRange", "transfer plan");
    }
    if (!action_feats[src] || !action_feats[dst]) continue;
    Var a_src = *action_feats[src];
    Var a_dst = *action_feats[dst];
    require_same_shape(a_src.val(), a_dst.val(), "transfer_loss");
    Var d = nn::fro2(t.detach(a_src), a_dst);
    terms.push_back(t.scale(d, weights.c.at(static_cast<std::size_t>(dst))));
  }
  if (terms.empty()) return t.leaf(Tensor::scalar(0.0));
  return nn::mean_of(t, terms);
}

Var feature_align_loss(Tape& t,
                       const std::vector<std::optional<Var>>& refined_action,
                       const std::vector<std::optional<Var>>& common_feats) {
  if (refined_action.size() != common_feats.size()) {
    throw Error("ShapeMismatch", "feature_align_loss: view counts differ");
  }
  std::vector<Var> terms;
  for (std::size_t i = 0; i < refined_action.size(); ++i) {
    if (!refined_action[i] || !common_feats[i]) continue;
    require_same_shape(refined_action[i]->val(), common_feats[i]->val(),
                       "feature_align_loss");
    terms.push_back(nn::fro2(t.detach(*refined_action[i]), *common_feats[i]));
  }
  if (terms.empty()) return t.leaf(Tensor::scalar(0.0));
  return nn::mean_of(t, terms);
}

Var guide_loss(Tape& t, Var kt, Var fd) { return t.add(kt, fd); }

}  // namespace pogmv

#include "pogmv/ofd.hpp"

#include "pogmv/nn.hpp"

namespace pogmv {

Var correlation_map(Tape& t, ParamBinder& p, Var f_common, Var f_special) {
  require_same_shape(f_common.val(), f_special.val(), "correlation_map");
  Stride3 one{1, 1, 1};
  Pad3 zero{0, 0, 0};
  Var proj = t.conv3d(f_common, p("decouple.proj.w"), p("decouple.proj.b"), one,
                      zero);
  Var x = t.concat_ch(proj, f_special);
  x = t.conv3d(x, p("decouple.wr1.w"), p("decouple.wr1.b"), one, zero);
  x = t.relu(nn::instance_norm(t, x, p("decouple.norm.gamma"),
                               p("decouple.norm.beta")));
  x = t.conv3d(x, p("decouple.wr2.w"), p("decouple.wr2.b"), one, zero);
  return t.sigmoid(x);
}

DecoupledPair decouple(Tape& t, Var f_special, Var correlation) {
  require_same_shape(f_special.val(), correlation.val(), "decouple");
  DecoupledPair out;
  out.correlation = correlation;
  out.action = t.mul(f_special, correlation);
  // v = f * (1 - R); together with a = f * R this reproduces f exactly up to
  // rounding.
  out.view = t.mul(f_special, t.add_const(t.scale(correlation, -1.0), 1.0));
  return out;
}

Var compensate_missing(Tape& t,
                       const std::vector<std::optional<Var>>& common_feats,
                       int missing_index) {
  int n = static_cast<int>(common_feats.size());
  if (missing_index < 0 || missing_index >= n) {
    throw Error("IndexOutOfRange", "missing_index " + std::to_string(missing_index));
  }
  std::vector<Var> present;
  for (int i = 0; i < n; ++i) {
    if (i == missing_index) continue;
    if (common_feats[i]) present.push_back(*common_feats[i]);
  }
  if (present.empty()) throw Error("AllViewsMissing", "");
  for (std::size_t i = 1; i < present.size(); ++i) {
    require_same_shape(present[0].val(), present[i].val(), "compensate_missing");
  }
  return nn::mean_of(t, present);
}

}  // namespace pogmv

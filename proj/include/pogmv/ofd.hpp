#pragma once

#include <optional>
#include <vector>

#include "pogmv/params.hpp"
#include "pogmv/tape.hpp"

namespace pogmv {

struct DecoupledPair {
  Var action;       // a^s = f^s * R
  Var view;         // v^s = f^s * (1 - R)
  Var correlation;  // R, every entry in (0, 1)
};

// R = sigmoid(two 1x1 convolutions over [proj(f^c), f^s]). The projection of
// f^c belongs to the decoupling unit's parameters.
Var correlation_map(Tape& t, ParamBinder& p, Var f_common, Var f_special);

DecoupledPair decouple(Tape& t, Var f_special, Var correlation);

// Arithmetic mean of the present common features, substituted for the missing
// view. Slots other than missing_index must be populated.
Var compensate_missing(Tape& t,
                       const std::vector<std::optional<Var>>& common_feats,
                       int missing_index);

}  // namespace pogmv

#pragma once

#include <cstdint>
#include <string>

#include "pogmv/params.hpp"
#include "pogmv/tape.hpp"

#include "json.hpp"

namespace pogmv {

// Toy stand-in for the X3D-style extractor: two blocks of a 3x3 spatial
// convolution (stride 2) followed by a kernel-3 temporal convolution, with
// per-channel normalization and ReLU. Decoders mirror the encoder with
// transposed convolutions.
struct BackboneConfig {
  int frames = 6;
  int channels = 1;
  int height = 16;
  int width = 16;
  int num_classes = 5;
  int n_views = 3;
  int c1 = 4;  // block-1 width
  int c2 = 8;  // feature width
  double dropout = 0.9;

  int feat_t() const { return frames; }
  int feat_h() const { return height / 4; }
  int feat_w() const { return width / 4; }

  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
};

// Creates every named parameter array (common/special extractors, decoders,
// decoupling unit, classifier head, per-view auxiliary heads).
void init_backbone_params(ParamStore& store, const BackboneConfig& cfg,
                          uint64_t seed);

class Backbone {
 public:
  explicit Backbone(BackboneConfig cfg) : cfg_(cfg) {}
  const BackboneConfig& config() const { return cfg_; }

  Var extract_common(Tape& t, ParamBinder& p, Var clip) const;
  Var extract_special(Tape& t, ParamBinder& p, Var clip, int view) const;
  // Concatenates [action, view] features and maps back to clip shape.
  Var decode(Tape& t, ParamBinder& p, Var action_feat, Var view_feat,
             int view) const;
  Var head_logits(Tape& t, ParamBinder& p, Var pooled) const;      // [N,c2]->[N,K]
  Var aux_logits(Tape& t, ParamBinder& p, Var pooled, int view) const;

 private:
  Var extractor(Tape& t, ParamBinder& p, Var clip,
                const std::string& prefix) const;
  void check_clip(const Tensor& clip) const;
  BackboneConfig cfg_;
};

}  // namespace pogmv

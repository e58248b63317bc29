#include "pogmv/backbone.hpp"

#include <cmath>
#include <random>

#include "pogmv/nn.hpp"

namespace pogmv {

nlohmann::json BackboneConfig::to_json() const {
  nlohmann::json j;
  j["frames"] = frames;
  j["channels"] = channels;
  j["height"] = height;
  j["width"] = width;
  j["num_classes"] = num_classes;
  j["n_views"] = n_views;
  j["c1"] = c1;
  j["c2"] = c2;
  j["dropout"] = dropout;
  return j;
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.frames = j.value("frames", c.frames);
  c.channels = j.value("channels", c.channels);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.n_views = j.value("n_views", c.n_views);
  c.c1 = j.value("c1", c.c1);
  c.c2 = j.value("c2", c.c2);
  c.dropout = j.value("dropout", c.dropout);
  return c;
}

namespace {

double conv_std(int fan_in) { return std::sqrt(2.0 / fan_in); }

void add_extractor(ParamStore& s, const std::string& prefix,
                   const BackboneConfig& cfg, std::mt19937_64& rng) {
  using nn::normal_init;
  int C = cfg.channels, c1 = cfg.c1, c2 = cfg.c2;
  s.add(prefix + ".conv1.w", normal_init({c1, C, 1, 3, 3}, conv_std(C * 9), rng));
  s.add(prefix + ".conv1.b", Tensor({c1}));
  s.add(prefix + ".tconv1.w",
        normal_init({c1, c1, 3, 1, 1}, conv_std(c1 * 3), rng));
  s.add(prefix + ".tconv1.b", Tensor({c1}));
  s.add(prefix + ".norm1.gamma", Tensor({c1}, 1.0));
  s.add(prefix + ".norm1.beta", Tensor({c1}));
  s.add(prefix + ".conv2.w", normal_init({c2, c1, 1, 3, 3}, conv_std(c1 * 9), rng));
  s.add(prefix + ".conv2.b", Tensor({c2}));
  s.add(prefix + ".tconv2.w",
        normal_init({c2, c2, 3, 1, 1}, conv_std(c2 * 3), rng));
  s.add(prefix + ".tconv2.b", Tensor({c2}));
  s.add(prefix + ".norm2.gamma", Tensor({c2}, 1.0));
  s.add(prefix + ".norm2.beta", Tensor({c2}));
}

void add_decoder(ParamStore& s, const std::string& prefix,
                 const BackboneConfig& cfg, std::mt19937_64& rng) {
  using nn::normal_init;
  int C = cfg.channels, c1 = cfg.c1, c2 = cfg.c2;
  // Transposed-conv weights are stored [Ci, Co, kt, kh, kw].
  s.add(prefix + ".up1.w",
        normal_init({2 * c2, c1, 1, 3, 3}, conv_std(2 * c2 * 9), rng));
  s.add(prefix + ".up1.b", Tensor({c1}));
  s.add(prefix + ".tconv.w",
        normal_init({c1, c1, 3, 1, 1}, conv_std(c1 * 3), rng));
  s.add(prefix + ".tconv.b", Tensor({c1}));
  s.add(prefix + ".norm.gamma", Tensor({c1}, 1.0));
  s.add(prefix + ".norm.beta", Tensor({c1}));
  s.add(prefix + ".up2.w", normal_init({c1, C, 1, 3, 3}, conv_std(c1 * 9), rng));
  s.add(prefix + ".up2.b", Tensor({C}));
}

}  // namespace

void init_backbone_params(ParamStore& s, const BackboneConfig& cfg,
                          uint64_t seed) {
  using nn::normal_init;
  std::mt19937_64 rng(seed);
  int c2 = cfg.c2, K = cfg.num_classes;

  add_extractor(s, "common", cfg, rng);
  for (int v = 0; v < cfg.n_views; ++v) {
    add_extractor(s, "special" + std::to_string(v), cfg, rng);
  }
  for (int v = 0; v < cfg.n_views; ++v) {
    add_decoder(s, "decoder" + std::to_string(v), cfg, rng);
  }
  // Decoupling unit: a linear projection of f^c plus two 1x1 convolutions.
  s.add("decouple.proj.w", normal_init({c2, c2, 1, 1, 1}, conv_std(c2), rng));
  s.add("decouple.proj.b", Tensor({c2}));
  s.add("decouple.wr1.w", normal_init({c2, 2 * c2, 1, 1, 1}, conv_std(2 * c2), rng));
  s.add("decouple.wr1.b", Tensor({c2}));
  s.add("decouple.norm.gamma", Tensor({c2}, 1.0));
  s.add("decouple.norm.beta", Tensor({c2}));
  s.add("decouple.wr2.w", normal_init({c2, c2, 1, 1, 1}, conv_std(c2), rng));
  s.add("decouple.wr2.b", Tensor({c2}));

  s.add("head.w", normal_init({K, c2}, std::sqrt(1.0 / c2), rng));
  s.add("head.b", Tensor({K}));
  for (int v = 0; v < cfg.n_views; ++v) {
    s.add("aux" + std::to_string(v) + ".w",
          normal_init({K, c2}, std::sqrt(1.0 / c2), rng));
    s.add("aux" + std::to_string(v) + ".b", Tensor({K}));
  }
}

void Backbone::check_clip(const Tensor& clip) const {
  if (clip.rank() != 5 || clip.shape[1] != cfg_.channels ||
      clip.shape[2] != cfg_.frames || clip.shape[3] != cfg_.height ||
      clip.shape[4] != cfg_.width) {
    throw Error("ShapeMismatch", "clip " + shape_str(clip.shape));
  }
}

Var Backbone::extractor(Tape& t, ParamBinder& p, Var clip,
                        const std::string& prefix) const {
  check_clip(clip.val());
  Stride3 down{1, 2, 2};
  Pad3 sp{0, 1, 1};
  Stride3 one{1, 1, 1};
  Pad3 tp{1, 0, 0};
  Var x = t.conv3d(clip, p(prefix + ".conv1.w"), p(prefix + ".conv1.b"), down, sp);
  x = t.conv3d(x, p(prefix + ".tconv1.w"), p(prefix + ".tconv1.b"), one, tp);
  x = t.relu(nn::instance_norm(t, x, p(prefix + ".norm1.gamma"),
                               p(prefix + ".norm1.beta")));
  x = t.conv3d(x, p(prefix + ".conv2.w"), p(prefix + ".conv2.b"), down, sp);
  x = t.conv3d(x, p(prefix + ".tconv2.w"), p(prefix + ".tconv2.b"), one, tp);
  x = t.relu(nn::instance_norm(t, x, p(prefix + ".norm2.gamma"),
                               p(prefix + ".norm2.beta")));
  return x;
}

Var Backbone::extract_common(Tape& t, ParamBinder& p, Var clip) const {
  return extractor(t, p, clip, "common");
}

Var Backbone::extract_special(Tape& t, ParamBinder& p, Var clip,
                              int view) const {
  if (view < 0 || view >= cfg_.n_views) {
    throw Error("UnknownView", std::to_string(view));
  }
  return extractor(t, p, clip, "special" + std::to_string(view));
}

Var Backbone::decode(Tape& t, ParamBinder& p, Var action_feat, Var view_feat,
                     int view) const {
  if (view < 0 || view >= cfg_.n_views) {
    throw Error("UnknownView", std::to_string(view));
  }
  require_same_shape(action_feat.val(), view_feat.val(), "decode");
  const auto& fs = action_feat.val().shape;
  if (fs.size() != 5 || fs[1] != cfg_.c2 || fs[2] != cfg_.feat_t() ||
      fs[3] != cfg_.feat_h() || fs[4] != cfg_.feat_w()) {
    throw Error("ShapeMismatch", "decode feature " + shape_str(fs));
  }
  std::string prefix = "decoder" + std::to_string(view);
  Stride3 up{1, 2, 2};
  Pad3 sp{0, 1, 1};
  Pad3 opad{0, 1, 1};
  Stride3 one{1, 1, 1};
  Pad3 tp{1, 0, 0};
  Var x = t.concat_ch(action_feat, view_feat);
  x = t.conv3d_transpose(x, p(prefix + ".up1.w"), p(prefix + ".up1.b"), up, sp,
                         opad);
  x = t.conv3d(x, p(prefix + ".tconv.w"), p(prefix + ".tconv.b"), one, tp);
  x = t.relu(nn::instance_norm(t, x, p(prefix + ".norm.gamma"),
                               p(prefix + ".norm.beta")));
  x = t.conv3d_transpose(x, p(prefix + ".up2.w"), p(prefix + ".up2.b"), up, sp,
                         opad);
  return x;
}

Var Backbone::head_logits(Tape& t, ParamBinder& p, Var pooled) const {
  return t.linear(pooled, p("head.w"), p("head.b"));
}

Var Backbone::aux_logits(Tape& t, ParamBinder& p, Var pooled, int view) const {
  if (view < 0 || view >= cfg_.n_views) {
    throw Error("UnknownView", std::to_string(view));
  }
  std::string prefix = "aux" + std::to_string(view);
  return t.linear(pooled, p(prefix + ".w"), p(prefix + ".b"));
}

}  // namespace pogmv

#include <random>

#include "doctest.h"
#include "pogmv/backbone.hpp"
#include "pogmv/nn.hpp"
#include "pogmv/ofd.hpp"

using namespace pogmv;

namespace {

BackboneConfig tiny_cfg() {
  BackboneConfig c;
  c.frames = 4;
  c.channels = 1;
  c.height = 8;
  c.width = 8;
  c.num_classes = 3;
  c.n_views = 2;
  c.c1 = 2;
  c.c2 = 4;
  return c;
}

Tensor rand_clip(const BackboneConfig& c, std::mt19937_64& rng, int n = 1) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor x({n, c.channels, c.frames, c.height, c.width});
  for (double& v : x.data) v = u(rng);
  return x;
}

}  // namespace

TEST_CASE("extractor shapes, determinism and errors") {
  BackboneConfig cfg = tiny_cfg();
  ParamStore s;
  init_backbone_params(s, cfg, 1);
  Backbone bb(cfg);
  std::mt19937_64 rng(5);
  Tensor clip = rand_clip(cfg, rng, 2);

  Tape t;
  ParamBinder p(t, s);
  Var x = t.leaf(clip);
  Var fc = bb.extract_common(t, p, x);
  CHECK(fc.shape() == std::vector<int>{2, cfg.c2, cfg.feat_t(), cfg.feat_h(),
                                       cfg.feat_w()});
  Var fc2 = bb.extract_common(t, p, x);
  CHECK(fc.val().data == fc2.val().data);

  Var fs0 = bb.extract_special(t, p, x, 0);
  Var fs1 = bb.extract_special(t, p, x, 1);
  CHECK(fs0.val().data != fs1.val().data);
  CHECK_THROWS_WITH_AS(bb.extract_special(t, p, x, cfg.n_views),
                       doctest::Contains("UnknownView"), Error);

  Tensor bad({2, 1, cfg.frames + 1, cfg.height, cfg.width});
  CHECK_THROWS_WITH_AS(bb.extract_common(t, p, t.leaf(bad)),
                       doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("zero clip maps to a zero feature map") {
  BackboneConfig cfg = tiny_cfg();
  ParamStore s;
  init_backbone_params(s, cfg, 1);
  Backbone bb(cfg);
  Tape t;
  ParamBinder p(t, s);
  Var x = t.leaf(Tensor({1, cfg.channels, cfg.frames, cfg.height, cfg.width}));
  CHECK(max_abs(bb.extract_common(t, p, x).val()) == 0.0);
}

TEST_CASE("decode returns clip shape and validates features") {
  BackboneConfig cfg = tiny_cfg();
  ParamStore s;
  init_backbone_params(s, cfg, 1);
  Backbone bb(cfg);
  std::mt19937_64 rng(6);
  Tape t;
  ParamBinder p(t, s);
  Var x = t.leaf(rand_clip(cfg, rng));
  Var fs = bb.extract_special(t, p, x, 0);
  Var r = correlation_map(t, p, bb.extract_common(t, p, x), fs);
  DecoupledPair dp = decouple(t, fs, r);
  Var out = bb.decode(t, p, dp.action, dp.view, 0);
  CHECK(out.shape() ==
        std::vector<int>{1, cfg.channels, cfg.frames, cfg.height, cfg.width});

  Var small = t.leaf(Tensor({1, cfg.c2, cfg.feat_t(), 1, 1}));
  CHECK_THROWS_WITH_AS(bb.decode(t, p, small, small, 0),
                       doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("correlation map is 0.5 under a zeroed final layer, else in (0,1)") {
  BackboneConfig cfg = tiny_cfg();
  ParamStore s;
  init_backbone_params(s, cfg, 1);
  Backbone bb(cfg);
  std::mt19937_64 rng(7);
  Tape t;
  ParamBinder p(t, s);
  Var x = t.leaf(rand_clip(cfg, rng));
  Var fc = bb.extract_common(t, p, x);
  Var fs = bb.extract_special(t, p, x, 0);
  Var r = correlation_map(t, p, fc, fs);
  for (double v : r.val().data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  s.at("decouple.wr2.w").fill(0.0);
  s.at("decouple.wr2.b").fill(0.0);
  Tape t2;
  ParamBinder p2(t2, s);
  Var x2 = t2.leaf(rand_clip(cfg, rng));
  Var r2 = correlation_map(t2, p2, bb.extract_common(t2, p2, x2),
                           bb.extract_special(t2, p2, x2, 0));
  for (double v : r2.val().data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("decouple splits and reproduces the input") {
  Tape t;
  std::mt19937_64 rng(8);
  Tensor fsv = nn::normal_init({1, 2, 2, 2, 2}, 1.0, rng);
  Var fs = t.leaf(fsv);

  SUBCASE("uniform half correlation") {
    Var r = t.leaf(Tensor(fsv.shape, 0.5));
    DecoupledPair dp = decouple(t, fs, r);
    for (std::size_t i = 0; i < fsv.numel(); ++i) {
      CHECK(dp.action.val().data[i] == doctest::Approx(0.5 * fsv.data[i]));
      CHECK(dp.view.val().data[i] == doctest::Approx(0.5 * fsv.data[i]));
    }
  }
  SUBCASE("saturated correlation keeps the action part") {
    Var r = t.leaf(Tensor(fsv.shape, 1.0 - 1e-12));
    DecoupledPair dp = decouple(t, fs, r);
    for (std::size_t i = 0; i < fsv.numel(); ++i) {
      CHECK(dp.action.val().data[i] ==
            doctest::Approx(fsv.data[i]).epsilon(1e-9));
    }
  }
  SUBCASE("identity within 4 ulps") {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor rv(fsv.shape);
    for (double& v : rv.data) v = u(rng);
    DecoupledPair dp = decouple(t, fs, t.leaf(rv));
    double bound = 4.0 * std::numeric_limits<double>::epsilon() * max_abs(fsv);
    for (std::size_t i = 0; i < fsv.numel(); ++i) {
      double sum = dp.action.val().data[i] + dp.view.val().data[i];
      CHECK(std::abs(sum - fsv.data[i]) <= bound);
    }
  }
}

TEST_CASE("missing view compensation") {
  Tape t;
  Tensor f1({2});
  f1.data = {1, 3};
  Tensor f2({2});
  f2.data = {3, 5};
  std::vector<std::optional<Var>> feats(3);
  feats[1] = t.leaf(f1);
  feats[2] = t.leaf(f2);

  Var comp = compensate_missing(t, feats, 0);
  CHECK(comp.val().data == std::vector<double>{2, 4});

  // n=2 with a single present view copies it
  std::vector<std::optional<Var>> two(2);
  two[1] = t.leaf(f1);
  CHECK(compensate_missing(t, two, 0).val().data == f1.data);

  CHECK_THROWS_WITH_AS(compensate_missing(t, feats, 3),
                       doctest::Contains("IndexOutOfRange"), Error);
  std::vector<std::optional<Var>> none(2);
  CHECK_THROWS_WITH_AS(compensate_missing(t, none, 0),
                       doctest::Contains("AllViewsMissing"), Error);

  // linearity: scaling all inputs scales the output
  std::vector<std::optional<Var>> scaled(3);
  scaled[1] = t.scale(*feats[1], 2.0);
  scaled[2] = t.scale(*feats[2], 2.0);
  CHECK(compensate_missing(t, scaled, 0).val().data ==
        std::vector<double>{4, 8});
}

TEST_CASE("correlation map parameter gradients match finite differences") {
  BackboneConfig cfg = tiny_cfg();
  ParamStore s;
  init_backbone_params(s, cfg, 2);
  Backbone bb(cfg);
  std::mt19937_64 rng(9);
  Tape t;
  ParamBinder p(t, s);
  Var fc = t.leaf(nn::normal_init(
      {1, cfg.c2, cfg.feat_t(), cfg.feat_h(), cfg.feat_w()}, 1.0, rng));
  Var fs = t.leaf(nn::normal_init(
      {1, cfg.c2, cfg.feat_t(), cfg.feat_h(), cfg.feat_w()}, 1.0, rng));
  Var r = correlation_map(t, p, fc, fs);
  Var loss = t.sum_all(t.mul(r, r));
  CHECK(nn::grad_check(t, loss, p("decouple.wr1.w")) < 1e-4);
  CHECK(nn::grad_check(t, loss, p("decouple.wr2.w")) < 1e-4);
  CHECK(nn::grad_check(t, loss, p("decouple.proj.w")) < 1e-4);
}

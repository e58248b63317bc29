#include "pogmv/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "pogmv/nn.hpp"
#include "pogmv/ofd.hpp"
#include "pogmv/vdg.hpp"

namespace pogmv {

namespace {

// [T,C,H,W] clips stacked into the [N,C,T,H,W] layout the extractors expect.
Tensor stack_clips(const std::vector<const ClipRecord*>& clips) {
  const Tensor& f0 = clips[0]->frames;
  int T = f0.shape[0], C = f0.shape[1], H = f0.shape[2], W = f0.shape[3];
  int N = static_cast<int>(clips.size());
  Tensor out({N, C, T, H, W});
  std::size_t hw = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    require_same_shape(f0, clips[static_cast<std::size_t>(n)]->frames,
                       "stack_clips");
    const auto& src = clips[static_cast<std::size_t>(n)]->frames.data;
    for (int c = 0; c < C; ++c) {
      for (int t = 0; t < T; ++t) {
        std::size_t so = (static_cast<std::size_t>(t) * C + c) * hw;
        std::size_t dso = ((static_cast<std::size_t>(n) * C + c) * T + t) * hw;
        std::copy(src.begin() + so, src.begin() + so + hw,
                  out.data.begin() + dso);
      }
    }
  }
  return out;
}

std::vector<double> column_means(const Tensor& m) {
  int rows = m.shape[0], cols = m.shape[1];
  std::vector<double> out(static_cast<std::size_t>(cols), 0.0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      out[static_cast<std::size_t>(c)] +=
          m.data[static_cast<std::size_t>(r * cols + c)];
    }
  }
  for (double& v : out) v /= rows;
  return out;
}

int argmax_lowest(const double* z, int k) {
  int best = 0;
  for (int i = 1; i < k; ++i) {
    if (z[i] > z[best]) best = i;
  }
  return best;
}

}  // namespace

nlohmann::json LossWeights::to_json() const {
  return {{"ce", ce}, {"dn", dn}, {"gn", gn}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  LossWeights g;
  g.ce = j.value("ce", g.ce);
  g.dn = j.value("dn", g.dn);
  g.gn = j.value("gn", g.gn);
  if (!(g.ce >= 0 && g.dn >= 0 && g.gn >= 0) ||
      !std::isfinite(g.ce + g.dn + g.gn)) {
    throw Error("InvalidSpec", "loss weights must be finite and >= 0");
  }
  return g;
}

TransferPlan TrainConfig::resolved_plan() const {
  if (transfer_plan == "default") return default_transfer_plan(backbone.n_views);
  return parse_transfer_plan(transfer_plan);
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["backbone"] = backbone.to_json();
  j["lr"] = lr;
  j["lr_decay"] = lr_decay;
  j["lr_floor"] = lr_floor;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["apog"] = apog;
  j["vdg"] = vdg;
  j["transfer_plan"] = transfer_plan;
  j["gamma"] = gamma.to_json();
  j["train_split"] = train_split;
  j["eval_split"] = eval_split;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("backbone")) c.backbone = BackboneConfig::from_json(j["backbone"]);
  c.lr = j.value("lr", c.lr);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.lr_floor = j.value("lr_floor", c.lr_floor);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.apog = j.value("apog", c.apog);
  c.vdg = j.value("vdg", c.vdg);
  c.transfer_plan = j.value("transfer_plan", c.transfer_plan);
  if (j.contains("gamma")) c.gamma = LossWeights::from_json(j["gamma"]);
  c.train_split = j.value("train_split", c.train_split);
  c.eval_split = j.value("eval_split", c.eval_split);
  if (c.batch_size < 1 || c.epochs < 0) throw Error("InvalidSpec", "train config");
  return c;
}

TrainConfig TrainConfig::desk_default() {
  TrainConfig c;
  c.backbone.dropout = 0.2;  // 0.9 starves an 8-channel pooled feature
  c.epochs = 8;
  c.batch_size = 16;
  // The auxiliary terms are raw squared-Frobenius sums, orders of magnitude
  // above the cross-entropy on these feature sizes; the desk weights bring
  // each contribution to the same order instead of letting them drown it.
  c.gamma.dn = 1e-5;
  c.gamma.gn = 5e-3;
  return c;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["overall"] = overall;
  j["total"] = total;
  j["view_counts"] = view_counts;
  nlohmann::json acc = nlohmann::json::array();
  for (std::size_t i = 0; i < view_accuracy.size(); ++i) {
    if (view_counts[i] == 0) {
      acc.push_back(nullptr);  // undefined: no samples landed in this view
    } else {
      acc.push_back(view_accuracy[i]);
    }
  }
  j["view_accuracy"] = acc;
  return j;
}

Var fuse(Tape& t, const std::vector<Var>& pooled,
         const std::vector<double>& c) {
  if (pooled.empty() || pooled.size() != c.size()) {
    throw Error("ShapeMismatch", "fuse: features and weights disagree");
  }
  double total = 0.0;
  for (double w : c) {
    if (!(w > 0) || !std::isfinite(w)) throw Error("InvalidSpec", "fuse weight");
    total += w;
  }
  Var acc = t.scale(pooled[0], c[0] / total);
  for (std::size_t i = 1; i < pooled.size(); ++i) {
    require_same_shape(pooled[0].val(), pooled[i].val(), "fuse");
    acc = t.add(acc, t.scale(pooled[i], c[i] / total));
  }
  return acc;
}

Var classification_loss(Tape& t, Var logits, const std::vector<int>& labels) {
  return t.softmax_xent(logits, labels);
}

Var total_loss(Tape& t, Var ce, Var rec, Var cyc, Var kt, Var fd, Var vg,
               const LossWeights& g) {
  Var dn = t.add(rec, cyc);
  Var gn = t.add(t.add(kt, fd), vg);
  return t.add(t.scale(ce, g.ce), t.add(t.scale(dn, g.dn), t.scale(gn, g.gn)));
}

LossReport StepGraph::report() const {
  LossReport r;
  r.ce = tape->scalar(ce);
  r.kt = tape->scalar(kt);
  r.fd = tape->scalar(fd);
  r.vg = tape->scalar(vg);
  r.rec = tape->scalar(rec);
  r.cyc = tape->scalar(cyc);
  return r;
}

StepGraph build_step(const TrainConfig& cfg, ParamStore& store,
                     const std::vector<const ClipRecord*>& batch,
                     const std::vector<int>& views, const TransferPlan& plan,
                     const std::vector<std::pair<int, int>>& missing_pairs,
                     std::mt19937_64& dropout_rng) {
  if (batch.empty() || batch.size() != views.size()) {
    throw Error("ShapeMismatch", "build_step: batch and view lists disagree");
  }
  int n = cfg.backbone.n_views;
  int K = cfg.backbone.num_classes;
  Backbone bb(cfg.backbone);

  StepGraph g;
  g.tape = std::make_unique<Tape>();
  g.binder = std::make_unique<ParamBinder>(*g.tape, store);
  Tape& t = *g.tape;
  ParamBinder& p = *g.binder;
  g.n_samples = static_cast<int>(batch.size());

  // Group the batch by view, preserving batch order within each group.
  std::vector<std::vector<int>> members(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    int v = views[i];
    if (v < 0 || v >= n) throw Error("UnknownView", std::to_string(v));
    if (batch[i]->label < 0 || batch[i]->label >= K) {
      throw Error("LabelOutOfRange", batch[i]->sample_id);
    }
    members[static_cast<std::size_t>(v)].push_back(static_cast<int>(i));
  }

  std::vector<std::optional<Var>> clip_in(n), f_c(n), f_s(n), act(n), vft(n);
  std::vector<std::vector<int>> labels(static_cast<std::size_t>(n));
  std::vector<std::optional<Var>> pool_a(n), aux_z(n);
  for (int v = 0; v < n; ++v) {
    const auto& idx = members[static_cast<std::size_t>(v)];
    if (idx.empty()) continue;
    std::vector<const ClipRecord*> sub;
    for (int i : idx) {
      sub.push_back(batch[static_cast<std::size_t>(i)]);
      labels[static_cast<std::size_t>(v)].push_back(
          batch[static_cast<std::size_t>(i)]->label);
    }
    Var x = t.leaf(stack_clips(sub));
    clip_in[static_cast<std::size_t>(v)] = x;
    Var fc = bb.extract_common(t, p, x);
    Var fs = bb.extract_special(t, p, x, v);
    Var r = correlation_map(t, p, fc, fs);
    DecoupledPair dp = decouple(t, fs, r);
    f_c[static_cast<std::size_t>(v)] = fc;
    f_s[static_cast<std::size_t>(v)] = fs;
    act[static_cast<std::size_t>(v)] = dp.action;
    vft[static_cast<std::size_t>(v)] = dp.view;
    Var pooled = t.gap(dp.action);
    pool_a[static_cast<std::size_t>(v)] = pooled;
    aux_z[static_cast<std::size_t>(v)] = bb.aux_logits(t, p, pooled, v);
  }

  // Batch-mean auxiliary logits per view; zero evidence for absent views.
  std::vector<std::vector<double>> zbar(
      static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(K), 0.0));
  for (int v = 0; v < n; ++v) {
    if (aux_z[static_cast<std::size_t>(v)]) {
      zbar[static_cast<std::size_t>(v)] =
          column_means(aux_z[static_cast<std::size_t>(v)]->val());
    }
  }
  CredibilityWeights cred = credibility_weights(zbar, n);

  // Rows per (view, class) for prototype building.
  std::vector<std::vector<std::vector<int>>> rows_vk(
      static_cast<std::size_t>(n),
      std::vector<std::vector<int>>(static_cast<std::size_t>(K)));
  for (int v = 0; v < n; ++v) {
    const auto& lv = labels[static_cast<std::size_t>(v)];
    for (std::size_t r = 0; r < lv.size(); ++r) {
      rows_vk[static_cast<std::size_t>(v)][static_cast<std::size_t>(lv[r])]
          .push_back(static_cast<int>(r));
    }
  }

  // Classification: per-sample degenerate fusion (one view per sample), so
  // the batch cross-entropy is the sample-weighted mean of per-view terms.
  double keep = 1.0 - cfg.backbone.dropout;
  std::vector<std::pair<Var, double>> ce_parts;  // (mean NLL, sample weight)
  for (int v = 0; v < n; ++v) {
    if (!pool_a[static_cast<std::size_t>(v)]) continue;
    Var head_in = *pool_a[static_cast<std::size_t>(v)];
    if (cfg.backbone.dropout > 0.0) {
      Tensor mask(head_in.val().shape);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (double& m : mask.data) m = u(dropout_rng) < keep ? 1.0 / keep : 0.0;
      head_in = t.mul_const(head_in, std::move(mask));
    }
    Var logits = bb.head_logits(t, p, head_in);
    Var nll = t.softmax_xent(logits, labels[static_cast<std::size_t>(v)]);
    ce_parts.emplace_back(
        nll, static_cast<double>(labels[static_cast<std::size_t>(v)].size()));
  }

  // Compensation for (view, class) pairs absent from the whole training
  // partition: classify the mean of the other views' class prototypes so
  // every class exerts gradient through every region of feature space.
  for (const auto& [mv, mk] : missing_pairs) {
    if (mv < 0 || mv >= n || mk < 0 || mk >= K) {
      throw Error("IndexOutOfRange", "missing pair");
    }
    std::vector<std::optional<Var>> protos(static_cast<std::size_t>(n));
    bool any = false;
    for (int v = 0; v < n; ++v) {
      if (v == mv || !f_c[static_cast<std::size_t>(v)]) continue;
      const auto& rows =
          rows_vk[static_cast<std::size_t>(v)][static_cast<std::size_t>(mk)];
      if (rows.empty()) continue;
      protos[static_cast<std::size_t>(v)] =
          t.mean_axis0(t.select_rows(*f_c[static_cast<std::size_t>(v)], rows));
      any = true;
    }
    if (!any) continue;
    Var comp = compensate_missing(t, protos, mv);
    std::vector<int> s = comp.val().shape;
    s.insert(s.begin(), 1);
    Var pooled = t.gap(t.reshape(comp, s));
    Var logits = bb.head_logits(t, p, pooled);
    ce_parts.emplace_back(t.softmax_xent(logits, {mk}), 1.0);
  }

  double weight_sum = 0.0;
  for (const auto& [_, w] : ce_parts) weight_sum += w;
  Var ce = t.scale(ce_parts[0].first, ce_parts[0].second / weight_sum);
  for (std::size_t i = 1; i < ce_parts.size(); ++i) {
    ce = t.add(ce, t.scale(ce_parts[i].first, ce_parts[i].second / weight_sum));
  }
  g.ce = ce;

  Var zero = t.leaf(Tensor::scalar(0.0));
  g.kt = zero;
  g.fd = zero;
  g.vg = zero;
  g.rec = zero;
  g.cyc = zero;

  if (cfg.apog) {
    // Knowledge transfer on class-conditional pooled action prototypes.
    // Pooling first aligns what each class looks like in channel space
    // without demanding that views agree on spatial layout.
    std::vector<Var> kt_terms;
    for (int k = 0; k < K; ++k) {
      std::vector<std::optional<Var>> protos(static_cast<std::size_t>(n));
      for (int v = 0; v < n; ++v) {
        const auto& rows =
            rows_vk[static_cast<std::size_t>(v)][static_cast<std::size_t>(k)];
        if (rows.empty() || !pool_a[static_cast<std::size_t>(v)]) continue;
        Var proto = t.mean_axis0(
            t.select_rows(*pool_a[static_cast<std::size_t>(v)], rows));
        // Unit-normalize so the transfer target is the class direction, not
        // its magnitude, and the term's scale is feature-size independent.
        Var inv = t.rsqrt(t.sum_all(t.mul(proto, proto)), 1e-12);
        protos[static_cast<std::size_t>(v)] = t.scale_by_scalar(proto, inv);
      }
      bool usable = false;
      for (const auto& [src, dst] : plan) {
        if (protos[static_cast<std::size_t>(src)] &&
            protos[static_cast<std::size_t>(dst)]) {
          usable = true;
          break;
        }
      }
      if (usable) kt_terms.push_back(transfer_loss(t, protos, cred, plan));
    }
    if (!kt_terms.empty()) g.kt = nn::mean_of(t, kt_terms);

    // Pooled batch means per view, same scale as the transfer term.
    std::vector<std::optional<Var>> refined(static_cast<std::size_t>(n)),
        common(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
      if (!act[static_cast<std::size_t>(v)]) continue;
      refined[static_cast<std::size_t>(v)] =
          t.mean_axis0(*pool_a[static_cast<std::size_t>(v)]);
      common[static_cast<std::size_t>(v)] =
          t.mean_axis0(t.gap(*f_c[static_cast<std::size_t>(v)]));
    }
    g.fd = feature_align_loss(t, refined, common);
  }

  if (cfg.vdg) {
    g.graph_e = logit_distance_matrix(zbar);
    if (!store.has("vdg.w_raw")) {
      // Seed the graph from pooled view-feature distances; nearby views get
      // the larger initial weight, scaled into softmax's responsive range.
      std::vector<Tensor> pooled(static_cast<std::size_t>(n),
                                 Tensor({cfg.backbone.c2}));
      for (int v = 0; v < n; ++v) {
        if (!vft[static_cast<std::size_t>(v)]) continue;
        Tensor pv = t.value(t.gap(*vft[static_cast<std::size_t>(v)]));
        std::vector<double> m = column_means(pv);
        std::copy(m.begin(), m.end(),
                  pooled[static_cast<std::size_t>(v)].data.begin());
      }
      Tensor d = feature_distance_weights(pooled);
      double dmax = max_abs(d);
      if (dmax > 0) {
        for (double& x : d.data) x = -x / dmax;
      }
      store.add("vdg.w_raw", d);
    }
    Var w = normalize_graph(t, p("vdg.w_raw"));
    g.vg = discretize_loss(t, w, g.graph_e);
    g.graph_w = w.val();

    // Per-view batch prototypes of the view features, for message passing.
    std::vector<std::optional<Var>> proto_v(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
      if (vft[static_cast<std::size_t>(v)]) {
        Var m = t.mean_axis0(*vft[static_cast<std::size_t>(v)]);
        std::vector<int> s = m.val().shape;
        s.insert(s.begin(), 1);
        proto_v[static_cast<std::size_t>(v)] = t.reshape(m, s);
      }
    }

    std::vector<std::optional<Var>> xhat(static_cast<std::size_t>(n)),
        re_enc(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      if (!vft[static_cast<std::size_t>(i)]) continue;
      int ni = static_cast<int>(members[static_cast<std::size_t>(i)].size());
      Var acc = t.scale_by_scalar(*vft[static_cast<std::size_t>(i)],
                                  t.elem(w, i, i));
      Var wsum = t.elem(w, i, i);
      for (int j = 0; j < n; ++j) {
        if (j == i || !proto_v[static_cast<std::size_t>(j)]) continue;
        Var tiled = t.select_rows(*proto_v[static_cast<std::size_t>(j)],
                                  std::vector<int>(static_cast<std::size_t>(ni), 0));
        acc = t.add(acc, t.scale_by_scalar(tiled, t.elem(w, i, j)));
        wsum = t.add(wsum, t.elem(w, i, j));
      }
      // Renormalize over the views actually present this batch.
      Var r = t.rsqrt(wsum, 0.0);
      Var vhat = t.scale_by_scalar(acc, t.mul(r, r));
      Var dec = bb.decode(t, p, *act[static_cast<std::size_t>(i)], vhat, i);
      xhat[static_cast<std::size_t>(i)] = dec;
      re_enc[static_cast<std::size_t>(i)] = bb.extract_special(t, p, dec, i);
    }
    g.rec = reconstruction_loss(t, clip_in, xhat);
    g.cyc = cycle_loss(t, f_s, re_enc);
  }

  g.total = total_loss(t, g.ce, g.rec, g.cyc, g.kt, g.fd, g.vg, cfg.gamma);
  return g;
}

namespace {

void check_finite_report(const StepGraph& g) {
  const std::pair<const char*, Var> terms[] = {
      {"ce", g.ce}, {"kt", g.kt}, {"fd", g.fd},
      {"vg", g.vg}, {"rec", g.rec}, {"cyc", g.cyc}, {"total", g.total}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(g.tape->scalar(v))) {
      throw Error("DivergenceDetected", name);
    }
  }
}

std::string csv_row(int epoch, int step, const LossReport& r,
                    const LossWeights& gamma, double lr) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%d,%d,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n", epoch, step,
                r.ce, r.kt, r.fd, r.vg, r.rec, r.cyc, r.total(gamma), lr);
  return buf;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest,
                  const DatasetCache& cache, const ViewAssignment& assignment,
                  ParamStore& store, const std::string& out_dir) {
  int n = cfg.backbone.n_views;
  if (assignment.n != n) {
    throw Error("InvalidViewCount",
                "assignment has " + std::to_string(assignment.n) +
                    " views, config wants " + std::to_string(n));
  }
  if (manifest.clip_shape[0] != cfg.backbone.frames ||
      manifest.clip_shape[1] != cfg.backbone.channels ||
      manifest.clip_shape[2] != cfg.backbone.height ||
      manifest.clip_shape[3] != cfg.backbone.width ||
      manifest.num_classes != cfg.backbone.num_classes) {
    throw Error("ShapeMismatch", "manifest does not match the model config");
  }
  std::filesystem::create_directories(out_dir);

  if (store.entries().empty()) {
    init_backbone_params(store, cfg.backbone, cfg.seed);
  }
  TransferPlan plan = cfg.apog ? cfg.resolved_plan() : TransferPlan{};
  PartitionReport pstats =
      partition_stats(assignment, manifest.labels, manifest.num_classes);

  BatchIterator batches(manifest, cfg.train_split, cfg.batch_size, cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed * 0x9e3779b97f4a7c15ull + 0xd7ull);

  auto detections = load_detections(
      (std::filesystem::path(manifest.root_dir) / manifest.detections_path)
          .string());
  auto ratios = ratio_map(detections);

  TrainResult result;
  result.metrics_csv = (std::filesystem::path(out_dir) / "metrics.csv").string();
  result.summary_json = (std::filesystem::path(out_dir) / "summary.json").string();
  result.checkpoint_path = (std::filesystem::path(out_dir) / "model.pogc").string();

  std::ofstream csv(result.metrics_csv, std::ios::binary);
  if (!csv) throw Error("IoFailure", result.metrics_csv);
  csv << "epoch,step,ce,kt,fd,vg,rec,cyc,total,lr\n";

  if (cfg.vdg) {
    result.graph_state_path =
        (std::filesystem::path(out_dir) / "graph_state.txt").string();
    std::ofstream truncate(result.graph_state_path, std::ios::trunc);
  }

  nlohmann::ordered_json epoch_log = nlohmann::ordered_json::array();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = std::max(cfg.lr_floor, cfg.lr - epoch * cfg.lr_decay);
    Tensor last_e, last_w;
    int step = 0;
    for (const auto& ids : batches.epoch_batches(epoch)) {
      std::vector<const ClipRecord*> batch;
      std::vector<int> views;
      for (const auto& id : ids) {
        batch.push_back(&cache.clip(id));
        int v = assignment.view_of(id);
        if (v < 0) throw Error("UnknownView", id);
        views.push_back(v);
      }
      StepGraph g = build_step(cfg, store, batch, views, plan,
                               pstats.missing_actions, dropout_rng);
      check_finite_report(g);
      g.tape->backward(g.total);
      g.binder->adam_step(lr);
      LossReport r = g.report();
      csv << csv_row(epoch, step, r, cfg.gamma, lr);
      result.steps.push_back(r);
      result.step_lr.push_back(lr);
      if (cfg.vdg) {
        last_e = g.graph_e;
        last_w = g.graph_w;
      }
      ++step;
    }
    if (cfg.vdg && !last_e.shape.empty()) {
      append_graph_state(result.graph_state_path, epoch, last_e, last_w);
    }
    EvalReport er = evaluate(store, cfg, assignment, manifest, cache,
                             cfg.eval_split, ratios);
    nlohmann::ordered_json ej;
    ej["epoch"] = epoch;
    ej["lr"] = lr;
    ej["eval"] = er.to_json();
    epoch_log.push_back(ej);
    if (epoch + 1 == cfg.epochs) result.final_eval = er;
  }
  csv.close();
  if (!csv) throw Error("IoFailure", result.metrics_csv);

  if (cfg.epochs == 0) {
    result.final_eval = evaluate(store, cfg, assignment, manifest, cache,
                                 cfg.eval_split, ratios);
  }

  save_train_checkpoint(result.checkpoint_path, store, cfg,
                        assignment.thresholds);

  nlohmann::ordered_json summary;
  summary["config"] = cfg.to_json();
  summary["epochs"] = epoch_log;
  summary["final_eval"] = result.final_eval.to_json();
  std::ofstream sj(result.summary_json, std::ios::binary);
  if (!sj) throw Error("IoFailure", result.summary_json);
  sj << summary.dump(2) << "\n";

  return result;
}

namespace {

// Forward-only single-view classification of a stacked sub-batch.
std::vector<int> predict_view_batch(ParamStore& store, const TrainConfig& cfg,
                                    const std::vector<const ClipRecord*>& sub,
                                    int view) {
  Backbone bb(cfg.backbone);
  Tape t;
  ParamBinder p(t, store);
  Var x = t.leaf(stack_clips(sub));
  Var fc = bb.extract_common(t, p, x);
  Var fs = bb.extract_special(t, p, x, view);
  Var r = correlation_map(t, p, fc, fs);
  DecoupledPair dp = decouple(t, fs, r);
  Var logits = bb.head_logits(t, p, t.gap(dp.action));
  const Tensor& z = logits.val();
  int k = z.shape[1];
  std::vector<int> out;
  for (int i = 0; i < z.shape[0]; ++i) {
    out.push_back(argmax_lowest(&z.data[static_cast<std::size_t>(i * k)], k));
  }
  return out;
}

}  // namespace

InferResult infer(const ParamStore& store, const TrainConfig& cfg,
                  const std::vector<double>& thresholds, const Tensor& clip,
                  double ratio) {
  if (!(ratio > 0) || !std::isfinite(ratio)) {
    throw Error("NonPositiveBoxHeight", "ratio " + std::to_string(ratio));
  }
  ViewAssignment a;
  a.n = cfg.backbone.n_views;
  a.thresholds = thresholds;
  InferResult out;
  out.view = a.classify(ratio);

  ParamStore local = store;
  Backbone bb(cfg.backbone);
  Tape t;
  ParamBinder p(t, local);
  ClipRecord rec;
  rec.frames = clip;
  std::vector<const ClipRecord*> sub{&rec};
  Var x = t.leaf(stack_clips(sub));
  Var fc = bb.extract_common(t, p, x);
  Var fs = bb.extract_special(t, p, x, out.view);
  Var r = correlation_map(t, p, fc, fs);
  DecoupledPair dp = decouple(t, fs, r);
  // Single-view fusion degenerates to that view's pooled action feature.
  Var fused = fuse(t, {t.gap(dp.action)}, {1.0});
  Var logits = bb.head_logits(t, p, fused);
  out.logits = logits.val().data;
  out.label = argmax_lowest(out.logits.data(),
                            static_cast<int>(out.logits.size()));
  return out;
}

EvalReport evaluate(const ParamStore& store, const TrainConfig& cfg,
                    const ViewAssignment& assignment,
                    const DatasetManifest& manifest, const DatasetCache& cache,
                    const std::string& split,
                    const std::map<std::string, double>& ratios) {
  const auto& ids = manifest.split(split);
  int n = cfg.backbone.n_views;
  EvalReport rep;
  rep.view_counts.assign(static_cast<std::size_t>(n), 0);
  std::vector<int> correct(static_cast<std::size_t>(n), 0);

  std::vector<std::vector<const ClipRecord*>> by_view(
      static_cast<std::size_t>(n));
  for (const auto& id : ids) {
    int v = assignment.view_of(id);
    if (v < 0) {
      auto it = ratios.find(id);
      if (it == ratios.end()) throw Error("MissingDetection", id);
      v = assignment.classify(it->second);
    }
    by_view[static_cast<std::size_t>(v)].push_back(&cache.clip(id));
  }

  ParamStore local = store;
  constexpr int kEvalBatch = 32;
  for (int v = 0; v < n; ++v) {
    const auto& group = by_view[static_cast<std::size_t>(v)];
    for (std::size_t at = 0; at < group.size(); at += kEvalBatch) {
      std::vector<const ClipRecord*> sub(
          group.begin() + static_cast<long>(at),
          group.begin() + static_cast<long>(
                              std::min(at + kEvalBatch, group.size())));
      std::vector<int> pred = predict_view_batch(local, cfg, sub, v);
      for (std::size_t i = 0; i < sub.size(); ++i) {
        ++rep.view_counts[static_cast<std::size_t>(v)];
        if (pred[i] == sub[i]->label) ++correct[static_cast<std::size_t>(v)];
      }
    }
  }

  int total_correct = 0;
  rep.view_accuracy.assign(static_cast<std::size_t>(n), -1.0);
  for (int v = 0; v < n; ++v) {
    rep.total += rep.view_counts[static_cast<std::size_t>(v)];
    total_correct += correct[static_cast<std::size_t>(v)];
    if (rep.view_counts[static_cast<std::size_t>(v)] > 0) {
      rep.view_accuracy[static_cast<std::size_t>(v)] =
          100.0 * correct[static_cast<std::size_t>(v)] /
          rep.view_counts[static_cast<std::size_t>(v)];
    }
  }
  rep.overall = rep.total > 0 ? 100.0 * total_correct / rep.total : 0.0;
  return rep;
}

std::map<std::string, double> ratio_map(
    const std::vector<DetectionRecord>& detections) {
  std::map<std::string, double> out;
  for (const auto& d : detections) {
    out[d.sample_id] = head_to_body_ratio(d);
  }
  return out;
}

void save_train_checkpoint(const std::string& path, const ParamStore& store,
                           const TrainConfig& cfg,
                           const std::vector<double>& thresholds) {
  nlohmann::ordered_json j;
  j["train"] = cfg.to_json();
  j["thresholds"] = thresholds;
  save_checkpoint(path, store, j.dump());
}

TrainConfig load_train_checkpoint(const std::string& path, ParamStore& store,
                                  std::vector<double>& thresholds) {
  std::string config_json = load_checkpoint(path, store);
  nlohmann::json j = nlohmann::json::parse(config_json, nullptr, false);
  if (j.is_discarded() || !j.contains("train")) {
    throw Error("CheckpointVersionMismatch", "unreadable config block");
  }
  thresholds = j.value("thresholds", std::vector<double>{});
  return TrainConfig::from_json(j["train"]);
}

}  // namespace pogmv

#include "pogmv/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pogmv/nn.hpp"
#include "pogmv/ofd.hpp"

namespace pogmv {

namespace fs = std::filesystem;

nlohmann::ordered_json DiagnosticReport::to_json() const {
  nlohmann::ordered_json j;
  j["s_same"] = s_same;
  j["s_diff"] = s_diff;
  j["ratio"] = ratio;
  j["same_pairs"] = same_pairs;
  j["diff_pairs"] = diff_pairs;
  return j;
}

ViewAssignment fit_assignment(const DatasetManifest& manifest,
                              const std::string& split, int n) {
  auto detections = load_detections(
      (fs::path(manifest.root_dir) / manifest.detections_path).string());
  auto ratios = ratio_map(detections);
  std::vector<std::pair<std::string, double>> pairs;
  for (const auto& id : manifest.split(split)) {
    auto it = ratios.find(id);
    if (it == ratios.end()) throw Error("MissingDetection", id);
    pairs.emplace_back(id, it->second);
  }
  return assign_views(std::move(pairs), n);
}

double median(std::vector<double> xs) {
  if (xs.empty()) throw Error("InvalidSpec", "median of nothing");
  std::sort(xs.begin(), xs.end());
  std::size_t m = xs.size() / 2;
  if (xs.size() % 2 == 1) return xs[m];
  return 0.5 * (xs[m - 1] + xs[m]);
}

namespace {

RunRecord run_one(const std::string& name, const TrainConfig& cfg,
                  const DatasetManifest& manifest, const DatasetCache& cache,
                  const ViewAssignment& assignment, const std::string& out_dir) {
  RunRecord rec;
  rec.run_name = name;
  rec.seed = cfg.seed;
  rec.cfg = cfg;
  ParamStore store;
  std::string run_dir =
      (fs::path(out_dir) / (name + "_seed" + std::to_string(cfg.seed))).string();
  TrainResult tr = train(cfg, manifest, cache, assignment, store, run_dir);
  rec.eval = tr.final_eval;
  return rec;
}

// Median per-view accuracies across a group of runs; empty buckets stay -1.
nlohmann::ordered_json median_block(const std::vector<const RunRecord*>& runs) {
  nlohmann::ordered_json j;
  std::vector<double> overall;
  for (const auto* r : runs) overall.push_back(r->eval.overall);
  j["median_overall"] = median(overall);
  std::size_t n_views = runs[0]->eval.view_accuracy.size();
  nlohmann::ordered_json views = nlohmann::ordered_json::array();
  for (std::size_t v = 0; v < n_views; ++v) {
    std::vector<double> accs;
    for (const auto* r : runs) {
      if (r->eval.view_counts[v] > 0) accs.push_back(r->eval.view_accuracy[v]);
    }
    if (accs.empty()) {
      views.push_back(nullptr);
    } else {
      views.push_back(median(accs));
    }
  }
  j["median_per_view"] = views;
  return j;
}

std::vector<const RunRecord*> runs_named(const StudyReport& rep,
                                         const std::string& name) {
  std::vector<const RunRecord*> out;
  for (const auto& r : rep.runs) {
    if (r.run_name == name) out.push_back(&r);
  }
  return out;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '>') {
      out += "to";
    } else if (c == ',') {
      out += '_';
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace

StudyReport run_partition_sweep(const std::vector<int>& n_values,
                                const TrainConfig& base,
                                const std::vector<uint64_t>& seeds,
                                const DatasetManifest& manifest,
                                const DatasetCache& cache,
                                const std::string& out_dir) {
  StudyReport rep;
  rep.study = "sweep-views";
  for (int n : n_values) {
    ViewAssignment assignment = fit_assignment(manifest, base.train_split, n);
    for (uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.backbone.n_views = n;
      cfg.seed = seed;
      rep.runs.push_back(run_one("n" + std::to_string(n), cfg, manifest, cache,
                                 assignment, out_dir));
    }
  }
  rep.summary["protocol"] =
      "equal-frequency partition refit per n on the train split; per-view "
      "Top-1 on the eval split; medians over seeds";
  nlohmann::ordered_json per_n;
  for (int n : n_values) {
    per_n["n" + std::to_string(n)] =
        median_block(runs_named(rep, "n" + std::to_string(n)));
  }
  rep.summary["by_n"] = per_n;
  return rep;
}

StudyReport run_guide_strategy_study(const std::vector<std::string>& plans,
                                     const TrainConfig& base,
                                     const std::vector<uint64_t>& seeds,
                                     const DatasetManifest& manifest,
                                     const DatasetCache& cache,
                                     const std::string& out_dir) {
  std::vector<std::string> all_plans = plans;
  if (std::find(all_plans.begin(), all_plans.end(), "none") == all_plans.end()) {
    all_plans.insert(all_plans.begin(), "none");
  }
  StudyReport rep;
  rep.study = "study-guides";
  ViewAssignment assignment =
      fit_assignment(manifest, base.train_split, base.backbone.n_views);
  for (const auto& plan : all_plans) {
    for (uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.apog = true;  // the study varies only the transfer direction
      cfg.transfer_plan = plan;
      cfg.seed = seed;
      rep.runs.push_back(run_one("plan_" + sanitize(plan), cfg, manifest, cache,
                                 assignment, out_dir));
    }
  }
  nlohmann::ordered_json baseline =
      median_block(runs_named(rep, "plan_none"));
  nlohmann::ordered_json per_plan;
  for (const auto& plan : all_plans) {
    std::string name = "plan_" + sanitize(plan);
    nlohmann::ordered_json block = median_block(runs_named(rep, name));
    block["delta_overall"] = double(block["median_overall"]) -
                             double(baseline["median_overall"]);
    nlohmann::ordered_json deltas = nlohmann::ordered_json::array();
    for (std::size_t v = 0; v < block["median_per_view"].size(); ++v) {
      const auto& a = block["median_per_view"][v];
      const auto& b = baseline["median_per_view"][v];
      if (a.is_null() || b.is_null()) {
        deltas.push_back(nullptr);
      } else {
        deltas.push_back(double(a) - double(b));
      }
    }
    block["delta_per_view"] = deltas;
    per_plan[name] = block;
  }
  rep.summary["baseline"] = "plan_none";
  rep.summary["by_plan"] = per_plan;
  return rep;
}

StudyReport run_module_ablation(const AblationSpec& spec,
                                const TrainConfig& base,
                                const DatasetManifest& manifest,
                                const DatasetCache& cache,
                                const std::string& out_dir) {
  for (std::size_t i = 0; i < spec.variants.size(); ++i) {
    for (std::size_t j = i + 1; j < spec.variants.size(); ++j) {
      if (spec.variants[i].name == spec.variants[j].name) {
        throw Error("InvalidSpec", "duplicate run name " + spec.variants[i].name);
      }
    }
  }
  StudyReport rep;
  rep.study = "ablate";
  ViewAssignment assignment =
      fit_assignment(manifest, base.train_split, base.backbone.n_views);
  for (const auto& variant : spec.variants) {
    for (uint64_t seed : spec.seeds) {
      TrainConfig cfg = base;
      cfg.apog = variant.apog;
      cfg.vdg = variant.vdg;
      cfg.transfer_plan = variant.transfer_plan;
      cfg.seed = seed;
      rep.runs.push_back(
          run_one(variant.name, cfg, manifest, cache, assignment, out_dir));
    }
  }
  nlohmann::ordered_json per_variant;
  for (const auto& variant : spec.variants) {
    nlohmann::ordered_json block = median_block(runs_named(rep, variant.name));
    block["apog"] = variant.apog;
    block["vdg"] = variant.vdg;
    block["transfer_plan"] = variant.transfer_plan;
    per_variant[variant.name] = block;
  }
  rep.summary["by_variant"] = per_variant;
  return rep;
}

DiagnosticReport similarity_diagnostic(const ParamStore& store,
                                       const TrainConfig& cfg,
                                       const ViewAssignment& assignment,
                                       const DatasetManifest& manifest,
                                       const DatasetCache& cache,
                                       const std::string& split) {
  auto detections = load_detections(
      (fs::path(manifest.root_dir) / manifest.detections_path).string());
  auto ratios = ratio_map(detections);

  struct Item {
    int view;
    int label;
    std::vector<double> feat;
  };
  std::vector<Item> items;
  ParamStore local = store;
  Backbone bb(cfg.backbone);
  for (const auto& id : manifest.split(split)) {
    const ClipRecord& rec = cache.clip(id);
    int v = assignment.view_of(id);
    if (v < 0) {
      auto it = ratios.find(id);
      if (it == ratios.end()) throw Error("MissingDetection", id);
      v = assignment.classify(it->second);
    }
    Tape t;
    ParamBinder p(t, local);
    Tensor x({1, rec.frames.shape[1], rec.frames.shape[0], rec.frames.shape[2],
              rec.frames.shape[3]});
    // [T,C,H,W] -> [1,C,T,H,W]
    int T = rec.frames.shape[0], C = rec.frames.shape[1];
    std::size_t hw = rec.frames.numel() / (static_cast<std::size_t>(T) * C);
    for (int tt = 0; tt < T; ++tt) {
      for (int c = 0; c < C; ++c) {
        std::copy(rec.frames.data.begin() + (tt * C + c) * hw,
                  rec.frames.data.begin() + (tt * C + c + 1) * hw,
                  x.data.begin() + (c * T + tt) * hw);
      }
    }
    Var clip = t.leaf(std::move(x));
    Var fc = bb.extract_common(t, p, clip);
    Var fs = bb.extract_special(t, p, clip, v);
    Var r = correlation_map(t, p, fc, fs);
    DecoupledPair dp = decouple(t, fs, r);
    items.push_back({v, rec.label, t.value(t.gap(dp.action)).data});
  }

  DiagnosticReport rep;
  double sum_same = 0.0, sum_diff = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      bool same_action = items[i].label == items[j].label;
      bool same_view = items[i].view == items[j].view;
      if (same_action && !same_view) {
        sum_same += nn::cosine_similarity(items[i].feat, items[j].feat);
        ++rep.same_pairs;
      } else if (!same_action && same_view) {
        sum_diff += nn::cosine_similarity(items[i].feat, items[j].feat);
        ++rep.diff_pairs;
      }
    }
  }
  if (rep.same_pairs > 0) rep.s_same = sum_same / rep.same_pairs;
  if (rep.diff_pairs > 0) rep.s_diff = sum_diff / rep.diff_pairs;
  double ratio = rep.s_same / rep.s_diff;
  if (!std::isfinite(ratio) || std::abs(ratio) > 1e6) {
    ratio = ratio < 0 ? -1e6 : 1e6;
  }
  rep.ratio = ratio;
  return rep;
}

namespace {

void write_bar_chart(const std::string& path, const EvalReport& eval) {
  constexpr int kW = 240, kH = 160, kMargin = 12;
  std::vector<unsigned char> px(static_cast<std::size_t>(kW) * kH * 3, 255);
  auto put = [&](int x, int y, unsigned char r, unsigned char g,
                 unsigned char b) {
    if (x < 0 || x >= kW || y < 0 || y >= kH) return;
    std::size_t o = (static_cast<std::size_t>(y) * kW + x) * 3;
    px[o] = r;
    px[o + 1] = g;
    px[o + 2] = b;
  };
  int n = static_cast<int>(eval.view_accuracy.size());
  int span = (kW - 2 * kMargin) / std::max(1, n);
  for (int v = 0; v < n; ++v) {
    double acc = eval.view_counts[static_cast<std::size_t>(v)] > 0
                     ? eval.view_accuracy[static_cast<std::size_t>(v)]
                     : 0.0;
    int h = static_cast<int>(std::lround(acc / 100.0 * (kH - 2 * kMargin)));
    int x0 = kMargin + v * span + 2;
    int x1 = kMargin + (v + 1) * span - 2;
    unsigned char shade = static_cast<unsigned char>(60 + (150 * v) / std::max(1, n));
    for (int x = x0; x <= x1; ++x) {
      for (int y = kH - kMargin - h; y < kH - kMargin; ++y) {
        put(x, y, shade, 90, 200);
      }
    }
  }
  // Baseline axis.
  for (int x = kMargin; x < kW - kMargin; ++x) put(x, kH - kMargin, 0, 0, 0);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoFailure", path);
  out << "P6\n" << kW << " " << kH << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()),
            static_cast<std::streamsize>(px.size()));
  if (!out) throw Error("IoFailure", path);
}

}  // namespace

void emit_report(const std::vector<StudyReport>& reports,
                 const std::string& out_dir) {
  fs::create_directories(out_dir);
  nlohmann::ordered_json summary;
  summary["schema"] = "pogmv-study-report-v1";
  summary["studies"] = nlohmann::ordered_json::array();

  for (const auto& rep : reports) {
    std::size_t max_views = 0;
    for (const auto& r : rep.runs) {
      max_views = std::max(max_views, r.eval.view_accuracy.size());
    }
    // Column order is fixed: identity, toggles, then accuracies.
    std::string csv_path = (fs::path(out_dir) / (rep.study + ".csv")).string();
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw Error("IoFailure", csv_path);
    csv << "run,seed,n_views,apog,vdg,transfer_plan,overall";
    for (std::size_t v = 0; v < max_views; ++v) csv << ",view" << v;
    csv << "\n";
    for (const auto& r : rep.runs) {
      char num[32];
      csv << r.run_name << "," << r.seed << "," << r.cfg.backbone.n_views << ","
          << (r.cfg.apog ? 1 : 0) << "," << (r.cfg.vdg ? 1 : 0) << ","
          << r.cfg.transfer_plan << ",";
      std::snprintf(num, sizeof(num), "%.6f", r.eval.overall);
      csv << num;
      for (std::size_t v = 0; v < max_views; ++v) {
        csv << ",";
        if (v < r.eval.view_accuracy.size() && r.eval.view_counts[v] > 0) {
          std::snprintf(num, sizeof(num), "%.6f", r.eval.view_accuracy[v]);
          csv << num;
        }
      }
      csv << "\n";
      write_bar_chart((fs::path(out_dir) /
                       (rep.study + "_" + r.run_name + "_seed" +
                        std::to_string(r.seed) + ".ppm"))
                          .string(),
                      r.eval);
    }
    if (!csv) throw Error("IoFailure", csv_path);

    nlohmann::ordered_json sj;
    sj["study"] = rep.study;
    sj["csv"] = rep.study + ".csv";
    sj["summary"] = rep.summary;
    summary["studies"].push_back(sj);
  }

  std::string sp = (fs::path(out_dir) / "summary.json").string();
  std::ofstream sf(sp, std::ios::binary);
  if (!sf) throw Error("IoFailure", sp);
  sf << summary.dump(2) << "\n";
}

}  // namespace pogmv

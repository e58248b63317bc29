#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pogmv/apog.hpp"
#include "pogmv/backbone.hpp"
#include "pogmv/data_ingest.hpp"
#include "pogmv/params.hpp"
#include "pogmv/view_partition.hpp"

#include "json.hpp"

namespace pogmv {

struct LossWeights {
  double ce = 1.0;
  double dn = 1.0;
  double gn = 0.1;

  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

// Per-step loss values; the composites are derived, never stored.
struct LossReport {
  double ce = 0, kt = 0, fd = 0, vg = 0, rec = 0, cyc = 0;

  double dn() const { return rec + cyc; }
  double ag() const { return kt + fd; }
  double gn() const { return kt + fd + vg; }
  double total(const LossWeights& g) const {
    return g.ce * ce + g.dn * dn() + g.gn * gn();
  }
};

struct TrainConfig {
  BackboneConfig backbone;
  double lr = 1e-3;
  double lr_decay = 1e-5;  // additive per epoch
  double lr_floor = 1e-5;
  int epochs = 8;
  int batch_size = 16;
  uint64_t seed = 1;
  bool apog = true;
  bool vdg = true;
  std::string transfer_plan = "default";  // or "none" or "0>1,1>2"
  LossWeights gamma;
  std::string train_split = "train";
  std::string eval_split = "test";

  TransferPlan resolved_plan() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  // Reference schedule sized for a CPU desk run.
  static TrainConfig desk_default();
};

struct EvalReport {
  double overall = 0.0;
  int total = 0;
  std::vector<int> view_counts;
  std::vector<double> view_accuracy;  // -1 marks an empty view bucket

  nlohmann::json to_json() const;
};

// Credibility-weighted sum of pooled per-view features; the weights are
// renormalized over the views actually supplied.
Var fuse(Tape& t, const std::vector<Var>& pooled, const std::vector<double>& c);

Var classification_loss(Tape& t, Var logits, const std::vector<int>& labels);

Var total_loss(Tape& t, Var ce, Var rec, Var cyc, Var kt, Var fd, Var vg,
               const LossWeights& g);

// One training step's full graph. Kept alive so tests can probe gradients.
struct StepGraph {
  std::unique_ptr<Tape> tape;
  std::unique_ptr<ParamBinder> binder;
  Var ce, kt, fd, vg, rec, cyc, total;
  int n_samples = 0;
  Tensor graph_e, graph_w;  // snapshots for the per-epoch dump (VDG only)

  LossReport report() const;
};

// Builds the forward graph for one batch: per-view extraction, decoupling,
// compensation of dataset-flagged missing (view, class) pairs, credibility,
// and every enabled loss term. Disabled terms are constant zero leaves.
StepGraph build_step(const TrainConfig& cfg, ParamStore& store,
                     const std::vector<const ClipRecord*>& batch,
                     const std::vector<int>& views, const TransferPlan& plan,
                     const std::vector<std::pair<int, int>>& missing_pairs,
                     std::mt19937_64& dropout_rng);

struct TrainResult {
  std::vector<LossReport> steps;     // one per optimizer update
  std::vector<double> step_lr;       // learning rate used at each step
  EvalReport final_eval;
  std::string metrics_csv;           // paths under out_dir
  std::string summary_json;
  std::string checkpoint_path;
  std::string graph_state_path;      // empty when VDG is off
};

// Full optimizer loop; writes metrics.csv, summary.json, model.pogc (and
// graph_state.txt when VDG is on) under out_dir. Deterministic in (cfg, data).
TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest,
                  const DatasetCache& cache, const ViewAssignment& assignment,
                  ParamStore& store, const std::string& out_dir);

struct InferResult {
  int view = -1;
  int label = -1;
  std::vector<double> logits;
};

// Threshold-classifies the head-to-body ratio, runs that view's pipeline,
// and argmaxes the head logits (ties to the lowest class index).
InferResult infer(const ParamStore& store, const TrainConfig& cfg,
                  const std::vector<double>& thresholds, const Tensor& clip,
                  double ratio);

// Top-1 accuracy, overall and per view. Views come from the assignment when
// the sample was fitted, otherwise from threshold classification of its ratio
// (MissingDetection when neither is available).
EvalReport evaluate(const ParamStore& store, const TrainConfig& cfg,
                    const ViewAssignment& assignment,
                    const DatasetManifest& manifest, const DatasetCache& cache,
                    const std::string& split,
                    const std::map<std::string, double>& ratios);

std::map<std::string, double> ratio_map(
    const std::vector<DetectionRecord>& detections);

// Checkpoint = parameter arrays + JSON holding the TrainConfig and the fitted
// view thresholds.
void save_train_checkpoint(const std::string& path, const ParamStore& store,
                           const TrainConfig& cfg,
                           const std::vector<double>& thresholds);
TrainConfig load_train_checkpoint(const std::string& path, ParamStore& store,
                                  std::vector<double>& thresholds);

}  // namespace pogmv

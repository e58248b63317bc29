#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pogmv/training.hpp"

namespace pogmv {

struct RunRecord {
  std::string run_name;
  uint64_t seed = 0;
  TrainConfig cfg;  // exact configuration used, echoed into reports
  EvalReport eval;
};

struct StudyReport {
  std::string study;
  std::vector<RunRecord> runs;
  nlohmann::ordered_json summary;  // per-run-name medians and deltas
};

// Named TrainConfig deltas evaluated over a shared seed list, median-aggregated.
struct AblationSpec {
  struct Variant {
    std::string name;
    bool apog = false;
    bool vdg = false;
    std::string transfer_plan = "default";
  };
  std::vector<Variant> variants;
  std::vector<uint64_t> seeds;
};

struct DiagnosticReport {
  double s_same = 0.0;  // cosine, same action across views
  double s_diff = 0.0;  // cosine, different actions within a view
  double ratio = 0.0;   // s_same / s_diff, display-capped at 1e6
  int same_pairs = 0;
  int diff_pairs = 0;

  nlohmann::ordered_json to_json() const;
};

// Equal-frequency view fit on one split's head-to-body ratios.
ViewAssignment fit_assignment(const DatasetManifest& manifest,
                              const std::string& split, int n);

double median(std::vector<double> xs);

// One model per (n, seed); per-view and overall accuracy per run.
StudyReport run_partition_sweep(const std::vector<int>& n_values,
                                const TrainConfig& base,
                                const std::vector<uint64_t>& seeds,
                                const DatasetManifest& manifest,
                                const DatasetCache& cache,
                                const std::string& out_dir);

// One model per (plan, seed); plans are transfer-plan strings ("none",
// "0>1", ...). The no-transfer baseline is always included for deltas.
StudyReport run_guide_strategy_study(const std::vector<std::string>& plans,
                                     const TrainConfig& base,
                                     const std::vector<uint64_t>& seeds,
                                     const DatasetManifest& manifest,
                                     const DatasetCache& cache,
                                     const std::string& out_dir);

StudyReport run_module_ablation(const AblationSpec& spec,
                                const TrainConfig& base,
                                const DatasetManifest& manifest,
                                const DatasetCache& cache,
                                const std::string& out_dir);

// Cosine separation of pooled action features: same action across views vs
// different actions within a view.
DiagnosticReport similarity_diagnostic(const ParamStore& store,
                                       const TrainConfig& cfg,
                                       const ViewAssignment& assignment,
                                       const DatasetManifest& manifest,
                                       const DatasetCache& cache,
                                       const std::string& split);

// <study>.csv per report, one summary.json, and a per-(run, seed) per-view
// accuracy bar chart as binary PPM. Deterministic bytes for equal input.
void emit_report(const std::vector<StudyReport>& reports,
                 const std::string& out_dir);

}  // namespace pogmv

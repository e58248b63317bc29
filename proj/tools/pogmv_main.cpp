// Command-line front end: dataset generation, partitioning, training,
// evaluation, inference, and the study runners.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pogmv/harness.hpp"
#include "pogmv/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw pogmv::Error("MissingFile", path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw pogmv::Error("MalformedLine", path);
  return j;
}

pogmv::GeneratorSpec generator_from_json(const json& j) {
  pogmv::GeneratorSpec s = pogmv::GeneratorSpec::desk_default();
  s.num_classes = j.value("num_classes", s.num_classes);
  s.n_tiers = j.value("n_tiers", s.n_tiers);
  s.frames = j.value("frames", s.frames);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.train_count = j.value("train_count", s.train_count);
  s.val_count = j.value("val_count", s.val_count);
  s.test_count = j.value("test_count", s.test_count);
  s.base_actor_height = j.value("base_actor_height", s.base_actor_height);
  s.ratio_min = j.value("ratio_min", s.ratio_min);
  s.ratio_max = j.value("ratio_max", s.ratio_max);
  if (j.contains("tiers")) {
    s.tiers.clear();
    for (const auto& tj : j["tiers"]) {
      pogmv::TierDegradation t;
      t.actor_scale = tj.value("actor_scale", 1.0);
      t.blur_radius = tj.value("blur_radius", 0);
      t.noise_level = tj.value("noise_level", 0.0);
      s.tiers.push_back(t);
    }
  }
  return s;
}

pogmv::TrainConfig train_config(const json& cfg_json, std::optional<uint64_t> seed) {
  pogmv::TrainConfig cfg = pogmv::TrainConfig::desk_default();
  if (cfg_json.contains("train")) {
    // Merge on top of the desk defaults.
    json merged = cfg.to_json();
    merged.update(cfg_json["train"], true);
    cfg = pogmv::TrainConfig::from_json(merged);
  }
  if (seed) cfg.seed = *seed;
  return cfg;
}

// Clip geometry and class count always come from the dataset itself.
void size_to_manifest(pogmv::TrainConfig& cfg, const pogmv::DatasetManifest& m) {
  cfg.backbone.frames = m.clip_shape[0];
  cfg.backbone.channels = m.clip_shape[1];
  cfg.backbone.height = m.clip_shape[2];
  cfg.backbone.width = m.clip_shape[3];
  cfg.backbone.num_classes = m.num_classes;
}

pogmv::DatasetManifest open_dataset(const std::string& data_dir) {
  return pogmv::load_manifest((fs::path(data_dir) / "manifest.json").string());
}

std::vector<uint64_t> parse_seeds(const std::string& text) {
  std::vector<uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  if (out.empty()) throw pogmv::Error("InvalidSpec", "empty seed list");
  return out;
}

ordered_json eval_to_json(const pogmv::EvalReport& r) { return r.to_json(); }

ordered_json study_to_json(const pogmv::StudyReport& rep) {
  ordered_json j;
  j["study"] = rep.study;
  ordered_json runs = ordered_json::array();
  for (const auto& r : rep.runs) {
    ordered_json rj;
    rj["run_name"] = r.run_name;
    rj["seed"] = r.seed;
    rj["config"] = r.cfg.to_json();
    rj["eval"]["overall"] = r.eval.overall;
    rj["eval"]["total"] = r.eval.total;
    rj["eval"]["view_counts"] = r.eval.view_counts;
    rj["eval"]["view_accuracy"] = r.eval.view_accuracy;
    runs.push_back(rj);
  }
  j["runs"] = runs;
  j["summary"] = rep.summary;
  return j;
}

pogmv::StudyReport study_from_json(const json& j) {
  pogmv::StudyReport rep;
  rep.study = j.at("study").get<std::string>();
  for (const auto& rj : j.at("runs")) {
    pogmv::RunRecord r;
    r.run_name = rj.at("run_name").get<std::string>();
    r.seed = rj.at("seed").get<uint64_t>();
    r.cfg = pogmv::TrainConfig::from_json(rj.at("config"));
    r.eval.overall = rj.at("eval").at("overall").get<double>();
    r.eval.total = rj.at("eval").at("total").get<int>();
    r.eval.view_counts = rj.at("eval").at("view_counts").get<std::vector<int>>();
    r.eval.view_accuracy =
        rj.at("eval").at("view_accuracy").get<std::vector<double>>();
    rep.runs.push_back(std::move(r));
  }
  rep.summary = j.value("summary", json::object());
  return rep;
}

void save_study(const pogmv::StudyReport& rep, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::string path =
      (fs::path(out_dir) / (rep.study + "_report.json")).string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw pogmv::Error("IoFailure", path);
  out << study_to_json(rep).dump(2) << "\n";
  pogmv::emit_report({rep}, out_dir);
  std::cout << path << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"partial-order guided multi-view action recognition"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  std::optional<uint64_t> seed;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "seed override");
  app.add_option("--out", out_dir, "output directory");

  std::string data_dir, checkpoint_path, split = "test", clip_path, id;
  std::string n_values_text = "2,3,4", seeds_text = "1,2,3";
  std::string plans_text = "none;0>1;1>0";
  double ratio = -1.0;
  int n_views = 3;
  std::vector<std::string> report_inputs;

  auto* gen = app.add_subcommand("gen-data", "render the sprite benchmark");

  auto* part = app.add_subcommand("partition", "fit the altitude views");
  part->add_option("--data", data_dir, "dataset directory")->required();
  part->add_option("--n", n_views, "number of views");

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--data", data_dir, "dataset directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--checkpoint", checkpoint_path, "model file")->required();
  ev->add_option("--split", split, "split name");

  auto* inf = app.add_subcommand("infer", "classify one clip");
  inf->add_option("--checkpoint", checkpoint_path, "model file")->required();
  inf->add_option("--clip", clip_path, "clip file (or --data with --id)");
  inf->add_option("--data", data_dir, "dataset directory");
  inf->add_option("--id", id, "sample id inside --data");
  inf->add_option("--ratio", ratio, "head-to-body ratio override");

  auto* sweep = app.add_subcommand("sweep-views", "accuracy per view count");
  sweep->add_option("--data", data_dir, "dataset directory")->required();
  sweep->add_option("--n-values", n_values_text, "comma-separated view counts");
  sweep->add_option("--seeds", seeds_text, "comma-separated seeds");

  auto* guides = app.add_subcommand("study-guides", "transfer direction study");
  guides->add_option("--data", data_dir, "dataset directory")->required();
  guides->add_option("--plans", plans_text,
                     "semicolon-separated transfer plans");
  guides->add_option("--seeds", seeds_text, "comma-separated seeds");

  auto* abl = app.add_subcommand("ablate", "module on/off study");
  abl->add_option("--data", data_dir, "dataset directory")->required();
  abl->add_option("--seeds", seeds_text, "comma-separated seeds");

  auto* diag = app.add_subcommand("diagnose", "feature similarity diagnostic");
  diag->add_option("--data", data_dir, "dataset directory")->required();
  diag->add_option("--checkpoint", checkpoint_path, "model file")->required();
  diag->add_option("--split", split, "split name");

  auto* rep = app.add_subcommand("report", "re-emit artifacts from study JSON");
  rep->add_option("inputs", report_inputs, "study report JSON files")
      ->required();

  // Let --config/--seed/--out appear after the subcommand name too.
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  json cfg_json = json::object();
  if (!config_path.empty()) cfg_json = load_json_file(config_path);

  if (gen->parsed()) {
    pogmv::GeneratorSpec spec = generator_from_json(
        cfg_json.contains("generator") ? cfg_json["generator"] : json::object());
    uint64_t s = seed.value_or(1);
    pogmv::generate_synthetic_dataset(spec, s, out_dir);
    std::cout << (fs::path(out_dir) / "manifest.json").string() << "\n";
    return 0;
  }

  if (part->parsed()) {
    pogmv::DatasetManifest m = open_dataset(data_dir);
    pogmv::ViewAssignment a = pogmv::fit_assignment(m, "train", n_views);
    fs::create_directories(out_dir);
    std::string jsonl = (fs::path(out_dir) / "assignment.jsonl").string();
    std::string sidecar = (fs::path(out_dir) / "assignment.json").string();
    pogmv::save_assignment(jsonl, sidecar, a);
    pogmv::PartitionReport stats =
        pogmv::partition_stats(a, m.labels, m.num_classes);
    ordered_json j;
    j["n"] = a.n;
    j["thresholds"] = a.thresholds;
    for (const auto& v : stats.views) {
      ordered_json vj;
      vj["count"] = v.count;
      vj["ratio_min"] = v.ratio_min;
      vj["ratio_max"] = v.ratio_max;
      vj["classes_present"] = v.classes_present;
      j["views"].push_back(vj);
    }
    j["missing_actions"] = stats.missing_actions;
    std::cout << j.dump(2) << "\n";
    return 0;
  }

  if (tr->parsed()) {
    pogmv::DatasetManifest m = open_dataset(data_dir);
    pogmv::DatasetCache cache(m);
    pogmv::TrainConfig cfg = train_config(cfg_json, seed);
    size_to_manifest(cfg, m);
    pogmv::ViewAssignment a =
        pogmv::fit_assignment(m, cfg.train_split, cfg.backbone.n_views);
    pogmv::ParamStore store;
    pogmv::TrainResult result =
        pogmv::train(cfg, m, cache, a, store, out_dir);
    std::cout << result.checkpoint_path << "\n";
    std::cout << result.final_eval.to_json().dump(2) << "\n";
    return 0;
  }

  if (ev->parsed()) {
    pogmv::DatasetManifest m = open_dataset(data_dir);
    pogmv::DatasetCache cache(m);
    pogmv::ParamStore store;
    std::vector<double> thresholds;
    pogmv::TrainConfig cfg =
        pogmv::load_train_checkpoint(checkpoint_path, store, thresholds);
    pogmv::ViewAssignment a;
    a.n = cfg.backbone.n_views;
    a.thresholds = thresholds;
    auto detections = pogmv::load_detections(
        (fs::path(m.root_dir) / m.detections_path).string());
    pogmv::EvalReport er = pogmv::evaluate(store, cfg, a, m, cache, split,
                                           pogmv::ratio_map(detections));
    std::cout << eval_to_json(er).dump(2) << "\n";
    return 0;
  }

  if (inf->parsed()) {
    pogmv::ParamStore store;
    std::vector<double> thresholds;
    pogmv::TrainConfig cfg =
        pogmv::load_train_checkpoint(checkpoint_path, store, thresholds);
    pogmv::Tensor clip;
    double r = ratio;
    if (!id.empty()) {
      if (data_dir.empty()) {
        throw pogmv::Error("MissingFile", "--id needs --data");
      }
      pogmv::DatasetManifest m = open_dataset(data_dir);
      clip = pogmv::read_clip(m.clip_file(id));
      if (r <= 0) {
        auto detections = pogmv::load_detections(
            (fs::path(m.root_dir) / m.detections_path).string());
        auto ratios = pogmv::ratio_map(detections);
        auto it = ratios.find(id);
        if (it == ratios.end()) throw pogmv::Error("MissingDetection", id);
        r = it->second;
      }
    } else if (!clip_path.empty()) {
      clip = pogmv::read_clip(clip_path);
      if (r <= 0) throw pogmv::Error("MissingDetection", clip_path);
    } else {
      throw pogmv::Error("MissingFile", "provide --clip or --id");
    }
    pogmv::InferResult res = pogmv::infer(store, cfg, thresholds, clip, r);
    ordered_json j;
    j["view"] = res.view;
    j["label"] = res.label;
    j["logits"] = res.logits;
    std::cout << j.dump(2) << "\n";
    return 0;
  }

  if (sweep->parsed()) {
    pogmv::DatasetManifest m = open_dataset(data_dir);
    pogmv::DatasetCache cache(m);
    pogmv::TrainConfig cfg = train_config(cfg_json, seed);
    size_to_manifest(cfg, m);
    std::vector<int> ns;
    for (uint64_t v : parse_seeds(n_values_text)) ns.push_back(static_cast<int>(v));
    pogmv::StudyReport report = pogmv::run_partition_sweep(
        ns, cfg, parse_seeds(seeds_text), m, cache, out_dir);
    save_study(report, out_dir);
    return 0;
  }

  if (guides->parsed()) {
    pogmv::DatasetManifest m = open_dataset(data_dir);
    pogmv::DatasetCache cache(m);
    pogmv::TrainConfig cfg = train_config(cfg_json, seed);
    size_to_manifest(cfg, m);
    std::vector<std::string> plans;
    std::stringstream ss(plans_text);
    std::string item;
    while (std::getline(ss, item, ';')) plans.push_back(item);
    pogmv::StudyReport report = pogmv::run_guide_strategy_study(
        plans, cfg, parse_seeds(seeds_text), m, cache, out_dir);
    save_study(report, out_dir);
    return 0;
  }

  if (abl->parsed()) {
    pogmv::DatasetManifest m = open_dataset(data_dir);
    pogmv::DatasetCache cache(m);
    pogmv::TrainConfig cfg = train_config(cfg_json, seed);
    size_to_manifest(cfg, m);
    pogmv::AblationSpec spec;
    spec.variants = {{"baseline", false, false, "default"},
                     {"vdg_only", false, true, "default"},
                     {"apog_only", true, false, "default"},
                     {"both", true, true, "default"}};
    spec.seeds = parse_seeds(seeds_text);
    pogmv::StudyReport report =
        pogmv::run_module_ablation(spec, cfg, m, cache, out_dir);
    save_study(report, out_dir);
    return 0;
  }

  if (diag->parsed()) {
    pogmv::DatasetManifest m = open_dataset(data_dir);
    pogmv::DatasetCache cache(m);
    pogmv::ParamStore store;
    std::vector<double> thresholds;
    pogmv::TrainConfig cfg =
        pogmv::load_train_checkpoint(checkpoint_path, store, thresholds);
    pogmv::ViewAssignment a;
    a.n = cfg.backbone.n_views;
    a.thresholds = thresholds;
    pogmv::DiagnosticReport dr =
        pogmv::similarity_diagnostic(store, cfg, a, m, cache, split);
    std::cout << dr.to_json().dump(2) << "\n";
    return 0;
  }

  if (rep->parsed()) {
    std::vector<pogmv::StudyReport> reports;
    for (const auto& path : report_inputs) {
      reports.push_back(study_from_json(load_json_file(path)));
    }
    pogmv::emit_report(reports, out_dir);
    std::cout << (fs::path(out_dir) / "summary.json").string() << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const pogmv::Error& e) {
    std::cerr << e.what() << "\n";  // what() is already "Name: detail"
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "InternalError: " << e.what() << "\n";
    return 2;
  }
}

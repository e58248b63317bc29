#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "pogmv/harness.hpp"

using namespace pogmv;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / "pogmv_tests" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

StudyReport fake_study() {
  StudyReport rep;
  rep.study = "demo";
  for (uint64_t seed : {1, 2}) {
    RunRecord r;
    r.run_name = "n2";
    r.seed = seed;
    r.cfg = TrainConfig::desk_default();
    r.cfg.backbone.n_views = 2;
    r.eval.overall = 50.0 + static_cast<double>(seed);
    r.eval.total = 10;
    r.eval.view_counts = {6, 4};
    r.eval.view_accuracy = {60.0, 40.0};
    rep.runs.push_back(r);
  }
  rep.summary["note"] = "demo";
  return rep;
}

}  // namespace

TEST_CASE("median of odd, even and single lists") {
  CHECK(median({3.0}) == 3.0);
  CHECK(median({5.0, 1.0, 3.0}) == 3.0);
  CHECK(median({4.0, 1.0, 2.0, 8.0}) == doctest::Approx(3.0));
}

TEST_CASE("fit_assignment matches a direct ratio fit") {
  std::string dir = tmp_dir("fit");
  GeneratorSpec spec = GeneratorSpec::desk_default();
  spec.num_classes = 3;
  spec.train_count = 18;
  spec.test_count = 6;
  DatasetManifest m = generate_synthetic_dataset(spec, 4, dir);
  ViewAssignment a = fit_assignment(m, "train", 3);
  CHECK(a.samples.size() == 18);

  auto dets = load_detections(dir + "/detections.jsonl");
  std::vector<std::pair<std::string, double>> ratios;
  for (const auto& d : dets) {
    // fit only on the training split
    bool in_train = false;
    for (const auto& id : m.split("train")) in_train |= (id == d.sample_id);
    if (in_train) ratios.emplace_back(d.sample_id, head_to_body_ratio(d));
  }
  ViewAssignment direct = assign_views(ratios, 3);
  for (const auto& s : direct.samples) {
    CHECK(a.view_of(s.sample_id) == s.view_index);
  }
}

TEST_CASE("similarity diagnostic is a bounded cosine statistic") {
  std::string dir = tmp_dir("diag");
  GeneratorSpec spec = GeneratorSpec::desk_default();
  spec.num_classes = 3;
  spec.train_count = 12;
  spec.test_count = 6;
  DatasetManifest m = generate_synthetic_dataset(spec, 8, dir);
  DatasetCache cache(m);
  ViewAssignment a = fit_assignment(m, "train", 2);

  TrainConfig cfg = TrainConfig::desk_default();
  cfg.backbone.frames = m.clip_shape[0];
  cfg.backbone.channels = m.clip_shape[1];
  cfg.backbone.height = m.clip_shape[2];
  cfg.backbone.width = m.clip_shape[3];
  cfg.backbone.num_classes = m.num_classes;
  cfg.backbone.n_views = 2;
  ParamStore store;
  init_backbone_params(store, cfg.backbone, 3);

  DiagnosticReport rep =
      similarity_diagnostic(store, cfg, a, m, cache, "train");
  CHECK(rep.same_pairs > 0);
  CHECK(rep.diff_pairs > 0);
  CHECK(rep.s_same >= -1.0);
  CHECK(rep.s_same <= 1.0);
  CHECK(rep.s_diff >= -1.0);
  CHECK(rep.s_diff <= 1.0);
  auto j = rep.to_json();
  CHECK(j.contains("s_same"));
  CHECK(j.contains("ratio"));

  DiagnosticReport rep2 =
      similarity_diagnostic(store, cfg, a, m, cache, "train");
  CHECK(rep.s_same == rep2.s_same);
  CHECK(rep.s_diff == rep2.s_diff);
}

TEST_CASE("emit_report writes deterministic csv, ppm and summary") {
  std::string d1 = tmp_dir("rep1"), d2 = tmp_dir("rep2");
  std::vector<StudyReport> reps{fake_study()};
  emit_report(reps, d1);
  emit_report(reps, d2);

  std::string csv = slurp(d1 + "/demo.csv");
  CHECK(csv == slurp(d2 + "/demo.csv"));
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("run,seed,n_views,apog,vdg,transfer_plan,overall", 0) ==
        0);
  int rows = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ++rows;
  CHECK(rows == 2);

  std::string summary = slurp(d1 + "/summary.json");
  CHECK(summary == slurp(d2 + "/summary.json"));
  auto j = nlohmann::json::parse(summary);
  CHECK(j.at("schema") == "pogmv-study-report-v1");

  std::string ppm = d1 + "/demo_n2_seed1.ppm";
  REQUIRE(fs::exists(ppm));
  std::string bytes = slurp(ppm);
  CHECK(bytes.rfind("P6", 0) == 0);
  CHECK(bytes == slurp(d2 + "/demo_n2_seed1.ppm"));

  emit_report({}, tmp_dir("rep_empty"));  // empty input still succeeds
}

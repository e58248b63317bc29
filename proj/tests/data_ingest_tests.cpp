#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "pogmv/data_ingest.hpp"

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

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

GeneratorSpec tiny_spec() {
  GeneratorSpec s = GeneratorSpec::desk_default();
  s.num_classes = 3;
  s.train_count = 24;
  s.test_count = 9;
  return s;
}

}  // namespace

TEST_CASE("load_detections maps fields and validates") {
  std::string dir = tmp_dir("det");
  std::string path = dir + "/d.jsonl";

  SUBCASE("direct field mapping") {
    spit(path,
         R"({"sample_id":"a","head_box":[10,5,8,12],"body_box":[8,5,14,60]})"
         "\n");
    auto recs = load_detections(path);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].head_box.h == 12.0);
    CHECK(recs[0].body_box.h == 60.0);
    CHECK(recs[0].sample_id == "a");
  }
  SUBCASE("zero body height rejected") {
    spit(path,
         R"({"sample_id":"a","head_box":[0,0,1,1],"body_box":[0,0,1,0]})"
         "\n");
    CHECK_THROWS_WITH_AS(load_detections(path),
                         doctest::Contains("NonPositiveBoxHeight"), Error);
  }
  SUBCASE("duplicate sample id rejected") {
    std::string line =
        R"({"sample_id":"a","head_box":[0,0,1,1],"body_box":[0,0,1,4]})";
    spit(path, line + "\n" + line + "\n");
    CHECK_THROWS_WITH_AS(load_detections(path),
                         doctest::Contains("DuplicateSampleId"), Error);
  }
  SUBCASE("malformed line reported with its number") {
    spit(path,
         R"({"sample_id":"a","head_box":[0,0,1,1],"body_box":[0,0,1,4]})"
         "\nnot json\n");
    CHECK_THROWS_WITH_AS(load_detections(path), doctest::Contains("line 2"),
                         Error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(load_detections(dir + "/absent.jsonl"),
                         doctest::Contains("MissingFile"), Error);
  }
}

TEST_CASE("detections write-read-write is byte identical") {
  std::string dir = tmp_dir("det_rt");
  std::vector<DetectionRecord> recs;
  recs.push_back({"s1", {1.5, 2, 3, 4.25}, {0, 0, 10, 16}});
  recs.push_back({"s2", {0, 1, 2, 3}, {4, 5, 6, 7}});
  std::string p1 = dir + "/a.jsonl", p2 = dir + "/b.jsonl";
  write_detections(p1, recs);
  write_detections(p2, load_detections(p1));
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("clip binary round trip is byte identical") {
  std::string dir = tmp_dir("clip_rt");
  Tensor frames({2, 1, 3, 3});
  for (std::size_t i = 0; i < frames.numel(); ++i) {
    frames.data[i] = static_cast<double>(i) / 17.0;
  }
  std::string p1 = dir + "/a.clip", p2 = dir + "/b.clip";
  write_clip(p1, frames);
  write_clip(p2, read_clip(p1));
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("generator is deterministic") {
  GeneratorSpec spec = tiny_spec();
  std::string d1 = tmp_dir("gen1"), d2 = tmp_dir("gen2");
  DatasetManifest m1 = generate_synthetic_dataset(spec, 7, d1);
  DatasetManifest m2 = generate_synthetic_dataset(spec, 7, d2);
  CHECK(slurp(d1 + "/manifest.json") == slurp(d2 + "/manifest.json"));
  CHECK(slurp(d1 + "/detections.jsonl") == slurp(d2 + "/detections.jsonl"));
  std::string first = m1.split("train")[0];
  CHECK(slurp(m1.clip_file(first)) == slurp(m2.clip_file(first)));
}

TEST_CASE("generator ordering: ratio strictly increases with tier") {
  GeneratorSpec spec = tiny_spec();
  std::string dir = tmp_dir("gen_ord");
  DatasetManifest m = generate_synthetic_dataset(spec, 3, dir);
  auto dets = load_detections(dir + "/detections.jsonl");
  std::map<std::string, double> ratio;
  for (const auto& d : dets) ratio[d.sample_id] = d.head_box.h / d.body_box.h;
  int checked = 0;
  for (const auto& [ida, la] : m.labels) {
    for (const auto& [idb, lb] : m.labels) {
      if (la != lb) continue;
      int ta = m.tiers.at(ida), tb = m.tiers.at(idb);
      if (ta < tb) {
        CHECK(ratio.at(ida) < ratio.at(idb));
        ++checked;
      }
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("generator rejects non-monotone degradation") {
  GeneratorSpec spec = tiny_spec();
  spec.tiers[2].blur_radius = 0;  // no harsher than tier 1
  CHECK_THROWS_WITH_AS(generate_synthetic_dataset(spec, 1, tmp_dir("gen_bad")),
                       doctest::Contains("InvalidSpec"), Error);
  GeneratorSpec one_class = tiny_spec();
  one_class.num_classes = 1;
  CHECK_THROWS_AS(generate_synthetic_dataset(one_class, 1, tmp_dir("gen_bad2")),
                  Error);
}

TEST_CASE("batch iterator sizes, determinism, unknown split") {
  GeneratorSpec spec = tiny_spec();
  spec.train_count = 10;
  std::string dir = tmp_dir("batch");
  DatasetManifest m = generate_synthetic_dataset(spec, 5, dir);

  BatchIterator it(m, "train", 4, 99);
  auto batches = it.epoch_batches(0);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 2);

  BatchIterator it2(m, "train", 4, 99);
  CHECK(it2.epoch_batches(0) == batches);
  CHECK(it2.epoch_batches(1) != batches);  // reshuffled across epochs

  CHECK_THROWS_WITH_AS(BatchIterator(m, "validation", 4, 1),
                       doctest::Contains("UnknownSplit"), Error);
}

TEST_CASE("manifest load validates splits and labels") {
  GeneratorSpec spec = tiny_spec();
  std::string dir = tmp_dir("mani");
  generate_synthetic_dataset(spec, 2, dir);
  DatasetManifest m = load_manifest(dir + "/manifest.json");
  CHECK(m.num_classes == 3);
  CHECK(m.split("train").size() == 24);
  CHECK(m.split("test").size() == 9);
  CHECK_THROWS_AS(m.split("nope"), Error);
  DatasetCache cache(m);
  const ClipRecord& rec = cache.clip(m.split("train")[0]);
  CHECK(rec.frames.shape ==
        std::vector<int>{m.clip_shape[0], m.clip_shape[1], m.clip_shape[2],
                         m.clip_shape[3]});
  CHECK(rec.label >= 0);
  CHECK(rec.label < m.num_classes);
}

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pogmv/tensor.hpp"

namespace pogmv {

struct Box {
  double x = 0, y = 0, w = 0, h = 0;
};

struct DetectionRecord {
  std::string sample_id;
  Box head_box;
  Box body_box;
};

// Frames are stored [T, C, H, W] with values in [0, 1].
struct ClipRecord {
  std::string sample_id;
  Tensor frames;
  int label = -1;
  int true_altitude_tier = -1;  // synthetic ground truth, diagnostics only
};

struct DatasetManifest {
  std::array<int, 4> clip_shape{};  // T, C, H, W
  int num_classes = 0;
  std::map<std::string, std::vector<std::string>> splits;
  std::string detections_path;  // relative to root_dir
  std::string clips_path;       // relative to root_dir
  std::optional<uint64_t> generator_seed;
  std::map<std::string, int> labels;
  std::map<std::string, int> tiers;
  std::string root_dir;  // set when loaded; not serialized

  const std::vector<std::string>& split(const std::string& name) const;
  std::string clip_file(const std::string& sample_id) const;
};

struct TierDegradation {
  double actor_scale = 1.0;
  int blur_radius = 0;
  double noise_level = 0.0;
};

struct GeneratorSpec {
  int num_classes = 5;
  int n_tiers = 3;
  int frames = 6;
  int height = 16;
  int width = 16;
  int train_count = 600;
  int val_count = 0;
  int test_count = 150;
  std::vector<TierDegradation> tiers;  // one per tier, strictly harsher per tier
  double base_actor_height = 11.0;     // pixels at scale 1
  double ratio_min = 0.2;              // head-to-body band across all tiers
  double ratio_max = 0.8;

  static GeneratorSpec desk_default();
};

// Detections JSONL.
std::vector<DetectionRecord> load_detections(const std::string& path);
void write_detections(const std::string& path,
                      const std::vector<DetectionRecord>& records);

// Clip binary files: "POGV" + u32 version + u16 dims (T,C,H,W) + f32 data.
void write_clip(const std::string& path, const Tensor& frames);
Tensor read_clip(const std::string& path);

// Manifest JSON.
void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

// Renders the sprite benchmark under out_dir (manifest.json, detections.jsonl,
// clips/). Deterministic in (spec, seed).
DatasetManifest generate_synthetic_dataset(const GeneratorSpec& spec,
                                           uint64_t seed,
                                           const std::string& out_dir);

// In-memory clip cache for training and evaluation.
class DatasetCache {
 public:
  explicit DatasetCache(const DatasetManifest& manifest);
  const ClipRecord& clip(const std::string& sample_id) const;

 private:
  std::map<std::string, ClipRecord> clips_;
};

// Seeded epoch shuffling; the final short batch is emitted, not dropped.
class BatchIterator {
 public:
  BatchIterator(const DatasetManifest& manifest, const std::string& split,
                int batch_size, uint64_t seed);
  std::vector<std::vector<std::string>> epoch_batches(int epoch) const;

 private:
  std::vector<std::string> ids_;
  int batch_size_;
  uint64_t seed_;
};

}  // namespace pogmv

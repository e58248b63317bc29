#include "pogmv/data_ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace pogmv {

namespace {

uint64_t fnv1a(const std::string& s, uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdull;
  x ^= x >> 33;
  return x;
}

Box parse_box(const nlohmann::json& j, int line_no) {
  if (!j.is_array() || j.size() != 4) {
    throw Error("MalformedLine", "line " + std::to_string(line_no));
  }
  Box b;
  double* fields[4] = {&b.x, &b.y, &b.w, &b.h};
  for (int i = 0; i < 4; ++i) {
    if (!j[i].is_number()) {
      throw Error("MalformedLine", "line " + std::to_string(line_no));
    }
    *fields[i] = j[i].get<double>();
  }
  return b;
}

ordered_json box_json(const Box& b) {
  return ordered_json::array({b.x, b.y, b.w, b.h});
}

}  // namespace

const std::vector<std::string>& DatasetManifest::split(
    const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw Error("UnknownSplit", name);
  return it->second;
}

std::string DatasetManifest::clip_file(const std::string& sample_id) const {
  return (fs::path(root_dir) / clips_path / (sample_id + ".pogv")).string();
}

std::vector<DetectionRecord> load_detections(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("MissingFile", path);
  std::vector<DetectionRecord> out;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("sample_id") ||
        !j.contains("head_box") || !j.contains("body_box") || j.size() != 3 ||
        !j["sample_id"].is_string()) {
      throw Error("MalformedLine", "line " + std::to_string(line_no));
    }
    DetectionRecord r;
    r.sample_id = j["sample_id"].get<std::string>();
    r.head_box = parse_box(j["head_box"], line_no);
    r.body_box = parse_box(j["body_box"], line_no);
    if (!(r.head_box.h > 0.0) || !(r.body_box.h > 0.0)) {
      throw Error("NonPositiveBoxHeight", r.sample_id);
    }
    if (!seen.insert(r.sample_id).second) {
      throw Error("DuplicateSampleId", r.sample_id);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_detections(const std::string& path,
                      const std::vector<DetectionRecord>& records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("IoFailure", "cannot open " + path);
  for (const auto& r : records) {
    ordered_json j;
    j["sample_id"] = r.sample_id;
    j["head_box"] = box_json(r.head_box);
    j["body_box"] = box_json(r.body_box);
    f << j.dump() << "\n";
  }
  if (!f) throw Error("IoFailure", "write failed: " + path);
}

namespace {

constexpr uint32_t kClipVersion = 1;

void put_u32le(std::ostream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16le(std::ostream& f, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 2);
}

uint32_t get_u32le(std::istream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t get_u16le(std::istream& f) {
  unsigned char b[2];
  f.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void write_clip(const std::string& path, const Tensor& frames) {
  if (frames.rank() != 4) throw Error("ShapeMismatch", "clip must be [T,C,H,W]");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("IoFailure", "cannot open " + path);
  f.write("POGV", 4);
  put_u32le(f, kClipVersion);
  for (int i = 0; i < 4; ++i) put_u16le(f, static_cast<uint16_t>(frames.shape[i]));
  std::vector<float> buf(frames.numel());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<float>(frames.data[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw Error("IoFailure", "write failed: " + path);
}

Tensor read_clip(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("MissingFile", path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "POGV", 4) != 0) {
    throw Error("IoFailure", "bad clip magic: " + path);
  }
  uint32_t ver = get_u32le(f);
  if (ver != kClipVersion) throw Error("IoFailure", "bad clip version: " + path);
  std::vector<int> shape(4);
  for (int i = 0; i < 4; ++i) shape[i] = get_u16le(f);
  Tensor t(shape);
  std::vector<float> buf(t.numel());
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw Error("IoFailure", "truncated clip: " + path);
  for (std::size_t i = 0; i < buf.size(); ++i)
    t.data[i] = static_cast<double>(buf[i]);
  return t;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  ordered_json j;
  j["clip_shape"] = m.clip_shape;
  j["num_classes"] = m.num_classes;
  j["splits"] = m.splits;
  j["detections_path"] = m.detections_path;
  j["clips_path"] = m.clips_path;
  if (m.generator_seed) j["generator_seed"] = *m.generator_seed;
  j["labels"] = m.labels;
  j["tiers"] = m.tiers;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("IoFailure", "cannot open " + path);
  f << j.dump(2) << "\n";
  if (!f) throw Error("IoFailure", "write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("MissingFile", path);
  nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
  if (j.is_discarded()) throw Error("IoFailure", "bad manifest JSON: " + path);
  DatasetManifest m;
  try {
    auto cs = j.at("clip_shape");
    for (int i = 0; i < 4; ++i) m.clip_shape[i] = cs.at(i).get<int>();
    m.num_classes = j.at("num_classes").get<int>();
    m.splits = j.at("splits")
                   .get<std::map<std::string, std::vector<std::string>>>();
    m.detections_path = j.at("detections_path").get<std::string>();
    m.clips_path = j.at("clips_path").get<std::string>();
    if (j.contains("generator_seed"))
      m.generator_seed = j["generator_seed"].get<uint64_t>();
    m.labels = j.at("labels").get<std::map<std::string, int>>();
    m.tiers = j.at("tiers").get<std::map<std::string, int>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("IoFailure", std::string("bad manifest: ") + e.what());
  }
  m.root_dir = fs::path(path).parent_path().string();
  // Splits must be pairwise disjoint and resolve to labelled clips.
  std::set<std::string> all;
  for (const auto& [name, ids] : m.splits) {
    for (const auto& id : ids) {
      if (!all.insert(id).second) throw Error("DuplicateSampleId", id);
      auto it = m.labels.find(id);
      if (it == m.labels.end()) throw Error("IoFailure", "no label for " + id);
      if (it->second < 0 || it->second >= m.num_classes) {
        throw Error("LabelOutOfRange", id);
      }
    }
  }
  return m;
}

GeneratorSpec GeneratorSpec::desk_default() {
  GeneratorSpec s;
  s.tiers.resize(static_cast<std::size_t>(s.n_tiers));
  for (int t = 0; t < s.n_tiers; ++t) {
    double u = s.n_tiers > 1 ? static_cast<double>(t) / (s.n_tiers - 1) : 0.0;
    s.tiers[t].actor_scale = 1.0 - 0.5 * u;
    s.tiers[t].blur_radius = t;
    s.tiers[t].noise_level = 0.02 + 0.10 * u;
  }
  return s;
}

namespace {

void validate_spec(const GeneratorSpec& spec) {
  if (spec.num_classes < 2) throw Error("InvalidSpec", "num_classes < 2");
  if (spec.n_tiers < 2) throw Error("InvalidSpec", "n_tiers < 2");
  if (static_cast<int>(spec.tiers.size()) != spec.n_tiers) {
    throw Error("InvalidSpec", "tiers size != n_tiers");
  }
  if (spec.frames < 2 || spec.height < 8 || spec.width < 8) {
    throw Error("InvalidSpec", "clip dimensions too small");
  }
  if (spec.train_count < 0 || spec.val_count < 0 || spec.test_count < 0) {
    throw Error("InvalidSpec", "negative split count");
  }
  if (!(spec.ratio_min > 0.0) || !(spec.ratio_max > spec.ratio_min) ||
      spec.ratio_max >= 1.0) {
    throw Error("InvalidSpec", "ratio band");
  }
  for (int t = 1; t < spec.n_tiers; ++t) {
    if (!(spec.tiers[t].actor_scale < spec.tiers[t - 1].actor_scale)) {
      throw Error("InvalidSpec", "actor_scale not strictly decreasing");
    }
    if (!(spec.tiers[t].blur_radius > spec.tiers[t - 1].blur_radius)) {
      throw Error("InvalidSpec", "blur_radius not strictly increasing");
    }
    if (!(spec.tiers[t].noise_level > spec.tiers[t - 1].noise_level)) {
      throw Error("InvalidSpec", "noise_level not strictly increasing");
    }
  }
}

void box_blur_frame(std::vector<double>& img, int H, int W, int radius) {
  if (radius <= 0) return;
  std::vector<double> tmp(img.size());
  int win = 2 * radius + 1;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        int xx = std::clamp(x + k, 0, W - 1);
        s += img[y * W + xx];
      }
      tmp[y * W + x] = s / win;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        int yy = std::clamp(y + k, 0, H - 1);
        s += tmp[yy * W + x];
      }
      img[y * W + x] = s / win;
    }
}

// Pixel coverage of an axis-aligned interval [a, b] by pixel [p, p+1).
double interval_coverage(double p, double a, double b) {
  return std::clamp(std::min(p + 1.0, b) - std::max(p, a), 0.0, 1.0);
}

struct RenderedSample {
  Tensor frames;  // [T, 1, H, W]
  Box head_box;
  Box body_box;
};

RenderedSample render_sample(const GeneratorSpec& spec, int label, int tier,
                             std::mt19937_64& rng) {
  const TierDegradation& deg = spec.tiers[static_cast<std::size_t>(tier)];
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  double h = spec.base_actor_height * deg.actor_scale;
  // Disjoint per-tier ratio bands keep H strictly ordered across tiers.
  double band = (spec.ratio_max - spec.ratio_min) / spec.n_tiers;
  double rho = spec.ratio_min + band * (tier + 0.15 + 0.7 * unit(rng));
  double head_d = rho * h;
  double torso_w = 0.38 * h;

  double theta = 2.0 * M_PI * label / spec.num_classes;
  double speed = 0.13 * h;
  double travel = speed * (spec.frames - 1);
  double jx = (unit(rng) - 0.5) * 3.0;
  double jy = (unit(rng) - 0.5) * 3.0;
  double x0 = spec.width / 2.0 + jx - 0.5 * travel * std::cos(theta);
  double y0 = spec.height / 2.0 + jy - 0.5 * travel * std::sin(theta);

  RenderedSample out;
  out.frames = Tensor({spec.frames, 1, spec.height, spec.width});
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int t = 0; t < spec.frames; ++t) {
    double cx = x0 + t * speed * std::cos(theta);
    double cy = y0 + t * speed * std::sin(theta);
    double top = cy - h / 2.0;
    double head_cx = cx;
    double head_cy = top + head_d / 2.0;
    double head_r = head_d / 2.0;
    std::vector<double> img(static_cast<std::size_t>(spec.height) * spec.width,
                            0.0);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        double px = x + 0.5, py = y + 0.5;
        double dx = px - head_cx, dy = py - head_cy;
        double head_cov =
            std::clamp(head_r - std::sqrt(dx * dx + dy * dy) + 0.5, 0.0, 1.0);
        double torso_cov =
            interval_coverage(static_cast<double>(x), cx - torso_w / 2.0,
                              cx + torso_w / 2.0) *
            interval_coverage(static_cast<double>(y), top + head_d, top + h);
        img[static_cast<std::size_t>(y) * spec.width + x] =
            std::clamp(0.7 * torso_cov + 1.0 * head_cov, 0.0, 1.0);
      }
    box_blur_frame(img, spec.height, spec.width, deg.blur_radius);
    std::size_t base = static_cast<std::size_t>(t) *
                       static_cast<std::size_t>(spec.height) * spec.width;
    for (std::size_t i = 0; i < img.size(); ++i) {
      double v = img[i] + deg.noise_level * gauss(rng);
      out.frames.data[base + i] = std::clamp(v, 0.0, 1.0);
    }
    if (t == 0) {
      double bw = std::max(torso_w, head_d);
      out.body_box = Box{cx - bw / 2.0, top, bw, h};
      out.head_box = Box{cx - head_d / 2.0, top, head_d, head_d};
    }
  }
  return out;
}

}  // namespace

DatasetManifest generate_synthetic_dataset(const GeneratorSpec& spec_in,
                                           uint64_t seed,
                                           const std::string& out_dir) {
  GeneratorSpec spec = spec_in;
  if (spec.tiers.empty()) {
    GeneratorSpec d = GeneratorSpec::desk_default();
    d.n_tiers = spec.n_tiers;
    d.tiers.clear();
    for (int t = 0; t < spec.n_tiers; ++t) {
      double u = spec.n_tiers > 1 ? static_cast<double>(t) / (spec.n_tiers - 1)
                                  : 0.0;
      d.tiers.push_back({1.0 - 0.5 * u, t, 0.02 + 0.10 * u});
    }
    spec.tiers = d.tiers;
  }
  validate_spec(spec);

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "clips", ec);
  if (ec) throw Error("IoFailure", "cannot create " + out_dir);

  DatasetManifest m;
  m.clip_shape = {spec.frames, 1, spec.height, spec.width};
  m.num_classes = spec.num_classes;
  m.detections_path = "detections.jsonl";
  m.clips_path = "clips";
  m.generator_seed = seed;
  m.root_dir = out_dir;

  std::vector<DetectionRecord> detections;
  const std::pair<std::string, int> split_plan[] = {
      {"train", spec.train_count}, {"val", spec.val_count},
      {"test", spec.test_count}};
  for (const auto& [split_name, count] : split_plan) {
    if (count == 0) continue;
    std::vector<std::string> ids;
    for (int i = 0; i < count; ++i) {
      int label = i % spec.num_classes;
      int tier = (i / spec.num_classes) % spec.n_tiers;
      std::ostringstream id;
      id << split_name;
      id.fill('0');
      id.width(5);
      id << i;
      std::string sid = id.str();

      std::mt19937_64 rng(mix(seed, fnv1a(sid)));
      RenderedSample r = render_sample(spec, label, tier, rng);
      write_clip((fs::path(out_dir) / "clips" / (sid + ".pogv")).string(),
                 r.frames);
      detections.push_back({sid, r.head_box, r.body_box});
      m.labels[sid] = label;
      m.tiers[sid] = tier;
      ids.push_back(sid);
    }
    m.splits[split_name] = std::move(ids);
  }
  write_detections((fs::path(out_dir) / m.detections_path).string(), detections);
  save_manifest((fs::path(out_dir) / "manifest.json").string(), m);
  return m;
}

DatasetCache::DatasetCache(const DatasetManifest& manifest) {
  for (const auto& [name, ids] : manifest.splits) {
    for (const auto& id : ids) {
      ClipRecord rec;
      rec.sample_id = id;
      rec.frames = read_clip(manifest.clip_file(id));
      if (rec.frames.shape != std::vector<int>{manifest.clip_shape[0],
                                               manifest.clip_shape[1],
                                               manifest.clip_shape[2],
                                               manifest.clip_shape[3]}) {
        throw Error("ShapeMismatch", "clip " + id);
      }
      rec.label = manifest.labels.at(id);
      auto it = manifest.tiers.find(id);
      rec.true_altitude_tier = it == manifest.tiers.end() ? -1 : it->second;
      clips_[id] = std::move(rec);
    }
  }
}

const ClipRecord& DatasetCache::clip(const std::string& sample_id) const {
  auto it = clips_.find(sample_id);
  if (it == clips_.end()) throw Error("MissingFile", "clip " + sample_id);
  return it->second;
}

BatchIterator::BatchIterator(const DatasetManifest& manifest,
                             const std::string& split, int batch_size,
                             uint64_t seed)
    : ids_(manifest.split(split)), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw Error("InvalidSpec", "batch_size < 1");
}

std::vector<std::vector<std::string>> BatchIterator::epoch_batches(
    int epoch) const {
  std::vector<std::string> perm = ids_;
  std::mt19937_64 rng(mix(seed_, 0x5e70c1u + static_cast<uint64_t>(epoch)));
  // Hand-rolled Fisher-Yates so the permutation is identical on every
  // standard library.
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  std::vector<std::vector<std::string>> out;
  for (std::size_t i = 0; i < perm.size(); i += batch_size_) {
    std::size_t end = std::min(perm.size(), i + batch_size_);
    out.emplace_back(perm.begin() + i, perm.begin() + end);
  }
  return out;
}

}  // namespace pogmv

#include "pogmv/view_partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

using ordered_json = nlohmann::ordered_json;

namespace pogmv {

double head_to_body_ratio(const DetectionRecord& record) {
  if (!(record.head_box.h > 0.0) || !(record.body_box.h > 0.0)) {
    throw Error("NonPositiveBoxHeight", record.sample_id);
  }
  return record.head_box.h / record.body_box.h;
}

int ViewAssignment::classify(double ratio) const {
  int v = 0;
  for (double t : thresholds) {
    if (ratio > t) ++v;
  }
  return v;
}

int ViewAssignment::view_of(const std::string& sample_id) const {
  for (const auto& s : samples) {
    if (s.sample_id == sample_id) return s.view_index;
  }
  return -1;
}

ViewAssignment assign_views(std::vector<std::pair<std::string, double>> ratios,
                            int n) {
  if (n < 2) throw Error("InvalidViewCount", std::to_string(n));
  int m = static_cast<int>(ratios.size());
  if (m < n) throw Error("TooFewSamples", std::to_string(m) + " < " +
                                              std::to_string(n));
  for (const auto& [id, h] : ratios) {
    if (!std::isfinite(h) || !(h > 0.0)) throw Error("NonPositiveBoxHeight", id);
  }
  // Ties in H broken by sample_id so the split is deterministic.
  std::sort(ratios.begin(), ratios.end(),
            [](const auto& a, const auto& b) {
              if (a.second != b.second) return a.second < b.second;
              return a.first < b.first;
            });

  ViewAssignment out;
  out.n = n;
  // Remainder samples go to the lower-altitude (lower-index) groups.
  std::vector<int> sizes(static_cast<std::size_t>(n), m / n);
  for (int g = 0; g < m % n; ++g) sizes[g] += 1;

  int idx = 0;
  std::vector<double> group_last(static_cast<std::size_t>(n));
  std::vector<double> group_first(static_cast<std::size_t>(n));
  for (int g = 0; g < n; ++g) {
    group_first[g] = ratios[idx].second;
    for (int k = 0; k < sizes[g]; ++k, ++idx) {
      out.samples.push_back({ratios[idx].first, ratios[idx].second, g});
    }
    group_last[g] = ratios[idx - 1].second;
  }
  for (int g = 0; g + 1 < n; ++g) {
    out.thresholds.push_back(0.5 * (group_last[g] + group_first[g + 1]));
  }
  return out;
}

PartitionReport partition_stats(const ViewAssignment& assignment,
                                const std::map<std::string, int>& labels,
                                int num_classes) {
  PartitionReport report;
  report.views.resize(static_cast<std::size_t>(assignment.n));
  for (const auto& s : assignment.samples) {
    auto& v = report.views[static_cast<std::size_t>(s.view_index)];
    if (v.count == 0) {
      v.ratio_min = v.ratio_max = s.ratio;
    } else {
      v.ratio_min = std::min(v.ratio_min, s.ratio);
      v.ratio_max = std::max(v.ratio_max, s.ratio);
    }
    v.count += 1;
    auto it = labels.find(s.sample_id);
    if (it == labels.end()) throw Error("MissingDetection", s.sample_id);
    v.classes_present.insert(it->second);
  }
  for (int g = 0; g < assignment.n; ++g) {
    for (int k = 0; k < num_classes; ++k) {
      if (!report.views[g].classes_present.count(k)) {
        report.missing_actions.emplace_back(g, k);
      }
    }
  }
  return report;
}

void save_assignment(const std::string& jsonl_path,
                     const std::string& sidecar_path, const ViewAssignment& a) {
  std::ofstream f(jsonl_path, std::ios::binary);
  if (!f) throw Error("IoFailure", "cannot open " + jsonl_path);
  for (const auto& s : a.samples) {
    ordered_json j;
    j["sample_id"] = s.sample_id;
    j["H"] = s.ratio;
    j["view_index"] = s.view_index;
    f << j.dump() << "\n";
  }
  ordered_json side;
  side["n"] = a.n;
  side["thresholds"] = a.thresholds;
  std::ofstream g(sidecar_path, std::ios::binary);
  if (!g) throw Error("IoFailure", "cannot open " + sidecar_path);
  g << side.dump(2) << "\n";
}

ViewAssignment load_assignment(const std::string& jsonl_path,
                               const std::string& sidecar_path) {
  std::ifstream side(sidecar_path);
  if (!side) throw Error("MissingFile", sidecar_path);
  nlohmann::json sj = nlohmann::json::parse(side, nullptr, false);
  if (sj.is_discarded()) throw Error("IoFailure", "bad sidecar " + sidecar_path);
  ViewAssignment a;
  a.n = sj.at("n").get<int>();
  a.thresholds = sj.at("thresholds").get<std::vector<double>>();

  std::ifstream f(jsonl_path);
  if (!f) throw Error("MissingFile", jsonl_path);
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("sample_id") || !j.contains("H") ||
        !j.contains("view_index")) {
      throw Error("MalformedLine", "line " + std::to_string(line_no));
    }
    a.samples.push_back({j["sample_id"].get<std::string>(),
                         j["H"].get<double>(), j["view_index"].get<int>()});
  }
  return a;
}

}  // namespace pogmv

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "pogmv/data_ingest.hpp"

namespace pogmv {

// Equal-frequency altitude binning by head-to-body ratio.
struct ViewAssignment {
  int n = 0;
  std::vector<double> thresholds;  // n-1 cut points, strictly increasing
  struct Sample {
    std::string sample_id;
    double ratio;
    int view_index;
  };
  std::vector<Sample> samples;  // ascending by (ratio, sample_id)

  // Threshold classification for samples outside the fitted set; the upper
  // bin catches the maximum.
  int classify(double ratio) const;
  int view_of(const std::string& sample_id) const;  // -1 when absent
};

double head_to_body_ratio(const DetectionRecord& record);

ViewAssignment assign_views(
    std::vector<std::pair<std::string, double>> ratios, int n);

struct PartitionReport {
  struct ViewStats {
    int count = 0;
    double ratio_min = 0.0;
    double ratio_max = 0.0;
    std::set<int> classes_present;
  };
  std::vector<ViewStats> views;
  std::vector<std::pair<int, int>> missing_actions;  // (view, class)
};

PartitionReport partition_stats(const ViewAssignment& assignment,
                                const std::map<std::string, int>& labels,
                                int num_classes);

// JSONL (sample_id, H, view_index) plus a JSON sidecar with n and thresholds.
void save_assignment(const std::string& jsonl_path,
                     const std::string& sidecar_path,
                     const ViewAssignment& a);
ViewAssignment load_assignment(const std::string& jsonl_path,
                               const std::string& sidecar_path);

}  // namespace pogmv

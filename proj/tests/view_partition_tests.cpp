#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "pogmv/view_partition.hpp"

using namespace pogmv;

namespace {

std::vector<std::pair<std::string, double>> ratios_of(
    const std::vector<double>& hs) {
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < hs.size(); ++i) {
    out.emplace_back("s" + std::to_string(100 + i), hs[i]);
  }
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("head to body ratio") {
  DetectionRecord r{"a", {0, 0, 5, 30}, {0, 0, 10, 120}};
  CHECK(head_to_body_ratio(r) == doctest::Approx(0.25));
  r.head_box.h = 50;
  r.body_box.h = 50;
  CHECK(head_to_body_ratio(r) == doctest::Approx(1.0));
  r.body_box.h = 0;
  CHECK_THROWS_WITH_AS(head_to_body_ratio(r),
                       doctest::Contains("NonPositiveBoxHeight"), Error);
}

TEST_CASE("assign_views basic splits") {
  SUBCASE("m=6 n=3 equal split") {
    auto a = assign_views(ratios_of({0.1, 0.2, 0.3, 0.4, 0.5, 0.6}), 3);
    std::vector<int> got;
    for (const auto& s : a.samples) got.push_back(s.view_index);
    CHECK(got == std::vector<int>{0, 0, 1, 1, 2, 2});
  }
  SUBCASE("m=7 n=3 remainder to the lowest group") {
    auto a = assign_views(ratios_of({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7}), 3);
    std::vector<int> counts(3, 0);
    for (const auto& s : a.samples) ++counts[s.view_index];
    CHECK(counts == std::vector<int>{3, 2, 2});
  }
  SUBCASE("all ties split by sample id") {
    auto a = assign_views(ratios_of({0.5, 0.5, 0.5, 0.5}), 2);
    std::vector<int> counts(2, 0);
    for (const auto& s : a.samples) ++counts[s.view_index];
    CHECK(counts == std::vector<int>{2, 2});
    // ascending id order within the tie
    CHECK(a.samples[0].sample_id == "s100");
    CHECK(a.samples[0].view_index == 0);
    CHECK(a.samples[3].sample_id == "s103");
    CHECK(a.samples[3].view_index == 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_WITH_AS(assign_views(ratios_of({0.1, 0.2}), 1),
                         doctest::Contains("InvalidViewCount"), Error);
    CHECK_THROWS_WITH_AS(assign_views(ratios_of({0.1}), 2),
                         doctest::Contains("TooFewSamples"), Error);
  }
}

TEST_CASE("assign_views properties on random draws") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int trial = 0; trial < 20; ++trial) {
    int m = 23 + trial * 7;
    std::vector<double> hs;
    for (int i = 0; i < m; ++i) hs.push_back(u(rng));
    for (int n = 2; n <= 5; ++n) {
      auto pairs = ratios_of(hs);
      auto a = assign_views(pairs, n);

      // balance and conservation
      std::vector<int> counts(n, 0);
      for (const auto& s : a.samples) ++counts[s.view_index];
      int total = 0, mn = m, mx = 0;
      for (int c : counts) {
        total += c;
        mn = std::min(mn, c);
        mx = std::max(mx, c);
      }
      CHECK(total == m);
      CHECK(mx - mn <= 1);

      // monotonicity in H
      for (std::size_t i = 1; i < a.samples.size(); ++i) {
        CHECK(a.samples[i - 1].view_index <= a.samples[i].view_index);
      }

      // threshold classification reproduces the fitted assignment
      for (const auto& s : a.samples) {
        CHECK(a.classify(s.ratio) == s.view_index);
      }

      // permutation invariance
      std::shuffle(pairs.begin(), pairs.end(), rng);
      auto b = assign_views(pairs, n);
      for (const auto& s : a.samples) {
        CHECK(b.view_of(s.sample_id) == s.view_index);
      }
    }
  }
}

TEST_CASE("partition stats flags missing (view, class) pairs") {
  auto a = assign_views(ratios_of({0.1, 0.2, 0.3, 0.4}), 2);
  std::map<std::string, int> labels{
      {"s100", 0}, {"s101", 1}, {"s102", 0}, {"s103", 0}};
  auto rep = partition_stats(a, labels, 2);
  REQUIRE(rep.views.size() == 2);
  CHECK(rep.views[0].count == 2);
  CHECK(rep.views[1].count == 2);
  // class 1 only appears in view 0
  CHECK(rep.missing_actions ==
        std::vector<std::pair<int, int>>{{1, 1}});

  std::map<std::string, int> full{
      {"s100", 0}, {"s101", 1}, {"s102", 0}, {"s103", 1}};
  CHECK(partition_stats(a, full, 2).missing_actions.empty());
}

TEST_CASE("assignment files round trip byte identically") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "pogmv_tests" / "assign";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto a = assign_views(ratios_of({0.11, 0.52, 0.33, 0.74, 0.25, 0.66}), 3);
  std::string j1 = (dir / "a.jsonl").string(), s1 = (dir / "a.json").string();
  std::string j2 = (dir / "b.jsonl").string(), s2 = (dir / "b.json").string();
  save_assignment(j1, s1, a);
  save_assignment(j2, s2, load_assignment(j1, s1));
  CHECK(slurp(j1) == slurp(j2));
  CHECK(slurp(s1) == slurp(s2));
  CHECK(load_assignment(j1, s1).view_of("missing") == -1);
}

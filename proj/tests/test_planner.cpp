#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "lsk/planner.hpp"
#include "oracles.hpp"

using namespace lsk;

TEST_CASE("receptive_field recursion") {
  const std::vector<KernelSpec> two = {{5, 1}, {7, 3}};
  CHECK(receptive_field(two) == 23);
  const std::vector<KernelSpec> three = {{3, 1}, {5, 2}, {7, 3}};
  CHECK(receptive_field(three) == 29);
  for (int k : {1, 3, 5, 23}) {
    const std::vector<KernelSpec> single = {{k, 1}};
    CHECK(receptive_field(single) == k);
  }
  CHECK(receptive_field_prefixes(three) == std::vector<int>{3, 11, 29});
}

TEST_CASE("validate_plan accepts the reference sequences") {
  const std::vector<KernelSpec> two = {{5, 1}, {7, 3}};
  CHECK(validate_plan(two).empty());
  const std::vector<KernelSpec> three = {{3, 1}, {5, 2}, {7, 3}};
  CHECK(validate_plan(three).empty());
}

TEST_CASE("validate_plan reports specific violations") {
  {
    const std::vector<KernelSpec> bad = {{5, 1}, {7, 6}};  // d2 > RF1 = 5
    const auto v = validate_plan(bad);
    REQUIRE(v.size() == 1);
    CHECK(v[0].rule == "d-exceeds-rf");
    CHECK(v[0].index == 1);
  }
  {
    const std::vector<KernelSpec> bad = {{5, 2}, {7, 3}};  // d1 != 1
    const auto v = validate_plan(bad);
    REQUIRE(v.size() == 1);
    CHECK(v[0].rule == "d-first-not-one");
  }
  {
    const std::vector<KernelSpec> bad = {{5, 1}, {7, 1}};  // d not increasing
    const auto v = validate_plan(bad);
    REQUIRE(!v.empty());
    CHECK(v[0].rule == "d-not-increasing");
  }
  {
    const std::vector<KernelSpec> bad = {{7, 1}, {5, 2}};  // k decreasing
    const auto v = validate_plan(bad);
    REQUIRE(!v.empty());
    CHECK(v[0].rule == "k-decreasing");
  }
  {
    const std::vector<KernelSpec> bad = {{4, 1}};
    const auto v = validate_plan(bad);
    REQUIRE(!v.empty());
    CHECK(v[0].rule == "k-even");
  }
  CHECK_THROWS_AS(DecompositionPlan::from_specs({{5, 2}}), ContractViolation);
}

TEST_CASE("cost_of_plan depthwise-only count") {
  const auto plan = DecompositionPlan::from_specs({{23, 1}});
  CostOptions opt;
  opt.channels = 64;
  opt.include_projections = false;
  opt.include_selection = false;
  const CostReport r = cost_of_plan(plan, opt);
  CHECK(r.params_without_bias == 64 * 23 * 23);
  CHECK(r.params_without_bias == 33856);
  CHECK(r.params_with_bias == 33856 + 64);
}

TEST_CASE("cost_of_plan tiny full module count") {
  const auto plan = DecompositionPlan::from_specs({{1, 1}});
  CostOptions opt;
  opt.channels = 1;
  const CostReport r = cost_of_plan(plan, opt);
  // dw 1 + proj 1 + select 2*7*7*1 + fuse 1
  CHECK(r.params_without_bias == 1 + 1 + 98 + 1);
}

TEST_CASE("cost report aggregates equal ledger sums") {
  const auto plan = DecompositionPlan::from_specs({{5, 1}, {7, 3}});
  CostOptions opt;
  const CostReport r = cost_of_plan(plan, opt);
  i64 wsum = 0, bsum = 0, fsum = 0;
  for (const CostLine& line : r.ledger) {
    wsum += line.weight_params;
    bsum += line.bias_params;
    fsum += line.flops;
  }
  CHECK(r.params_without_bias == wsum);
  CHECK(r.params_with_bias == wsum + bsum);
  CHECK(r.flops == fsum);
}

TEST_CASE("flop convention: flops = weight params x H x W per conv line") {
  const auto plan = DecompositionPlan::from_specs({{5, 1}, {7, 3}});
  CostOptions opt;
  opt.height = 1024;
  opt.width = 1024;
  const CostReport r = cost_of_plan(plan, opt);
  for (const CostLine& line : r.ledger)
    CHECK(line.flops == line.weight_params * 1024 * 1024);
}

TEST_CASE("table-3 reconciliation ratios under the reference-impl convention") {
  // the published counts follow the reference code, which projects branches
  // to half width; the single-kernel/decomposed parameter ratios must land
  // in the documented bands
  CostOptions opt;
  opt.channels = 64;
  opt.branch_channels = 32;
  const CostReport single23 = cost_of_plan(DecompositionPlan::from_specs({{23, 1}}), opt);
  const CostReport dec23 =
      cost_of_plan(DecompositionPlan::from_specs({{5, 1}, {7, 3}}), opt);
  const double r23 = static_cast<double>(single23.params_without_bias) /
                     static_cast<double>(dec23.params_without_bias);
  CHECK(r23 > 2.7);
  CHECK(r23 < 4.5);

  const CostReport single29 = cost_of_plan(DecompositionPlan::from_specs({{29, 1}}), opt);
  const CostReport dec29 =
      cost_of_plan(DecompositionPlan::from_specs({{3, 1}, {5, 2}, {7, 3}}), opt);
  const double r29 = static_cast<double>(single29.params_without_bias) /
                     static_cast<double>(dec29.params_without_bias);
  CHECK(r29 > 4.0);
  CHECK(r29 < 6.7);
}

TEST_CASE("search finds the published RF-23 decomposition") {
  SearchQuery q;
  q.target_rf = 23;
  q.max_branches = 2;
  q.k_candidates = {3, 5, 7};
  const auto results = search_decompositions(q);
  const auto expect = DecompositionPlan::from_specs({{5, 1}, {7, 3}});
  const bool found = std::any_of(results.begin(), results.end(), [&](const SearchResult& r) {
    return r.plan.specs == expect.specs;
  });
  CHECK(found);
}

TEST_CASE("search forced singleton") {
  SearchQuery q;
  q.target_rf = 3;
  q.max_branches = 1;
  const auto results = search_decompositions(q);
  REQUIRE(results.size() == 1);
  CHECK(results[0].plan.specs == std::vector<KernelSpec>{{3, 1}});
}

TEST_CASE("search results are closed under validate_plan") {
  SearchQuery q;
  q.target_rf = 29;
  q.max_branches = 3;
  const auto results = search_decompositions(q);
  CHECK(!results.empty());
  for (const SearchResult& r : results) {
    CHECK(validate_plan(r.plan.specs).empty());
    CHECK(r.plan.total_rf() == 29);
  }
}

TEST_CASE("search matches an independent exhaustive enumerator") {
  SearchQuery q;
  q.target_rf = 29;
  q.max_branches = 3;
  q.k_candidates = {3, 5, 7, 9};
  const auto results = search_decompositions(q);

  // second enumeration with an unrelated loop structure: breadth-first over
  // an explicit frontier instead of recursion
  struct Partial {
    std::vector<KernelSpec> specs;
    int rf;
  };
  std::vector<Partial> frontier = {{{}, 0}};
  std::set<std::vector<std::pair<int, int>>> expected;
  for (int depth = 0; depth < q.max_branches; ++depth) {
    std::vector<Partial> next;
    for (const Partial& p : frontier) {
      for (int k : q.k_candidates) {
        if (!p.specs.empty() && k < p.specs.back().k) continue;
        const int d_lo = p.specs.empty() ? 1 : p.specs.back().d + 1;
        const int d_hi = p.specs.empty() ? 1 : p.rf;
        for (int d = d_lo; d <= d_hi; ++d) {
          const int rf = p.specs.empty() ? k : d * (k - 1) + p.rf;
          if (rf > q.target_rf) continue;
          Partial ext = p;
          ext.specs.push_back({k, d});
          ext.rf = rf;
          if (rf == q.target_rf) {
            std::vector<std::pair<int, int>> key;
            for (const KernelSpec& s : ext.specs) key.emplace_back(s.k, s.d);
            expected.insert(key);
          }
          next.push_back(std::move(ext));
        }
      }
    }
    frontier = std::move(next);
  }

  std::set<std::vector<std::pair<int, int>>> got;
  for (const SearchResult& r : results) {
    std::vector<std::pair<int, int>> key;
    for (const KernelSpec& s : r.plan.specs) key.emplace_back(s.k, s.d);
    got.insert(key);
  }
  CHECK(got == expected);

  // ranking: strictly non-decreasing objective down the list
  for (std::size_t i = 1; i < results.size(); ++i)
    CHECK(results[i - 1].cost.params_without_bias <= results[i].cost.params_without_bias);
}

TEST_CASE("adding a branch with k > 1 strictly increases RF") {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<KernelSpec> specs = {{1 + 2 * static_cast<int>(rng.next_u64() % 4), 1}};
    int rf = specs[0].k;
    for (int ext = 0; ext < 3; ++ext) {
      const int d = specs.back().d + 1;
      if (d > rf) break;
      const int k = specs.back().k + 2 * static_cast<int>(rng.next_u64() % 3);
      if (k <= 1) continue;
      specs.push_back({k, d});
      const int new_rf = receptive_field(specs);
      CHECK(new_rf > rf);
      rf = new_rf;
    }
  }
}

TEST_CASE("search with unreachable target is empty, not an error") {
  SearchQuery q;
  q.target_rf = 4;  // even RF unreachable from odd kernels with d1=1
  q.max_branches = 2;
  q.k_candidates = {3};
  CHECK(search_decompositions(q).empty());
}

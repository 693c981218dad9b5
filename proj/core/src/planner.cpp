#include "lsk/planner.hpp"

#include <algorithm>

namespace lsk {

std::vector<int> receptive_field_prefixes(std::span<const KernelSpec> specs) {
  require(!specs.empty(), "receptive_field: plan must be non-empty");
  std::vector<int> rf;
  rf.reserve(specs.size());
  int acc = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    acc = i == 0 ? specs[i].k : specs[i].d * (specs[i].k - 1) + acc;
    rf.push_back(acc);
  }
  return rf;
}

int receptive_field(std::span<const KernelSpec> specs) {
  return receptive_field_prefixes(specs).back();
}

std::vector<PlanViolation> validate_plan(std::span<const KernelSpec> specs) {
  std::vector<PlanViolation> out;
  auto add = [&out](int idx, std::string rule, std::string msg) {
    out.push_back({idx, std::move(rule), std::move(msg)});
  };
  if (specs.empty()) {
    add(0, "empty", "plan has no kernel specs");
    return out;
  }
  int rf_prev = 0;
  for (int i = 0; i < static_cast<int>(specs.size()); ++i) {
    const KernelSpec s = specs[static_cast<std::size_t>(i)];
    if (s.k < 1) add(i, "k-nonpositive", "k_" + std::to_string(i + 1) + " = " + std::to_string(s.k) + " must be >= 1");
    if (s.k % 2 == 0) add(i, "k-even", "k_" + std::to_string(i + 1) + " = " + std::to_string(s.k) + " must be odd");
    if (s.d < 1) add(i, "d-nonpositive", "d_" + std::to_string(i + 1) + " = " + std::to_string(s.d) + " must be >= 1");
    if (i == 0) {
      if (s.d != 1) add(i, "d-first-not-one", "d_1 = " + std::to_string(s.d) + " must be 1");
      rf_prev = s.k;
      continue;
    }
    const KernelSpec prev = specs[static_cast<std::size_t>(i - 1)];
    if (s.k < prev.k)
      add(i, "k-decreasing", "k_" + std::to_string(i + 1) + " = " + std::to_string(s.k) +
                                 " must be >= k_" + std::to_string(i) + " = " +
                                 std::to_string(prev.k));
    if (s.d <= prev.d)
      add(i, "d-not-increasing", "d_" + std::to_string(i + 1) + " = " + std::to_string(s.d) +
                                     " must exceed d_" + std::to_string(i) + " = " +
                                     std::to_string(prev.d));
    if (s.d > rf_prev)
      add(i, "d-exceeds-rf", "d_" + std::to_string(i + 1) + " = " + std::to_string(s.d) +
                                 " must be <= RF_" + std::to_string(i) + " = " +
                                 std::to_string(rf_prev) + " (would leave gaps)");
    rf_prev = s.d * (s.k - 1) + rf_prev;
  }
  return out;
}

DecompositionPlan DecompositionPlan::from_specs(std::vector<KernelSpec> specs) {
  const auto violations = validate_plan(specs);
  if (!violations.empty()) {
    std::string msg = "invalid decomposition plan:";
    for (const auto& v : violations) msg += " [" + v.rule + "] " + v.message + ";";
    fail_contract(msg);
  }
  DecompositionPlan p;
  p.rf = receptive_field_prefixes(specs);
  p.specs = std::move(specs);
  return p;
}

std::string DecompositionPlan::str() const {
  std::string s;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (i > 0) s += "->";
    s += "(" + std::to_string(specs[i].k) + "," + std::to_string(specs[i].d) + ")";
  }
  return s;
}

void CostReport::add(CostLine line) {
  params_without_bias += line.weight_params;
  params_with_bias += line.weight_params + line.bias_params;
  flops += line.flops;
  ledger.push_back(std::move(line));
}

CostReport cost_of_plan(const DecompositionPlan& plan, const CostOptions& opt) {
  require(opt.channels >= 1 && opt.height >= 1 && opt.width >= 1,
          "cost_of_plan: channels and spatial dims must be >= 1");
  require(plan.branches() >= 1, "cost_of_plan: plan must be non-empty");
  const i64 C = opt.channels;
  const i64 Cb = opt.branch_width();
  const i64 hw = static_cast<i64>(opt.height) * opt.width;
  const i64 N = plan.branches();

  CostReport r;
  for (i64 i = 0; i < N; ++i) {
    const KernelSpec s = plan.specs[static_cast<std::size_t>(i)];
    const i64 wp = C * s.k * s.k;  // depthwise: one k*k filter per channel
    r.add({"dw." + std::to_string(i) + " (k=" + std::to_string(s.k) +
               ",d=" + std::to_string(s.d) + ")",
           wp, C, wp * hw, ""});
  }
  if (opt.include_projections) {
    for (i64 i = 0; i < N; ++i) {
      const i64 wp = C * Cb;
      r.add({"proj." + std::to_string(i), wp, Cb, wp * hw, "1x1"});
    }
  }
  if (opt.include_selection) {
    const i64 pc = opt.pooled_channels();
    const i64 sk = opt.selection_kernel;
    const i64 sel = pc * sk * sk * N;
    r.add({"select", sel, N, sel * hw,
           std::to_string(pc) + "->" + std::to_string(N) + ", k=" + std::to_string(sk)});
    const i64 fuse = Cb * C;
    r.add({"fuse", fuse, C, fuse * hw, "1x1"});
  }
  return r;
}

std::vector<int> default_k_candidates() {
  std::vector<int> ks;
  for (int k = 1; k <= 31; k += 2) ks.push_back(k);
  return ks;
}

namespace {

void enumerate_plans(const SearchQuery& q, const std::vector<int>& cands,
                     std::vector<KernelSpec>& seq, int rf,
                     std::vector<std::vector<KernelSpec>>& found) {
  if (rf == q.target_rf && !seq.empty()) found.push_back(seq);
  if (static_cast<int>(seq.size()) >= q.max_branches) return;
  for (int k : cands) {
    if (!seq.empty() && k < seq.back().k) continue;
    if (seq.empty()) {
      if (k > q.target_rf || k > q.max_rf) continue;
      seq.push_back({k, 1});
      enumerate_plans(q, cands, seq, k, found);
      seq.pop_back();
    } else {
      for (int d = seq.back().d + 1; d <= rf; ++d) {
        const int next_rf = d * (k - 1) + rf;
        if (next_rf > q.target_rf || next_rf > q.max_rf) break;  // grows with d
        seq.push_back({k, d});
        enumerate_plans(q, cands, seq, next_rf, found);
        seq.pop_back();
      }
    }
  }
}

}  // namespace

std::vector<SearchResult> search_decompositions(const SearchQuery& q) {
  require(q.target_rf >= 1, "search: target_rf must be >= 1");
  require(q.max_branches >= 1, "search: max_branches must be >= 1");
  std::vector<int> cands = q.k_candidates.empty() ? default_k_candidates() : q.k_candidates;
  require(!cands.empty(), "search: kernel candidate set must be non-empty");
  for (int k : cands)
    require(k >= 1 && k % 2 == 1, "search: kernel candidates must be odd, got " +
                                      std::to_string(k));
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
  require(q.target_rf >= cands.front(), "search: target_rf " + std::to_string(q.target_rf) +
                                            " is below the smallest kernel candidate " +
                                            std::to_string(cands.front()));

  std::vector<std::vector<KernelSpec>> found;
  std::vector<KernelSpec> seq;
  enumerate_plans(q, cands, seq, 0, found);

  std::vector<SearchResult> results;
  results.reserve(found.size());
  for (auto& specs : found) {
    DecompositionPlan plan = DecompositionPlan::from_specs(std::move(specs));
    CostReport cost = cost_of_plan(plan, q.cost);
    results.push_back({std::move(plan), std::move(cost)});
  }

  auto key = [&q](const SearchResult& r) {
    return q.objective == CostObjective::kMinParams ? r.cost.params_without_bias : r.cost.flops;
  };
  auto lex_less = [](const DecompositionPlan& a, const DecompositionPlan& b) {
    const std::size_t m = std::min(a.specs.size(), b.specs.size());
    for (std::size_t i = 0; i < m; ++i) {
      if (a.specs[i].k != b.specs[i].k) return a.specs[i].k < b.specs[i].k;
      if (a.specs[i].d != b.specs[i].d) return a.specs[i].d < b.specs[i].d;
    }
    return a.specs.size() < b.specs.size();
  };
  std::sort(results.begin(), results.end(), [&](const SearchResult& a, const SearchResult& b) {
    const i64 ka = key(a), kb = key(b);
    if (ka != kb) return ka < kb;
    if (a.plan.branches() != b.plan.branches()) return a.plan.branches() < b.plan.branches();
    return lex_less(a.plan, b.plan);
  });
  return results;
}

}  // namespace lsk

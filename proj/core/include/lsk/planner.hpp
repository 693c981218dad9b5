#pragma once

#include <span>
#include <string>
#include <vector>

#include "lsk/nn_ops.hpp"

namespace lsk {

// One depthwise stage of a decomposed large kernel: size k (odd), dilation d.
struct KernelSpec {
  int k = 1;
  int d = 1;
  bool operator==(const KernelSpec&) const = default;
};

// Receptive field of the serial chain: rf[0] = k0, rf[i] = d_i*(k_i-1) + rf[i-1].
std::vector<int> receptive_field_prefixes(std::span<const KernelSpec> specs);
int receptive_field(std::span<const KernelSpec> specs);

struct PlanViolation {
  int index = 0;        // position in the spec list the violation is reported at
  std::string rule;     // machine-readable tag, e.g. "d-first-not-one"
  std::string message;
};

// Checks the decomposition constraints:
//   k_{i-1} <= k_i, all k odd and >= 1,
//   d_1 = 1, d_{i-1} < d_i <= RF_{i-1}, all d >= 1.
// Violations are data, not errors; an empty result means the plan is legal.
std::vector<PlanViolation> validate_plan(std::span<const KernelSpec> specs);

// A validated spec sequence plus its cumulative receptive fields.
struct DecompositionPlan {
  std::vector<KernelSpec> specs;
  std::vector<int> rf;

  // Validates and computes rf; throws ContractViolation listing every
  // violated constraint.
  static DecompositionPlan from_specs(std::vector<KernelSpec> specs);

  int branches() const { return static_cast<int>(specs.size()); }
  int total_rf() const { return rf.empty() ? 0 : rf.back(); }
  std::string str() const;  // "(5,1)->(7,3)"
};

struct CostLine {
  std::string name;
  i64 weight_params = 0;  // parameters excluding bias
  i64 bias_params = 0;
  i64 flops = 0;
  std::string note;
};

struct CostReport {
  i64 params_without_bias = 0;
  i64 params_with_bias = 0;
  i64 flops = 0;
  std::vector<CostLine> ledger;

  void add(CostLine line);
};

// Counting conventions for the analytic model. FLOPs count one
// multiply-accumulate as one FLOP: flops(conv) = weight_params * H_out * W_out
// at the declared input size. Non-conv items are itemized with zero FLOPs.
struct CostOptions {
  int channels = 64;
  int height = 1024;  // declared input size for the FLOP column
  int width = 1024;
  bool include_projections = true;  // per-branch 1x1 convs
  bool include_selection = true;    // pooled->N selection conv and the fusion conv
  int selection_kernel = 7;
  PoolMode pooling = PoolMode::kBoth;
  // Channel width of the per-branch projections and the fusion input.
  // 0 means `channels`. The published efficiency-table counts follow the
  // reference LSKNet code, which projects to channels/2; pass that to
  // reconcile.
  int branch_channels = 0;

  int branch_width() const { return branch_channels > 0 ? branch_channels : channels; }
  int pooled_channels() const { return pooling == PoolMode::kBoth ? 2 : 1; }
};

CostReport cost_of_plan(const DecompositionPlan& plan, const CostOptions& opt);

enum class CostObjective { kMinParams, kMinFlops };

struct SearchQuery {
  int target_rf = 23;
  int max_branches = 2;
  std::vector<int> k_candidates;  // odd kernel sizes; empty = {1,3,...,31}
  CostObjective objective = CostObjective::kMinParams;
  CostOptions cost;
  int max_rf = 64;  // safety cap on intermediate receptive fields
};

struct SearchResult {
  DecompositionPlan plan;
  CostReport cost;
};

// Exhaustive enumeration of legal plans with RF exactly target_rf and at most
// max_branches stages, ranked by the objective; ties go to fewer branches,
// then lexicographic (k, d) order. An empty result is a valid outcome.
std::vector<SearchResult> search_decompositions(const SearchQuery& q);

std::vector<int> default_k_candidates();  // {1, 3, ..., 31}

}  // namespace lsk

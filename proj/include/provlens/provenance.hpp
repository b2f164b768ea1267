#pragma once

// Provenance-tracked datasets: variables, assignments, conjunctive
// provenance polynomials, and the canonical pipeline constructors
// (map, fork-by-provider, one-to-many star join).

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace provlens {

using VarId = int;
using Label = int;

enum class PipelineClass { Map, Fork, Join };

const char* to_string(PipelineClass c);

// Ordered set of distinct variable identifiers. The position of a name in
// `names` is its rank in the global variable order used by every diagram.
class VariableSet {
 public:
  VariableSet() = default;
  explicit VariableSet(std::vector<std::string> names);

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(VarId v) const { return names_.at(v); }
  const std::vector<std::string>& names() const { return names_; }
  VarId index_of(const std::string& name) const;

 private:
  std::vector<std::string> names_;
};

// Total mapping variable -> {0,1} over a VariableSet.
struct Assignment {
  std::vector<std::uint8_t> bits;

  static Assignment zeros(int n) { return Assignment{std::vector<std::uint8_t>(n, 0)}; }
  static Assignment ones(int n) { return Assignment{std::vector<std::uint8_t>(n, 1)}; }
  static Assignment from_mask(std::uint64_t mask, int n);

  bool get(VarId v) const { return bits.at(v) != 0; }
  void set(VarId v, bool b) { bits.at(v) = b ? 1 : 0; }
  int support_size() const;
  // True when this assignment is pointwise <= other.
  bool dominated_by(const Assignment& other) const;
};

// Conjunction of variables (set semantics; duplicates collapse).
struct ProvenancePolynomial {
  std::vector<VarId> vars;  // sorted, unique, non-empty

  static ProvenancePolynomial of(std::vector<VarId> vs);
};

bool eval_polynomial(const ProvenancePolynomial& poly, const Assignment& v);

struct TrackedTuple {
  std::vector<double> features;
  Label label = 0;
  ProvenancePolynomial provenance;
  std::string source_id;
  int tiebreak_rank = 0;
};

struct TrackedDataset {
  std::vector<TrackedTuple> tuples;
  VariableSet variables;
  PipelineClass pipeline_class = PipelineClass::Map;
  int num_labels = 2;

  // Join-class structure: role of each variable and the fact variables
  // grouped under each dimension variable. Empty for map/fork.
  std::vector<bool> is_dim_var;
  std::vector<std::vector<VarId>> facts_of_dim;  // indexed by VarId, empty for facts

  // Tuple indices associated with each variable, in tiebreak order.
  std::vector<std::vector<int>> tuples_of_var() const;

  void validate() const;  // checks class constraints, throws on violation
};

// Tuple indices of d whose polynomials evaluate true under v, in
// tiebreak_rank order.
std::vector<int> candidate_dataset(const TrackedDataset& d, const Assignment& v);

// ---------------------------------------------------------------------------
// Pipeline construction

struct InputTable {
  std::vector<std::vector<double>> features;
  std::vector<Label> labels;           // empty for dimension tables
  std::vector<long long> keys;         // fact: dim reference; dim: own key
  std::vector<std::string> ids;        // optional stable row ids
};

struct PipelineOp {
  enum class Kind { Identity, StandardScaler, LogScaler, ForkByProvider, Join };
  Kind kind = Kind::Identity;
  // frozen statistics for StandardScaler
  std::vector<double> means, stds;
  bool frozen = false;
  int group_count = 0;  // ForkByProvider
};

struct PipelineSpec {
  std::vector<PipelineOp> ops;
  int num_labels = 2;

  static PipelineSpec identity_map(int num_labels = 2);
  static PipelineSpec fork(int group_count, int num_labels = 2);
  static PipelineSpec star_join(int num_labels = 2);
};

// Computes the reduce-side statistics of a scaler on the full input once.
// The returned operator applies only the tuple-at-a-time map step.
PipelineOp freeze_reduce(PipelineOp::Kind kind, const std::vector<std::vector<double>>& full_input);

// Applies a frozen (or stateless) map operator to a single feature row.
std::vector<double> apply_map_op(const PipelineOp& op, const std::vector<double>& row);

// Builds a TrackedDataset from relational inputs. For Join, `dim` must be
// present and every fact key must match exactly one dimension row.
TrackedDataset apply_pipeline(const PipelineSpec& spec, const InputTable& primary,
                              const InputTable* dim = nullptr);

}  // namespace provlens

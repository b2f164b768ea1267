#pragma once

// Shapley value computation over provenance-tracked datasets with K-NN
// utilities. Paths:
//   - diagram route: per-boundary-pair decision diagrams, restriction,
//     summation, and model counting (exercises the add-engine end to end)
//   - quadrature route: the inverse-binomial kernel rewritten as an integral
//     over an inclusion probability, evaluated exactly with Gauss-Legendre
//     points and per-component tally-distribution dynamic programs
//   - map fast path: O(N^2) closed-form boundary-replacement sums
//   - 1-NN closed forms for map and fork
//   - truncated Monte Carlo permutation sampling
//   - brute-force enumeration (test oracle)

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "provlens/add.hpp"
#include "provlens/knn.hpp"
#include "provlens/provenance.hpp"

namespace provlens {

struct ShapleyReport {
  std::vector<double> values;  // indexed by VarId
  std::string method;
  int K = 1;
  UtilityKind utility = UtilityKind::Accuracy;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

// How a boundary-candidate diagram constrains the assignment:
//   TopK  — the target tuple is present; tally counts candidates at or above
//           it; entries with tally sum = K mean it sits exactly at rank K.
//   Last  — additionally no candidate below the target may be present, so
//           tally sums < K mean the target is the final (underfull) boundary.
//   Empty — no target; any produced tuple at all maps to invalid, so only
//           assignments with an empty candidate set stay finite.
enum class CompileMode { TopK, Last, Empty };

struct CompileOptions {
  CompileMode mode = CompileMode::TopK;
  bool use_gamma_prime_slot = false;  // tally into the second slot
  bool track_alpha = true;            // +1 support on every high edge
  int alpha_cap = -1;                 // default |A|
  int tally_cap = -1;                 // default K
};

// Builds the boundary diagram for tuple t_idx (ignored in Empty mode) over
// the dataset's full variable order. Diagram shape per pipeline class:
// map/fork — one chain node per variable; join — per dimension component a
// decision node with two parallel fact chains.
Add compile_add(const TrackedDataset& d, int t_idx, const ScoredDataset& s,
                const CompileOptions& opt);

// Joint boundary-pair counts: number of assignments over A \ {a_i} with
// support size alpha for which t is the 0-side boundary-candidate value
// (gamma) and t_prime the 1-side one (gamma_prime). Formed as
// restrict(N_t, a_i, 0) + restrict(N_t', a_i, 1) and counted.
struct OracleTable {
  Add::CountTable counts;
  std::uint64_t invalid_count = 0;
};
OracleTable counting_oracle(const TrackedDataset& d, VarId a_i, int t_idx, int t_prime_idx,
                            const ScoredDataset& s, int K,
                            CompileMode mode0 = CompileMode::TopK,
                            CompileMode mode1 = CompileMode::TopK);

enum class GeneralRoute { Auto, Diagram, Quadrature };

struct ShapleyOptions {
  GeneralRoute route = GeneralRoute::Auto;
  int threads = 1;                  // 1 = serial reference implementation
  int diagram_route_max_vars = 14;  // Auto switches to Quadrature above this
};

ShapleyReport shapley_knn_general(const TrackedDataset& d,
                                  const std::vector<ValidationTuple>& val_set, int K,
                                  const TupleWiseUtility& ut,
                                  const ShapleyOptions& opt = {});

// Map-class fast path; identical values to the general route.
ShapleyReport shapley_knn_map_fast(const TrackedDataset& d,
                                   const std::vector<ValidationTuple>& val_set, int K,
                                   const TupleWiseUtility& ut, const ShapleyOptions& opt = {});

// 1-NN closed forms.
ShapleyReport shapley_1nn_map(const TrackedDataset& d,
                              const std::vector<ValidationTuple>& val_set,
                              const TupleWiseUtility& ut, const ShapleyOptions& opt = {});
ShapleyReport shapley_1nn_fork(const TrackedDataset& d,
                               const std::vector<ValidationTuple>& val_set,
                               const TupleWiseUtility& ut, const ShapleyOptions& opt = {});

struct TmcOptions {
  int iterations = 100;
  double truncation_tolerance = 0.001;  // <= 0 disables truncation
  std::uint64_t seed = 0;
  int threads = 1;
};
ShapleyReport tmc_shapley(const TrackedDataset& d, const std::vector<ValidationTuple>& val_set,
                          int K, const TupleWiseUtility& ut, const TmcOptions& opt);

// Exact enumeration over all 2^|A| coalitions; refuses above max_vars.
ShapleyReport brute_force_shapley(const TrackedDataset& d,
                                  const std::vector<ValidationTuple>& val_set, int K,
                                  const TupleWiseUtility& ut, int max_vars = 20);

// Dispatches to the best exact path for the dataset's class and K.
ShapleyReport shapley_auto(const TrackedDataset& d, const std::vector<ValidationTuple>& val_set,
                           int K, const TupleWiseUtility& ut, const ShapleyOptions& opt = {});

}  // namespace provlens

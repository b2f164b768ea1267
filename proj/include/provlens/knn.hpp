#pragma once

// Similarity scoring against a validation tuple, top-K boundary and tally
// machinery, and additive utilities (accuracy family plus a frozen
// equalized-odds-difference approximation).

#include <functional>
#include <optional>
#include <vector>

#include "provlens/add.hpp"
#include "provlens/provenance.hpp"

namespace provlens {

struct ValidationTuple {
  std::vector<double> features;
  Label label = 0;
  int group = -1;  // sensitive group; -1 = absent
};

// A dataset scored against one validation tuple. `by_rank` lists tuple
// indices sorted by (similarity descending, tiebreak_rank ascending) — a
// strict total order even under score ties. `position[i]` inverts it.
struct ScoredDataset {
  const TrackedDataset* base = nullptr;
  std::vector<double> scores;
  std::vector<int> by_rank;
  std::vector<int> position;
};

ScoredDataset score(const TrackedDataset& d, const ValidationTuple& t_val);

// Tuple index at position min(K, |candidates|) of the candidate similarity
// order, or nullopt when no candidates exist.
std::optional<int> boundary_top_k(const ScoredDataset& s, const Assignment& v, int K);

// Per-label counts of candidates at or above the boundary in the strict
// order (position <= boundary position).
TallyVector tally(const ScoredDataset& s, const Assignment& v, int boundary);

// Majority label of a tally; ties go to the smallest label index.
Label label_from_tally(const TallyVector& t);

enum class UtilityKind { Accuracy, Fnr, Fpr, Tpr, Tnr, EqoddsDiff };
const char* to_string(UtilityKind k);
UtilityKind utility_kind_from_string(const std::string& s);

struct TupleWiseUtility {
  UtilityKind kind = UtilityKind::Accuracy;
  int num_labels = 2;
  double w = 1.0;
  std::function<double(Label, const ValidationTuple&)> u_T;

  // empty-candidate convention: average u_T over all labels, or a fixed one
  bool empty_uniform = true;
  Label empty_label = 0;

  double empty_value(const ValidationTuple& t_val) const;
};

double knn_utility(const ScoredDataset& s, const Assignment& v, int K,
                   const TupleWiseUtility& ut, const ValidationTuple& t_val);

double aggregate_utility(const TrackedDataset& d, const Assignment& v,
                         const std::vector<ValidationTuple>& val_set, int K,
                         const TupleWiseUtility& ut);

// Builds a utility decomposition. EqoddsDiff freezes, using the K-NN
// predictions of the full training set on val_set: (i) whether the
// true-positive-rate or false-positive-rate spread dominates, and (ii) the
// extremal group pair; per-group normalizers are folded into u_T with w = 1.
TupleWiseUtility make_utility(UtilityKind kind, const std::vector<ValidationTuple>& val_set,
                              const TrackedDataset& full_training, int K);

// Direct (non-additive) equalized-odds difference of given predictions on
// the validation set; the frozen approximation's reference point.
double eqodds_diff_direct(const std::vector<Label>& predictions,
                          const std::vector<ValidationTuple>& val_set);

// K-NN prediction with all tuples present; nullopt on an empty dataset.
std::optional<Label> knn_predict_full(const TrackedDataset& d, const ValidationTuple& t_val,
                                      int K);

}  // namespace provlens

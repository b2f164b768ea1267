#include "provlens/knn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace provlens {

ScoredDataset score(const TrackedDataset& d, const ValidationTuple& t_val) {
  ScoredDataset s;
  s.base = &d;
  s.scores.resize(d.tuples.size());
  for (std::size_t i = 0; i < d.tuples.size(); ++i) {
    const auto& f = d.tuples[i].features;
    if (f.size() != t_val.features.size())
      throw std::invalid_argument("feature dimension mismatch in scoring");
    double dist2 = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) {
      const double delta = f[j] - t_val.features[j];
      dist2 += delta * delta;
    }
    s.scores[i] = -dist2;
  }
  s.by_rank.resize(d.tuples.size());
  std::iota(s.by_rank.begin(), s.by_rank.end(), 0);
  std::sort(s.by_rank.begin(), s.by_rank.end(), [&](int a, int b) {
    if (s.scores[a] != s.scores[b]) return s.scores[a] > s.scores[b];
    return d.tuples[a].tiebreak_rank < d.tuples[b].tiebreak_rank;
  });
  s.position.resize(d.tuples.size());
  for (std::size_t p = 0; p < s.by_rank.size(); ++p) s.position[s.by_rank[p]] = static_cast<int>(p);
  return s;
}

std::optional<int> boundary_top_k(const ScoredDataset& s, const Assignment& v, int K) {
  if (K < 1) throw std::invalid_argument("K must be positive");
  int seen = 0, last = -1;
  for (int idx : s.by_rank) {
    if (!eval_polynomial(s.base->tuples[idx].provenance, v)) continue;
    last = idx;
    if (++seen == K) return idx;
  }
  if (seen == 0) return std::nullopt;
  return last;  // fewer than K candidates: last (least similar) one
}

TallyVector tally(const ScoredDataset& s, const Assignment& v, int boundary) {
  if (!eval_polynomial(s.base->tuples[boundary].provenance, v))
    throw std::invalid_argument("boundary tuple is not a candidate");
  TallyVector t(s.base->num_labels, 0);
  const int bpos = s.position[boundary];
  for (int p = 0; p <= bpos; ++p) {
    const int idx = s.by_rank[p];
    if (eval_polynomial(s.base->tuples[idx].provenance, v)) t[s.base->tuples[idx].label]++;
  }
  return t;
}

Label label_from_tally(const TallyVector& t) {
  Label best = 0;
  for (std::size_t y = 1; y < t.size(); ++y)
    if (t[y] > t[best]) best = static_cast<Label>(y);
  return best;
}

const char* to_string(UtilityKind k) {
  switch (k) {
    case UtilityKind::Accuracy: return "accuracy";
    case UtilityKind::Fnr: return "fnr";
    case UtilityKind::Fpr: return "fpr";
    case UtilityKind::Tpr: return "tpr";
    case UtilityKind::Tnr: return "tnr";
    case UtilityKind::EqoddsDiff: return "eqodds_diff";
  }
  return "?";
}

UtilityKind utility_kind_from_string(const std::string& s) {
  for (UtilityKind k : {UtilityKind::Accuracy, UtilityKind::Fnr, UtilityKind::Fpr,
                        UtilityKind::Tpr, UtilityKind::Tnr, UtilityKind::EqoddsDiff})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown utility kind: " + s);
}

double TupleWiseUtility::empty_value(const ValidationTuple& t_val) const {
  if (!empty_uniform) return u_T(empty_label, t_val);
  double acc = 0.0;
  for (Label y = 0; y < num_labels; ++y) acc += u_T(y, t_val);
  return acc / num_labels;
}

double knn_utility(const ScoredDataset& s, const Assignment& v, int K,
                   const TupleWiseUtility& ut, const ValidationTuple& t_val) {
  const auto b = boundary_top_k(s, v, K);
  if (!b) return ut.empty_value(t_val);
  return ut.u_T(label_from_tally(tally(s, v, *b)), t_val);
}

double aggregate_utility(const TrackedDataset& d, const Assignment& v,
                         const std::vector<ValidationTuple>& val_set, int K,
                         const TupleWiseUtility& ut) {
  double acc = 0.0;
  for (const auto& t_val : val_set) acc += knn_utility(score(d, t_val), v, K, ut, t_val);
  return ut.w * acc;
}

std::optional<Label> knn_predict_full(const TrackedDataset& d, const ValidationTuple& t_val,
                                      int K) {
  if (d.tuples.empty()) return std::nullopt;
  const ScoredDataset s = score(d, t_val);
  const Assignment full = Assignment::ones(d.variables.size());
  const auto b = boundary_top_k(s, full, K);
  if (!b) return std::nullopt;
  return label_from_tally(tally(s, full, *b));
}

double eqodds_diff_direct(const std::vector<Label>& predictions,
                          const std::vector<ValidationTuple>& val_set) {
  if (predictions.size() != val_set.size())
    throw std::invalid_argument("prediction/validation size mismatch");
  // per group: rates of predicting 1 among actual positives / negatives
  int max_group = -1;
  for (const auto& t : val_set) max_group = std::max(max_group, t.group);
  if (max_group < 0) throw std::invalid_argument("equalized odds requires group labels");
  std::vector<int> pos_n(max_group + 1, 0), neg_n(max_group + 1, 0);
  std::vector<int> pos_hit(max_group + 1, 0), neg_hit(max_group + 1, 0);
  for (std::size_t i = 0; i < val_set.size(); ++i) {
    const int g = val_set[i].group;
    if (g < 0) throw std::invalid_argument("validation tuple missing group label");
    if (val_set[i].label == 1) {
      pos_n[g]++;
      if (predictions[i] == 1) pos_hit[g]++;
    } else {
      neg_n[g]++;
      if (predictions[i] == 1) neg_hit[g]++;
    }
  }
  auto spread = [&](const std::vector<int>& hit, const std::vector<int>& n) {
    double lo = 2.0, hi = -1.0;
    for (int g = 0; g <= max_group; ++g) {
      if (n[g] == 0) continue;
      const double r = static_cast<double>(hit[g]) / n[g];
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    return hi >= lo ? hi - lo : 0.0;
  };
  return std::max(spread(pos_hit, pos_n), spread(neg_hit, neg_n));
}

TupleWiseUtility make_utility(UtilityKind kind, const std::vector<ValidationTuple>& val_set,
                              const TrackedDataset& full_training, int K) {
  TupleWiseUtility ut;
  ut.kind = kind;
  ut.num_labels = full_training.num_labels;
  const auto count_if_label = [&](Label y) {
    return static_cast<int>(
        std::count_if(val_set.begin(), val_set.end(),
                      [&](const ValidationTuple& t) { return t.label == y; }));
  };
  switch (kind) {
    case UtilityKind::Accuracy:
      ut.w = val_set.empty() ? 0.0 : 1.0 / static_cast<double>(val_set.size());
      ut.u_T = [](Label y, const ValidationTuple& t) { return y == t.label ? 1.0 : 0.0; };
      return ut;
    case UtilityKind::Fnr: {
      const int pos = count_if_label(1);
      ut.w = pos ? 1.0 / pos : 0.0;
      ut.u_T = [](Label y, const ValidationTuple& t) {
        return (y == 0 && t.label == 1) ? 1.0 : 0.0;
      };
      return ut;
    }
    case UtilityKind::Tpr: {
      const int pos = count_if_label(1);
      ut.w = pos ? 1.0 / pos : 0.0;
      ut.u_T = [](Label y, const ValidationTuple& t) {
        return (y == 1 && t.label == 1) ? 1.0 : 0.0;
      };
      return ut;
    }
    case UtilityKind::Fpr: {
      const int neg = count_if_label(0);
      ut.w = neg ? 1.0 / neg : 0.0;
      ut.u_T = [](Label y, const ValidationTuple& t) {
        return (y == 1 && t.label == 0) ? 1.0 : 0.0;
      };
      return ut;
    }
    case UtilityKind::Tnr: {
      const int neg = count_if_label(0);
      ut.w = neg ? 1.0 / neg : 0.0;
      ut.u_T = [](Label y, const ValidationTuple& t) {
        return (y == 0 && t.label == 0) ? 1.0 : 0.0;
      };
      return ut;
    }
    case UtilityKind::EqoddsDiff:
      break;
  }
  // Frozen equalized-odds difference. Stage 1: predict every validation
  // tuple with the full training set and find the dominant branch and
  // extremal group pair. Stage 2: an additive per-tuple difference of the
  // two groups' rates, normalizers folded in.
  if (full_training.num_labels != 2)
    throw std::invalid_argument("equalized odds utility requires binary labels");
  int max_group = -1;
  for (const auto& t : val_set) {
    if (t.group < 0) throw std::invalid_argument("equalized odds requires group labels");
    max_group = std::max(max_group, t.group);
  }
  std::vector<int> pos_n(max_group + 1, 0), neg_n(max_group + 1, 0);
  std::vector<int> pos_hit(max_group + 1, 0), neg_hit(max_group + 1, 0);
  for (const auto& t : val_set) {
    const auto pred = knn_predict_full(full_training, t, K);
    const Label p = pred.value_or(0);
    if (t.label == 1) {
      pos_n[t.group]++;
      if (p == 1) pos_hit[t.group]++;
    } else {
      neg_n[t.group]++;
      if (p == 1) neg_hit[t.group]++;
    }
  }
  auto extremal = [&](const std::vector<int>& hit, const std::vector<int>& n) {
    int gmin = -1, gmax = -1;
    double rmin = 2.0, rmax = -1.0;
    for (int g = 0; g <= max_group; ++g) {
      if (n[g] == 0) continue;
      const double r = static_cast<double>(hit[g]) / n[g];
      if (r < rmin) { rmin = r; gmin = g; }
      if (r > rmax) { rmax = r; gmax = g; }
    }
    return std::tuple<int, int, double>{gmax, gmin, gmax >= 0 ? rmax - rmin : 0.0};
  };
  const auto [tpr_gmax, tpr_gmin, tpr_spread] = extremal(pos_hit, pos_n);
  const auto [fpr_gmax, fpr_gmin, fpr_spread] = extremal(neg_hit, neg_n);
  const bool tpr_branch = tpr_spread >= fpr_spread;
  const Label branch_label = tpr_branch ? 1 : 0;  // actual label the rate conditions on
  const int gmax = tpr_branch ? tpr_gmax : fpr_gmax;
  const int gmin = tpr_branch ? tpr_gmin : fpr_gmin;
  const auto& ncond = tpr_branch ? pos_n : neg_n;
  const double inv_max = (gmax >= 0 && ncond[gmax] > 0) ? 1.0 / ncond[gmax] : 0.0;
  const double inv_min = (gmin >= 0 && ncond[gmin] > 0) ? 1.0 / ncond[gmin] : 0.0;
  ut.w = 1.0;
  ut.u_T = [branch_label, gmax, gmin, inv_max, inv_min](Label y, const ValidationTuple& t) {
    if (y != 1 || t.label != branch_label) return 0.0;
    double r = 0.0;
    if (t.group == gmax) r += inv_max;
    if (t.group == gmin) r -= inv_min;
    return r;
  };
  return ut;
}

}  // namespace provlens

#pragma once

// Ordered, full additive decision diagrams over the value set
// (support count, tally, second tally) with an absorbing invalid element.
// Evaluation sums edge increments along the path selected by an assignment;
// model counting runs a dense dynamic program over the bounded value box.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "provlens/provenance.hpp"

namespace provlens {

// Per-label counts. Fixed small vector semantics via std::vector<int>.
using TallyVector = std::vector<int>;

TallyVector one_hot_tally(int num_labels, Label y);

// Enumerates tally vectors with every component in 0..cap. Flattening is
// radix-(cap+1), label 0 least significant.
class TallyIndexer {
 public:
  TallyIndexer() = default;
  TallyIndexer(int num_labels, int cap);

  int size() const { return size_; }
  int cap() const { return cap_; }
  int num_labels() const { return num_labels_; }
  int index(const TallyVector& t) const;          // -1 if any component out of box
  TallyVector tally(int idx) const;
  int sum(int idx) const { return sums_[idx]; }

 private:
  int num_labels_ = 0, cap_ = 0, size_ = 1;
  std::vector<int> sums_;
};

struct ValueTriple {
  bool invalid = false;
  int alpha = 0;
  TallyVector gamma;        // sized num_labels, or empty meaning all-zero
  TallyVector gamma_prime;  // likewise

  static ValueTriple infinity() { return ValueTriple{true, 0, {}, {}}; }
  static ValueTriple zero() { return ValueTriple{}; }

  bool is_zero() const;
  bool operator==(const ValueTriple& o) const;
};

// Componentwise sum; invalid absorbs. No box applied here.
ValueTriple add_triples(const ValueTriple& a, const ValueTriple& b, int num_labels);

struct AddNode {
  VarId var = -1;
  int lo = -1, hi = -1;  // node index, or -1 for the sink
  ValueTriple w_lo, w_hi;
};

class Add {
 public:
  // order: diagram variables in decision order (a subset of the dataset's
  // variable set, in the global order). Caps bound the counting value box;
  // any evaluation leaving the box is treated as invalid.
  Add(std::vector<VarId> order, int num_labels, int alpha_cap, int tally_cap);

  const std::vector<VarId>& order() const { return order_; }
  int num_labels() const { return num_labels_; }
  int alpha_cap() const { return alpha_cap_; }
  int tally_cap() const { return tally_cap_; }
  int root() const { return root_; }
  const ValueTriple& root_offset() const { return root_offset_; }
  const std::vector<AddNode>& nodes() const { return nodes_; }

  int add_node(AddNode n);
  void set_root(int r) { root_ = r; }
  void set_root_offset(ValueTriple v) { root_offset_ = std::move(v); }

  ValueTriple eval(const Assignment& v) const;

  // Dense counting table over the boxed value set: counts[flat index of
  // (alpha, gamma, gamma_prime)] = number of assignments of order() variables
  // evaluating to that triple. invalid_count collects everything that left
  // the box or hit an infinite increment.
  struct CountTable {
    TallyIndexer tallies;
    int alpha_cap = 0;
    std::vector<std::uint64_t> counts;
    std::uint64_t invalid_count = 0;

    int flat(int alpha, int gamma_idx, int gamma_prime_idx) const;
    std::uint64_t at(int alpha, const TallyVector& g, const TallyVector& gp) const;
  };
  CountTable count_all() const;
  std::uint64_t count(const ValueTriple& e) const;  // e must be finite

  // Structural checks: ordered (vars strictly ascend along edges within
  // order()), full (every path visits every order() variable), acyclic.
  void check_structure() const;
  int diameter() const;  // max node count over any single variable

  std::string dump() const;  // one node per line, deterministic

 private:
  static int flat_of(const CountTable& t, const ValueTriple& e);

  std::vector<VarId> order_;
  int num_labels_, alpha_cap_, tally_cap_;
  std::vector<AddNode> nodes_;
  int root_ = -1;
  ValueTriple root_offset_;  // added to every evaluation (restrict folds here)
};

// C(chain_length, k) when e = k * per_edge for integer k in 0..chain_length,
// else 0. per_edge must be nonzero and finite.
std::uint64_t count_uniform(int chain_length, const ValueTriple& per_edge, const ValueTriple& e,
                            int num_labels);

Add restrict_var(const Add& a, VarId var, bool bit);
Add sum_adds(const Add& a, const Add& b);

}  // namespace provlens

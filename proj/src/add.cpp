#include "provlens/add.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "provlens/combinatorics.hpp"

namespace provlens {

TallyVector one_hot_tally(int num_labels, Label y) {
  TallyVector t(num_labels, 0);
  t.at(y) = 1;
  return t;
}

TallyIndexer::TallyIndexer(int num_labels, int cap) : num_labels_(num_labels), cap_(cap) {
  size_ = 1;
  for (int i = 0; i < num_labels; ++i) size_ *= (cap + 1);
  sums_.resize(size_);
  for (int idx = 0; idx < size_; ++idx) {
    int s = 0, rest = idx;
    for (int i = 0; i < num_labels; ++i) {
      s += rest % (cap + 1);
      rest /= (cap + 1);
    }
    sums_[idx] = s;
  }
}

int TallyIndexer::index(const TallyVector& t) const {
  int idx = 0, mul = 1;
  for (int i = 0; i < num_labels_; ++i) {
    const int c = i < static_cast<int>(t.size()) ? t[i] : 0;
    if (c < 0 || c > cap_) return -1;
    idx += c * mul;
    mul *= (cap_ + 1);
  }
  return idx;
}

TallyVector TallyIndexer::tally(int idx) const {
  TallyVector t(num_labels_, 0);
  for (int i = 0; i < num_labels_; ++i) {
    t[i] = idx % (cap_ + 1);
    idx /= (cap_ + 1);
  }
  return t;
}

bool ValueTriple::is_zero() const {
  if (invalid || alpha != 0) return false;
  for (int c : gamma)
    if (c != 0) return false;
  for (int c : gamma_prime)
    if (c != 0) return false;
  return true;
}

bool ValueTriple::operator==(const ValueTriple& o) const {
  if (invalid != o.invalid) return false;
  if (invalid) return true;
  if (alpha != o.alpha) return false;
  auto comp = [](const TallyVector& a, const TallyVector& b) {
    const std::size_t n = std::max(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
      const int x = i < a.size() ? a[i] : 0;
      const int y = i < b.size() ? b[i] : 0;
      if (x != y) return false;
    }
    return true;
  };
  return comp(gamma, o.gamma) && comp(gamma_prime, o.gamma_prime);
}

ValueTriple add_triples(const ValueTriple& a, const ValueTriple& b, int num_labels) {
  if (a.invalid || b.invalid) return ValueTriple::infinity();
  ValueTriple r;
  r.alpha = a.alpha + b.alpha;
  r.gamma.assign(num_labels, 0);
  r.gamma_prime.assign(num_labels, 0);
  for (int i = 0; i < num_labels; ++i) {
    r.gamma[i] = (i < static_cast<int>(a.gamma.size()) ? a.gamma[i] : 0) +
                 (i < static_cast<int>(b.gamma.size()) ? b.gamma[i] : 0);
    r.gamma_prime[i] = (i < static_cast<int>(a.gamma_prime.size()) ? a.gamma_prime[i] : 0) +
                       (i < static_cast<int>(b.gamma_prime.size()) ? b.gamma_prime[i] : 0);
  }
  return r;
}

Add::Add(std::vector<VarId> order, int num_labels, int alpha_cap, int tally_cap)
    : order_(std::move(order)), num_labels_(num_labels), alpha_cap_(alpha_cap),
      tally_cap_(tally_cap) {}

int Add::add_node(AddNode n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

namespace {

// Box check used by both eval and count: components must stay within
// [0, cap] to remain finite.
bool in_box(const ValueTriple& v, int alpha_cap, int tally_cap) {
  if (v.invalid) return false;
  if (v.alpha < 0 || v.alpha > alpha_cap) return false;
  for (int c : v.gamma)
    if (c < 0 || c > tally_cap) return false;
  for (int c : v.gamma_prime)
    if (c < 0 || c > tally_cap) return false;
  return true;
}

}  // namespace

ValueTriple Add::eval(const Assignment& v) const {
  ValueTriple acc = root_offset_;
  if (!in_box(acc, alpha_cap_, tally_cap_)) return ValueTriple::infinity();
  int cur = root_;
  while (cur != -1) {
    const AddNode& n = nodes_[cur];
    const bool bit = v.get(n.var);
    acc = add_triples(acc, bit ? n.w_hi : n.w_lo, num_labels_);
    if (!in_box(acc, alpha_cap_, tally_cap_)) return ValueTriple::infinity();
    cur = bit ? n.hi : n.lo;
  }
  return acc;
}

int Add::CountTable::flat(int alpha, int gamma_idx, int gamma_prime_idx) const {
  return (alpha * tallies.size() + gamma_idx) * tallies.size() + gamma_prime_idx;
}

std::uint64_t Add::CountTable::at(int alpha, const TallyVector& g, const TallyVector& gp) const {
  if (alpha < 0 || alpha > alpha_cap) return 0;
  const int gi = tallies.index(g), gpi = tallies.index(gp);
  if (gi < 0 || gpi < 0) return 0;
  return counts[flat(alpha, gi, gpi)];
}

Add::CountTable Add::count_all() const {
  if (static_cast<int>(order_.size()) > 62)
    throw std::invalid_argument("counting limited to 62 decision variables");
  CountTable out;
  out.tallies = TallyIndexer(num_labels_, tally_cap_);
  out.alpha_cap = alpha_cap_;
  const int G = out.tallies.size();
  const int E = (alpha_cap_ + 1) * G * G;
  out.counts.assign(E, 0);

  const std::uint64_t total = order_.empty() ? 1 : (std::uint64_t{1} << order_.size());

  std::unordered_map<VarId, int> level;
  for (std::size_t i = 0; i < order_.size(); ++i) level[order_[i]] = static_cast<int>(i);

  // Per-tally-index shift map for an increment's gamma component: adding a
  // fixed tally in the radix encoding, -1 when a component leaves the box.
  auto make_shift = [&](const TallyVector& inc) {
    std::vector<int> shift(G);
    for (int idx = 0; idx < G; ++idx) {
      TallyVector t = out.tallies.tally(idx);
      bool ok = true;
      for (int i = 0; i < num_labels_; ++i) {
        t[i] += i < static_cast<int>(inc.size()) ? inc[i] : 0;
        if (t[i] > tally_cap_) ok = false;
      }
      shift[idx] = ok ? out.tallies.index(t) : -1;
    }
    return shift;
  };

  if (root_ == -1) {
    // Constant diagram: the single (empty) assignment evaluates to the offset.
    if (in_box(root_offset_, alpha_cap_, tally_cap_)) {
      out.counts[flat_of(out, root_offset_)] += 1;
    }
    out.invalid_count = total - std::accumulate(out.counts.begin(), out.counts.end(),
                                                std::uint64_t{0});
    return out;
  }

  // Bottom-up over levels; each node's table counts assignments of the
  // variables at its level and below.
  std::vector<int> order_idx(nodes_.size());
  std::iota(order_idx.begin(), order_idx.end(), 0);
  std::sort(order_idx.begin(), order_idx.end(),
            [&](int a, int b) { return level.at(nodes_[a].var) > level.at(nodes_[b].var); });

  std::vector<std::vector<std::uint64_t>> table(nodes_.size());
  for (int ni : order_idx) {
    const AddNode& n = nodes_[ni];
    auto& tab = table[ni];
    tab.assign(E, 0);
    for (int side = 0; side < 2; ++side) {
      const ValueTriple& w = side ? n.w_hi : n.w_lo;
      const int child = side ? n.hi : n.lo;
      if (w.invalid) continue;
      if (w.alpha < 0 || w.alpha > alpha_cap_) continue;
      const auto gs = make_shift(w.gamma);
      const auto gps = make_shift(w.gamma_prime);
      if (child == -1) {
        // sink contributes the zero triple
        const int gi = gs[0], gpi = gps[0];
        if (gi >= 0 && gpi >= 0) tab[out.flat(w.alpha, gi, gpi)] += 1;
        continue;
      }
      const auto& ctab = table[child];
      for (int a = 0; a + w.alpha <= alpha_cap_; ++a)
        for (int gi = 0; gi < G; ++gi) {
          if (gs[gi] < 0) continue;
          const int base = (a * G + gi) * G;
          const int nbase = ((a + w.alpha) * G + gs[gi]) * G;
          for (int gpi = 0; gpi < G; ++gpi) {
            const std::uint64_t c = ctab[base + gpi];
            if (c == 0 || gps[gpi] < 0) continue;
            tab[nbase + gps[gpi]] += c;
          }
        }
    }
  }

  // Fold the root offset into the root table.
  const auto& rtab = table[root_];
  if (!root_offset_.invalid && root_offset_.alpha >= 0 && root_offset_.alpha <= alpha_cap_) {
    const auto gs = make_shift(root_offset_.gamma);
    const auto gps = make_shift(root_offset_.gamma_prime);
    for (int a = 0; a + root_offset_.alpha <= alpha_cap_; ++a)
      for (int gi = 0; gi < G; ++gi) {
        if (gs[gi] < 0) continue;
        for (int gpi = 0; gpi < G; ++gpi) {
          const std::uint64_t c = rtab[(a * G + gi) * G + gpi];
          if (c == 0 || gps[gpi] < 0) continue;
          out.counts[((a + root_offset_.alpha) * G + gs[gi]) * G + gps[gpi]] += c;
        }
      }
  }
  out.invalid_count =
      total - std::accumulate(out.counts.begin(), out.counts.end(), std::uint64_t{0});
  return out;
}

int Add::flat_of(const CountTable& t, const ValueTriple& e) {
  const int gi = t.tallies.index(e.gamma.empty() ? TallyVector(t.tallies.num_labels(), 0) : e.gamma);
  const int gpi = t.tallies.index(e.gamma_prime.empty() ? TallyVector(t.tallies.num_labels(), 0)
                                                        : e.gamma_prime);
  return t.flat(e.alpha, gi, gpi);
}

std::uint64_t Add::count(const ValueTriple& e) const {
  if (e.invalid) throw std::invalid_argument("counting the invalid element is undefined");
  if (!in_box(e, alpha_cap_, tally_cap_)) return 0;
  const CountTable t = count_all();
  TallyVector g = e.gamma, gp = e.gamma_prime;
  g.resize(num_labels_, 0);
  gp.resize(num_labels_, 0);
  return t.at(e.alpha, g, gp);
}

void Add::check_structure() const {
  std::unordered_map<VarId, int> level;
  for (std::size_t i = 0; i < order_.size(); ++i) level[order_[i]] = static_cast<int>(i);
  const int L = static_cast<int>(order_.size());
  if (root_ == -1) {
    if (L != 0) throw std::logic_error("non-empty order with no root");
    return;
  }
  if (level.find(nodes_.at(root_).var) == level.end() || level.at(nodes_[root_].var) != 0)
    throw std::logic_error("root must decide the first variable in order");
  for (const AddNode& n : nodes_) {
    auto it = level.find(n.var);
    if (it == level.end()) throw std::logic_error("node variable not in diagram order");
    const int l = it->second;
    for (int child : {n.lo, n.hi}) {
      if (child == -1) {
        if (l != L - 1) throw std::logic_error("early sink edge breaks fullness");
      } else {
        const AddNode& c = nodes_.at(child);
        if (level.at(c.var) != l + 1)
          throw std::logic_error("child skips or repeats a variable level");
      }
    }
  }
}

int Add::diameter() const {
  std::unordered_map<VarId, int> per_var;
  for (const AddNode& n : nodes_) per_var[n.var]++;
  int d = 0;
  for (const auto& [v, c] : per_var) d = std::max(d, c);
  return d;
}

namespace {

std::string triple_str(const ValueTriple& v) {
  if (v.invalid) return "inf";
  std::ostringstream os;
  os << "(" << v.alpha << ";";
  for (std::size_t i = 0; i < v.gamma.size(); ++i) os << (i ? "," : "") << v.gamma[i];
  os << ";";
  for (std::size_t i = 0; i < v.gamma_prime.size(); ++i) os << (i ? "," : "") << v.gamma_prime[i];
  os << ")";
  return os.str();
}

}  // namespace

std::string Add::dump() const {
  std::ostringstream os;
  os << "root " << root_ << " offset " << triple_str(root_offset_) << "\n";
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const AddNode& n = nodes_[i];
    auto child = [](int c) { return c == -1 ? std::string("SINK") : std::to_string(c); };
    os << i << " " << n.var << " " << child(n.lo) << " " << child(n.hi) << " "
       << triple_str(n.w_lo) << " " << triple_str(n.w_hi) << "\n";
  }
  return os.str();
}

std::uint64_t count_uniform(int chain_length, const ValueTriple& per_edge, const ValueTriple& e,
                            int num_labels) {
  if (per_edge.invalid || per_edge.is_zero())
    throw std::invalid_argument("uniform chain needs a finite nonzero increment");
  if (e.invalid) return 0;
  // solve e = k * per_edge componentwise
  long long k = -1;
  auto fit = [&](long long inc, long long val) {
    if (inc == 0) return val == 0;
    if (val % inc != 0 || val / inc < 0) return false;
    if (k == -1) k = val / inc;
    return k == val / inc;
  };
  if (!fit(per_edge.alpha, e.alpha)) return 0;
  for (int i = 0; i < num_labels; ++i) {
    const long long pg = i < static_cast<int>(per_edge.gamma.size()) ? per_edge.gamma[i] : 0;
    const long long eg = i < static_cast<int>(e.gamma.size()) ? e.gamma[i] : 0;
    if (!fit(pg, eg)) return 0;
    const long long pgp =
        i < static_cast<int>(per_edge.gamma_prime.size()) ? per_edge.gamma_prime[i] : 0;
    const long long egp = i < static_cast<int>(e.gamma_prime.size()) ? e.gamma_prime[i] : 0;
    if (!fit(pgp, egp)) return 0;
  }
  if (k == -1) return 0;  // unreachable: per_edge nonzero fixes k
  if (k < 0 || k > chain_length) return 0;
  return binom_u64(chain_length, static_cast<int>(k));
}

Add restrict_var(const Add& a, VarId var, bool bit) {
  const auto& ord = a.order();
  auto pos = std::find(ord.begin(), ord.end(), var);
  if (pos == ord.end()) throw std::invalid_argument("restricted variable not in diagram");
  std::vector<VarId> new_order;
  for (VarId v : ord)
    if (v != var) new_order.push_back(v);
  Add out(new_order, a.num_labels(), a.alpha_cap(), a.tally_cap());

  const auto& nodes = a.nodes();
  // Resolve an edge target through any removed-variable node, folding its
  // chosen increment into the edge.
  auto resolve = [&](int child, ValueTriple w) {
    while (child != -1 && nodes[child].var == var) {
      const AddNode& m = nodes[child];
      w = add_triples(w, bit ? m.w_hi : m.w_lo, a.num_labels());
      child = bit ? m.hi : m.lo;
    }
    return std::make_pair(child, w);
  };

  std::unordered_map<int, int> memo;
  auto copy_node = [&](auto&& self, int idx) -> int {
    auto it = memo.find(idx);
    if (it != memo.end()) return it->second;
    const AddNode& n = nodes[idx];
    AddNode nn;
    nn.var = n.var;
    auto [lo, wlo] = resolve(n.lo, n.w_lo);
    auto [hi, whi] = resolve(n.hi, n.w_hi);
    nn.w_lo = wlo;
    nn.w_hi = whi;
    // reserve slot before recursion to keep indices stable
    nn.lo = lo == -1 ? -1 : self(self, lo);
    nn.hi = hi == -1 ? -1 : self(self, hi);
    const int ni = out.add_node(nn);
    memo.emplace(idx, ni);
    return ni;
  };

  ValueTriple offset = a.root_offset();
  int root = a.root();
  std::tie(root, offset) = resolve(root, offset);
  out.set_root_offset(offset);
  out.set_root(root == -1 ? -1 : copy_node(copy_node, root));
  return out;
}

Add sum_adds(const Add& a, const Add& b) {
  if (a.order() != b.order()) throw std::invalid_argument("summed diagrams must share an order");
  if (a.num_labels() != b.num_labels())
    throw std::invalid_argument("summed diagrams must share a label set");
  Add out(a.order(), a.num_labels(), std::max(a.alpha_cap(), b.alpha_cap()),
          std::max(a.tally_cap(), b.tally_cap()));
  out.set_root_offset(add_triples(a.root_offset(), b.root_offset(), a.num_labels()));
  if (a.root() == -1) return out;  // empty order on both sides

  std::map<std::pair<int, int>, int> memo;
  auto merge = [&](auto&& self, int i, int j) -> int {
    auto it = memo.find({i, j});
    if (it != memo.end()) return it->second;
    const AddNode& x = a.nodes()[i];
    const AddNode& y = b.nodes()[j];
    AddNode n;
    n.var = x.var;  // same level on both sides by fullness
    n.w_lo = add_triples(x.w_lo, y.w_lo, a.num_labels());
    n.w_hi = add_triples(x.w_hi, y.w_hi, a.num_labels());
    n.lo = x.lo == -1 ? -1 : self(self, x.lo, y.lo);
    n.hi = x.hi == -1 ? -1 : self(self, x.hi, y.hi);
    const int ni = out.add_node(n);
    memo.emplace(std::make_pair(i, j), ni);
    return ni;
  };
  out.set_root(merge(merge, a.root(), b.root()));
  return out;
}

}  // namespace provlens

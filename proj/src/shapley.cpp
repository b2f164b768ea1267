#include "provlens/shapley.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "provlens/combinatorics.hpp"

namespace provlens {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// A provenance component: the set of variables whose tuples interact.
// map/fork — one variable per component; join — a dimension variable
// followed by its fact variables.
struct Component {
  std::vector<VarId> vars;
  bool is_join = false;
};

std::vector<Component> components_of(const TrackedDataset& d) {
  std::vector<Component> comps;
  if (d.pipeline_class == PipelineClass::Join) {
    for (VarId v = 0; v < d.variables.size(); ++v) {
      if (!d.is_dim_var[v]) continue;
      Component c;
      c.is_join = true;
      c.vars.push_back(v);
      for (VarId f : d.facts_of_dim[v]) c.vars.push_back(f);
      comps.push_back(std::move(c));
    }
  } else {
    for (VarId v = 0; v < d.variables.size(); ++v) comps.push_back(Component{{v}, false});
  }
  return comps;
}

bool in_provenance(const ProvenancePolynomial& p, VarId v) {
  return std::find(p.vars.begin(), p.vars.end(), v) != p.vars.end();
}

}  // namespace

// ---------------------------------------------------------------------------
// Diagram compilation

Add compile_add(const TrackedDataset& d, int t_idx, const ScoredDataset& s,
                const CompileOptions& opt) {
  const int Y = d.num_labels;
  const int A = d.variables.size();
  const int alpha_cap = opt.alpha_cap >= 0 ? opt.alpha_cap : A;
  const int tally_cap = opt.tally_cap >= 0 ? opt.tally_cap : static_cast<int>(d.tuples.size());
  const auto comps = components_of(d);
  const auto var_tuples = d.tuples_of_var();

  const bool have_t = opt.mode != CompileMode::Empty;
  const int t_pos = have_t ? s.position.at(t_idx) : -1;
  std::vector<char> in_pt(A, 0);
  if (have_t)
    for (VarId v : d.tuples.at(t_idx).provenance.vars) in_pt[v] = 1;

  std::vector<VarId> order;
  for (const auto& c : comps)
    for (VarId v : c.vars) order.push_back(v);
  Add add(order, Y, alpha_cap, tally_cap);

  auto base_high = [&]() {
    ValueTriple w;
    w.alpha = opt.track_alpha ? 1 : 0;
    return w;
  };
  auto with_label = [&](ValueTriple w, Label y) {
    auto& slot = opt.use_gamma_prime_slot ? w.gamma_prime : w.gamma;
    if (slot.empty()) slot.assign(Y, 0);
    slot[y] += 1;
    return w;
  };
  // Tally contribution (or invalidity) of switching a tuple on.
  auto tuple_effect = [&](int tuple, ValueTriple w) -> ValueTriple {
    if (opt.mode == CompileMode::Empty) return ValueTriple::infinity();
    if (s.position[tuple] <= t_pos) return with_label(w, d.tuples[tuple].label);
    if (opt.mode == CompileMode::Last) return ValueTriple::infinity();
    return w;  // TopK: tuples below the boundary are free
  };

  int next_root = -1;
  for (auto it = comps.rbegin(); it != comps.rend(); ++it) {
    const Component& c = *it;
    if (!c.is_join) {
      const VarId z = c.vars[0];
      AddNode n;
      n.var = z;
      n.lo = n.hi = next_root;
      n.w_lo = in_pt[z] ? ValueTriple::infinity() : ValueTriple::zero();
      ValueTriple wh = base_high();
      for (int tuple : var_tuples[z]) {
        if (wh.invalid) break;
        wh = tuple_effect(tuple, wh);
      }
      n.w_hi = wh;
      next_root = add.add_node(n);
      continue;
    }
    // join component: one decision node for the dimension with two parallel
    // fact chains; tuples materialize only on the dimension-on branch
    const VarId dim = c.vars[0];
    int next_on = next_root, next_off = next_root;
    for (std::size_t k = c.vars.size() - 1; k >= 1; --k) {
      const VarId f = c.vars[k];
      const ValueTriple wl = in_pt[f] ? ValueTriple::infinity() : ValueTriple::zero();
      AddNode off;  // dimension absent: the fact variable produces nothing
      off.var = f;
      off.lo = off.hi = next_off;
      off.w_lo = wl;
      off.w_hi = base_high();
      next_off = add.add_node(off);
      AddNode on;
      on.var = f;
      on.lo = on.hi = next_on;
      on.w_lo = wl;
      ValueTriple wh = base_high();
      for (int tuple : var_tuples[f]) {
        if (wh.invalid) break;
        wh = tuple_effect(tuple, wh);
      }
      on.w_hi = wh;
      next_on = add.add_node(on);
    }
    AddNode dn;
    dn.var = dim;
    dn.lo = next_off;
    dn.hi = next_on;
    dn.w_lo = in_pt[dim] ? ValueTriple::infinity() : ValueTriple::zero();
    dn.w_hi = base_high();
    next_root = add.add_node(dn);
  }
  add.set_root(next_root);
  return add;
}

OracleTable counting_oracle(const TrackedDataset& d, VarId a_i, int t_idx, int t_prime_idx,
                            const ScoredDataset& s, int K, CompileMode mode0,
                            CompileMode mode1) {
  CompileOptions o0;
  o0.mode = mode0;
  o0.track_alpha = true;
  o0.alpha_cap = d.variables.size();
  o0.tally_cap = K;
  CompileOptions o1 = o0;
  o1.mode = mode1;
  o1.track_alpha = false;
  o1.use_gamma_prime_slot = true;
  const Add n0 = compile_add(d, t_idx, s, o0);
  const Add n1 = compile_add(d, t_prime_idx, s, o1);
  const Add joint = sum_adds(restrict_var(n0, a_i, 0), restrict_var(n1, a_i, 1));
  OracleTable out;
  out.counts = joint.count_all();
  out.invalid_count = out.counts.invalid_count;
  return out;
}

// ---------------------------------------------------------------------------
// Shared small machinery

namespace {

// Tally-state tables for a (labels, K) pair: list of reachable states,
// pairwise state addition with overflow dropped, per-state majority utility.
struct StateTables {
  TallyIndexer idx;
  int G = 0;
  std::vector<int> sum;        // component sum per state
  std::vector<int> add_state;  // G*G, -1 = leaves the sum<=cap region
  std::vector<int> add_label;  // G*Y

  StateTables(int Y, int cap) : idx(Y, cap) {
    G = idx.size();
    sum.resize(G);
    for (int i = 0; i < G; ++i) sum[i] = idx.sum(i);
    add_state.assign(G * G, -1);
    for (int a = 0; a < G; ++a) {
      if (sum[a] > cap) continue;
      for (int b = 0; b < G; ++b) {
        if (sum[a] + sum[b] > cap) continue;
        TallyVector t = idx.tally(a);
        const TallyVector u = idx.tally(b);
        bool ok = true;
        for (int y = 0; y < idx.num_labels(); ++y) {
          t[y] += u[y];
          if (t[y] > idx.cap()) ok = false;
        }
        if (ok) add_state[a * G + b] = idx.index(t);
      }
    }
    add_label.assign(G * idx.num_labels(), -1);
    for (int a = 0; a < G; ++a)
      for (int y = 0; y < idx.num_labels(); ++y) {
        TallyVector t = idx.tally(a);
        t[y] += 1;
        if (sum[a] + 1 <= idx.cap() && t[y] <= idx.cap()) add_label[a * idx.num_labels() + y] =
            idx.index(t);
      }
  }
};

std::vector<double> state_utilities(const StateTables& st, const TupleWiseUtility& ut,
                                    const ValidationTuple& t_val) {
  std::vector<double> u(st.G, 0.0);
  for (int a = 0; a < st.G; ++a) u[a] = ut.u_T(label_from_tally(st.idx.tally(a)), t_val);
  return u;
}

void convolve(const StateTables& st, const std::vector<double>& a, const std::vector<double>& b,
              std::vector<double>& out) {
  out.assign(st.G, 0.0);
  for (int i = 0; i < st.G; ++i) {
    const double ai = a[i];
    if (ai == 0.0) continue;
    const int* row = &st.add_state[i * st.G];
    for (int j = 0; j < st.G; ++j) {
      const double bj = b[j];
      if (bj == 0.0 || row[j] < 0) continue;
      out[row[j]] += ai * bj;
    }
  }
}

int run_threads(int requested) {
#ifdef _OPENMP
  return requested > 0 ? requested : omp_get_max_threads();
#else
  (void)requested;
  return 1;
#endif
}

}  // namespace

// ---------------------------------------------------------------------------
// Diagram route

namespace {

void shapley_diagram_route_one_val(const TrackedDataset& d, const ValidationTuple& t_val, int K,
                                   const TupleWiseUtility& ut, std::vector<double>& phi,
                                   int threads) {
  const int A = d.variables.size();
  const int T = static_cast<int>(d.tuples.size());
  const ScoredDataset s = score(d, t_val);
  const double u_e = ut.empty_value(t_val);

  StateTables st(d.num_labels, K);
  const std::vector<double> u_state = state_utilities(st, ut, t_val);

  std::vector<double> inv_binom(A, 0.0);
  for (int a = 0; a < A; ++a) inv_binom[a] = 1.0 / binom_double(A - 1, a);

  std::vector<CompileMode> modes{CompileMode::TopK};
  if (K >= 2) modes.push_back(CompileMode::Last);

  // per-tuple diagrams (0-side carries support counts and the first tally
  // slot, 1-side only the second tally slot)
  auto modei = [](CompileMode m) { return m == CompileMode::TopK ? 0 : 1; };
  std::vector<std::vector<Add>> n0(T), n1(T);
  for (int t = 0; t < T; ++t)
    for (CompileMode m : modes) {
      CompileOptions o;
      o.mode = m;
      o.alpha_cap = A;
      o.tally_cap = K;
      o.track_alpha = true;
      n0[t].push_back(compile_add(d, t, s, o));
      o.track_alpha = false;
      o.use_gamma_prime_slot = true;
      n1[t].push_back(compile_add(d, t, s, o));
    }
  CompileOptions oz;
  oz.mode = CompileMode::Empty;
  oz.alpha_cap = A;
  oz.tally_cap = K;
  const Add zdiag = compile_add(d, -1, s, oz);

  auto mode_filter = [&](CompileMode m, int state_sum) {
    return m == CompileMode::TopK ? state_sum == K : (state_sum >= 1 && state_sum <= K - 1);
  };

  auto accumulate_table = [&](const Add::CountTable& ct, CompileMode m0, CompileMode m1,
                              bool empty_zero_side) {
    double acc = 0.0;
    const int G = ct.tallies.size();
    for (int alpha = 0; alpha <= ct.alpha_cap; ++alpha)
      for (int gi = 0; gi < G; ++gi) {
        if (!empty_zero_side && !mode_filter(m0, ct.tallies.sum(gi))) continue;
        if (empty_zero_side && gi != 0) continue;
        for (int gpi = 0; gpi < G; ++gpi) {
          const std::uint64_t c = ct.counts[ct.flat(alpha, gi, gpi)];
          if (c == 0) continue;
          if (!mode_filter(m1, ct.tallies.sum(gpi))) continue;
          const double u0 = empty_zero_side ? u_e : u_state[gi];
          acc += static_cast<double>(c) * inv_binom[alpha] * (u_state[gpi] - u0);
        }
      }
    return acc;
  };

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(run_threads(threads))
#endif
  for (VarId i = 0; i < A; ++i) {
    double acc = 0.0;
    const Add z0 = restrict_var(zdiag, i, 0);
    // cache the 0-side restrictions once per target variable
    std::vector<std::vector<Add>> r0(T);
    for (int t = 0; t < T; ++t) {
      if (in_provenance(d.tuples[t].provenance, i)) continue;
      for (CompileMode m0 : modes) r0[t].push_back(restrict_var(n0[t][modei(m0)], i, 0));
    }
    for (int tp = 0; tp < T; ++tp)
      for (CompileMode m1 : modes) {
        const Add r1 = restrict_var(n1[tp][modei(m1)], i, 1);
        // boundary-less 0 side against boundary t' on the 1 side
        acc += accumulate_table(sum_adds(z0, r1).count_all(), CompileMode::TopK, m1, true);
        for (int t = 0; t < T; ++t) {
          if (r0[t].empty()) continue;  // t needs the target variable itself
          for (CompileMode m0 : modes) {
            if (m0 == CompileMode::TopK && m1 == CompileMode::Last)
              continue;  // a superset cannot be underfull when the subset is full
            // the 1-side boundary sits at or above the 0-side one unless the
            // target variable itself introduced everything in between
            if (m0 == CompileMode::TopK && s.position[tp] > s.position[t]) continue;
            if (m0 == CompileMode::Last && s.position[tp] > s.position[t] &&
                !in_provenance(d.tuples[tp].provenance, i))
              continue;
            const Add joint = sum_adds(r0[t][modei(m0)], r1);
            acc += accumulate_table(joint.count_all(), m0, m1, false);
          }
        }
      }
    phi[i] += ut.w / A * acc;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Quadrature route

namespace {

// Per-variable facts for a fixed boundary tuple: the tally-state
// contribution of switching the variable's tuples on, and whether any of
// them falls strictly below the boundary.
struct VarInfo {
  int gamma_state = 0;  // -1 = overflows the tally box (cannot be a boundary)
  bool has_below = false;
  bool has_tuples = false;
};

struct QuadratureContext {
  const TrackedDataset* d = nullptr;
  std::vector<Component> comps;
  std::vector<int> comp_of;               // var -> component index
  std::vector<std::vector<int>> var_tuples;
};

// Distribution over tally states contributed by one component, under
// inclusion probability x, with the boundary tuple's variables forced on,
// an optional extra variable forced to a fixed bit, and (in Last mode) no
// below-boundary tuple allowed on.
void component_factor(const StateTables& st, const Component& c,
                      const std::vector<VarInfo>& info, const std::vector<char>& in_pt,
                      CompileMode mode, double x, VarId forced_var, int forced_bit,
                      std::vector<double>& out) {
  auto on_weight = [&](VarId v) { return v == forced_var ? (forced_bit ? 1.0 : 0.0) : x; };
  auto off_weight = [&](VarId v) { return v == forced_var ? (forced_bit ? 0.0 : 1.0) : 1.0 - x; };
  out.assign(st.G, 0.0);
  if (!c.is_join) {
    const VarId z = c.vars[0];
    const VarInfo& vi = info[z];
    if (!in_pt[z]) out[0] += off_weight(z);
    const bool on_valid = vi.gamma_state >= 0 && !(mode == CompileMode::Last && vi.has_below);
    if (on_valid) out[vi.gamma_state] += on_weight(z);
    return;
  }
  const VarId dim = c.vars[0];
  // dimension-on branch: independent fact toggles
  std::vector<double> on(st.G, 0.0), tmp;
  on[0] = 1.0;
  for (std::size_t k = 1; k < c.vars.size(); ++k) {
    const VarId f = c.vars[k];
    const VarInfo& vi = info[f];
    double w_on_valid = -1.0;
    int target = 0;
    if (vi.gamma_state >= 0 && !(mode == CompileMode::Last && vi.has_below)) {
      w_on_valid = on_weight(f);
      target = vi.gamma_state;
    }
    tmp.assign(st.G, 0.0);
    for (int a = 0; a < st.G; ++a) {
      const double pa = on[a];
      if (pa == 0.0) continue;
      if (!in_pt[f]) tmp[a] += pa * off_weight(f);
      if (w_on_valid >= 0.0) {
        const int ns = target == 0 ? a : st.add_state[a * st.G + target];
        if (ns >= 0) tmp[ns] += pa * w_on_valid;
      }
    }
    on.swap(tmp);
  }
  const double dw_on = on_weight(dim);
  for (int a = 0; a < st.G; ++a) out[a] = on[a] * dw_on;
  if (!in_pt[dim]) out[0] += off_weight(dim);
}

// Probability that the component produces no tuple at all.
double component_empty_prob(const QuadratureContext& qc, const Component& c, double x,
                            VarId forced_var, int forced_bit) {
  auto on_weight = [&](VarId v) { return v == forced_var ? (forced_bit ? 1.0 : 0.0) : x; };
  auto off_weight = [&](VarId v) { return v == forced_var ? (forced_bit ? 0.0 : 1.0) : 1.0 - x; };
  if (!c.is_join) {
    const VarId z = c.vars[0];
    if (qc.var_tuples[z].empty()) return on_weight(z) + off_weight(z);
    return off_weight(z);
  }
  const VarId dim = c.vars[0];
  double all_facts_off = 1.0;
  for (std::size_t k = 1; k < c.vars.size(); ++k) {
    const VarId f = c.vars[k];
    all_facts_off *= qc.var_tuples[f].empty() ? (on_weight(f) + off_weight(f)) : off_weight(f);
  }
  return off_weight(dim) + on_weight(dim) * all_facts_off;
}

void shapley_quadrature_route_one_val(const TrackedDataset& d, const ValidationTuple& t_val,
                                      int K, const TupleWiseUtility& ut,
                                      std::vector<double>& phi, int threads) {
  const int A = d.variables.size();
  const int T = static_cast<int>(d.tuples.size());
  const ScoredDataset s = score(d, t_val);
  const double u_e = ut.empty_value(t_val);

  QuadratureContext qc;
  qc.d = &d;
  qc.comps = components_of(d);
  qc.comp_of.assign(A, -1);
  for (std::size_t c = 0; c < qc.comps.size(); ++c)
    for (VarId v : qc.comps[c].vars) qc.comp_of[v] = static_cast<int>(c);
  qc.var_tuples = d.tuples_of_var();
  const int C = static_cast<int>(qc.comps.size());

  StateTables st(d.num_labels, K);
  const int G = st.G;
  const std::vector<double> u_state = state_utilities(st, ut, t_val);

  // exact for integrands of degree |A|-1
  const Quadrature quad = gauss_legendre_01(A / 2 + 1);
  const int Q = static_cast<int>(quad.x.size());

  std::vector<CompileMode> modes{CompileMode::TopK};
  if (K >= 2) modes.push_back(CompileMode::Last);

  // Boundary-less term: u_e weighted by the probability that nothing exists.
  {
    std::vector<double> delta(A, 0.0);
    for (int q = 0; q < Q; ++q) {
      const double x = quad.x[q];
      std::vector<double> pre(C + 1, 1.0), suf(C + 1, 1.0);
      for (int c = 0; c < C; ++c)
        pre[c + 1] = pre[c] * component_empty_prob(qc, qc.comps[c], x, -1, 0);
      for (int c = C - 1; c >= 0; --c)
        suf[c] = suf[c + 1] * component_empty_prob(qc, qc.comps[c], x, -1, 0);
      for (VarId i = 0; i < A; ++i) {
        const int c = qc.comp_of[i];
        const double rest = pre[c] * suf[c + 1];
        const double p1 = rest * component_empty_prob(qc, qc.comps[c], x, i, 1);
        const double p0 = rest * component_empty_prob(qc, qc.comps[c], x, i, 0);
        delta[i] += quad.w[q] * u_e * (p1 - p0);
      }
    }
    for (VarId i = 0; i < A; ++i) phi[i] += ut.w * delta[i];
  }

  // Per boundary tuple: probability-weighted utility of its tally.
  std::vector<std::vector<double>> contrib(T, std::vector<double>(A, 0.0));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(run_threads(threads))
#endif
  for (int t = 0; t < T; ++t) {
    std::vector<char> in_pt(A, 0);
    for (VarId v : d.tuples[t].provenance.vars) in_pt[v] = 1;
    const int t_pos = s.position[t];
    std::vector<double> fc, fi, mid, dist;
    std::vector<std::vector<double>> pre(C + 1), suf(C + 1), factors(C);
    for (CompileMode mode : modes) {
      if (mode == CompileMode::TopK && t_pos + 1 < K) continue;  // cannot reach rank K
      // per-variable structure for this boundary
      std::vector<VarInfo> info(A);
      bool t_possible = true;
      for (VarId v = 0; v < A; ++v) {
        VarInfo vi;
        vi.has_tuples = !qc.var_tuples[v].empty();
        if (!d.is_dim_var.empty() && d.is_dim_var[v]) {
          // a dimension variable only gates its facts; the facts carry the
          // tally states individually
          info[v] = vi;
          continue;
        }
        int state = 0;
        for (int tuple : qc.var_tuples[v]) {
          if (s.position[tuple] <= t_pos) {
            if (state >= 0)
              state = st.add_label[state * d.num_labels + d.tuples[tuple].label];
          } else {
            vi.has_below = true;
          }
        }
        vi.gamma_state = state;
        info[v] = vi;
        if (in_pt[v] && (state < 0 || (mode == CompileMode::Last && vi.has_below)))
          t_possible = false;
      }
      if (!t_possible) continue;
      for (int q = 0; q < Q; ++q) {
        const double x = quad.x[q];
        for (int c = 0; c < C; ++c)
          component_factor(st, qc.comps[c], info, in_pt, mode, x, -1, 0, factors[c]);
        pre[0].assign(G, 0.0);
        pre[0][0] = 1.0;
        for (int c = 0; c < C; ++c) convolve(st, pre[c], factors[c], pre[c + 1]);
        suf[C].assign(G, 0.0);
        suf[C][0] = 1.0;
        for (int c = C - 1; c >= 0; --c) convolve(st, factors[c], suf[c + 1], suf[c]);
        for (VarId i = 0; i < A; ++i) {
          const int c = qc.comp_of[i];
          double side_val[2] = {0.0, 0.0};
          for (int side = 0; side < 2; ++side) {
            if (side == 0 && in_pt[i]) continue;  // boundary needs its variables on
            component_factor(st, qc.comps[c], info, in_pt, mode, x, i, side, fi);
            convolve(st, pre[c], suf[c + 1], mid);
            convolve(st, mid, fi, dist);
            double v = 0.0;
            for (int a = 0; a < G; ++a) {
              if (dist[a] == 0.0) continue;
              const int sum = st.sum[a];
              const bool ok =
                  mode == CompileMode::TopK ? sum == K : (sum >= 1 && sum <= K - 1);
              if (ok) v += dist[a] * u_state[a];
            }
            side_val[side] = v;
          }
          contrib[t][i] += quad.w[q] * (side_val[1] - side_val[0]);
        }
      }
    }
  }
  for (int t = 0; t < T; ++t)
    for (VarId i = 0; i < A; ++i) phi[i] += ut.w * contrib[t][i];
}

}  // namespace

// ---------------------------------------------------------------------------
// General engine

ShapleyReport shapley_knn_general(const TrackedDataset& d,
                                  const std::vector<ValidationTuple>& val_set, int K,
                                  const TupleWiseUtility& ut, const ShapleyOptions& opt) {
  const auto t0 = Clock::now();
  d.validate();
  const int A = d.variables.size();
  GeneralRoute route = opt.route;
  if (route == GeneralRoute::Auto)
    route = A <= opt.diagram_route_max_vars ? GeneralRoute::Diagram : GeneralRoute::Quadrature;
  if (route == GeneralRoute::Diagram && A > 62)
    throw std::invalid_argument("diagram route limited to 62 variables");

  ShapleyReport rep;
  rep.values.assign(A, 0.0);
  rep.method = "general_knn";
  rep.K = K;
  rep.utility = ut.kind;
  for (const auto& t_val : val_set) {
    if (route == GeneralRoute::Diagram)
      shapley_diagram_route_one_val(d, t_val, K, ut, rep.values, opt.threads);
    else
      shapley_quadrature_route_one_val(d, t_val, K, ut, rep.values, opt.threads);
  }
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

// ---------------------------------------------------------------------------
// Map fast path

ShapleyReport shapley_knn_map_fast(const TrackedDataset& d,
                                   const std::vector<ValidationTuple>& val_set, int K,
                                   const TupleWiseUtility& ut, const ShapleyOptions& opt) {
  const auto t0 = Clock::now();
  if (d.pipeline_class != PipelineClass::Map)
    throw std::invalid_argument("map fast path requires a map-class dataset");
  d.validate();
  const int A = d.variables.size();
  const int Y = d.num_labels;
  const int M = static_cast<int>(d.tuples.size());
  ShapleyReport rep;
  rep.values.assign(A, 0.0);
  rep.method = "map_fast";
  rep.K = K;
  rep.utility = ut.kind;
  if (M == 0) {
    rep.wall_seconds = seconds_since(t0);
    return rep;
  }

  std::vector<int> tuple_of_var(A, -1);
  for (int t = 0; t < M; ++t) tuple_of_var[d.tuples[t].provenance.vars[0]] = t;

  StateTables st(Y, K);
  // states with component sum == K-1 (full-window base tallies) and <= K-1
  std::vector<int> full_states, under_states;
  for (int a = 0; a < st.G; ++a) {
    if (st.sum[a] == K - 1) full_states.push_back(a);
    if (st.sum[a] <= K - 1) under_states.push_back(a);
  }
  auto binom_small = [](double n, int k) {
    double r = 1.0;
    for (int j = 0; j < k; ++j) r *= (n - j) / (j + 1);
    return k >= 0 ? (n + 1 > k ? r : 0.0) : 0.0;
  };

  for (const auto& t_val : val_set) {
    const ScoredDataset s = score(d, t_val);
    const double u_e = ut.empty_value(t_val);
    const std::vector<double> u_state = state_utilities(st, ut, t_val);
    // u_plus[a][y] = utility of state a with one label-y tuple added
    std::vector<double> u_plus(st.G * Y, 0.0);
    for (int a = 0; a < st.G; ++a)
      for (int y = 0; y < Y; ++y) {
        TallyVector t = st.idx.tally(a);
        t[y] += 1;
        u_plus[a * Y + y] = ut.u_T(label_from_tally(t), t_val);
      }
    // prefix label counts along the similarity order
    std::vector<std::vector<int>> pref(M + 1, std::vector<int>(Y, 0));
    std::vector<int> total(Y, 0);
    for (int p = 0; p < M; ++p) {
      pref[p + 1] = pref[p];
      pref[p + 1][d.tuples[s.by_rank[p]].label]++;
    }
    total = pref[M];
    // weights: full-window boundary replacement at 1-based position p,
    // and underfull windows of size s among M-1 other tuples
    std::vector<double> hw(M + 1, 0.0);
    for (int p = K + 1; p <= M; ++p)
      hw[p] = 1.0 / (binom_double(p, K) * static_cast<double>(p - K));
    std::vector<double> gw(K, 0.0);
    for (int sz = 0; sz <= K - 1 && sz <= M - 1; ++sz)
      gw[sz] = 1.0 / (static_cast<double>(M) * binom_double(M - 1, sz));

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(run_threads(opt.threads))
#endif
    for (VarId i = 0; i < A; ++i) {
      double acc = 0.0;
      const int ti = tuple_of_var[i];
      if (ti < 0) continue;  // dummy variable: no tuples, no contribution
      const int pos_i = s.position[ti];  // 0-based
      const int y_i = d.tuples[ti].label;
      // underfull windows: every other present tuple is in the window
      for (int a : under_states) {
        const TallyVector h = st.idx.tally(a);
        double c = 1.0;
        for (int y = 0; y < Y; ++y) c *= binom_small(total[y] - (y == y_i ? 1 : 0), h[y]);
        if (c == 0.0) continue;
        const double u0 = st.sum[a] == 0 ? u_e : u_state[a];
        acc += c * gw[st.sum[a]] * (u_plus[a * Y + y_i] - u0);
      }
      // full windows: this tuple evicts the boundary tuple e below it
      for (int pe = pos_i + 1; pe < M; ++pe) {
        const int e = s.by_rank[pe];
        const int p1 = pe + 1;  // 1-based position of e
        if (p1 < K + 1) continue;
        const int y_e = d.tuples[e].label;
        double sum_h = 0.0;
        for (int a : full_states) {
          const double du = u_plus[a * Y + y_i] - u_plus[a * Y + y_e];
          if (du == 0.0) continue;
          const TallyVector h = st.idx.tally(a);
          double c = 1.0;
          for (int y = 0; y < Y; ++y) {
            const int avail = pref[pe][y] - (y == y_i ? 1 : 0);
            c *= binom_small(avail, h[y]);
            if (c == 0.0) break;
          }
          sum_h += c * du;
        }
        acc += hw[p1] * sum_h;
      }
      rep.values[i] += ut.w * acc;
    }
  }
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

// ---------------------------------------------------------------------------
// 1-NN closed forms

namespace {

// Shared 1-NN map formula over a reduced tuple list (variable, label,
// position implied by order). Values accumulate into phi.
void onenn_accumulate(const std::vector<std::pair<VarId, Label>>& ranked,
                      const TupleWiseUtility& ut, const ValidationTuple& t_val,
                      std::vector<double>& phi) {
  const int M = static_cast<int>(ranked.size());
  if (M == 0) return;
  const double u_e = ut.empty_value(t_val);
  std::vector<double> u_of(M);
  for (int p = 0; p < M; ++p) u_of[p] = ut.u_T(ranked[p].second, t_val);
  // suffix sums of 1/(p(p-1)) and u_e(p)/(p(p-1)) over 1-based positions
  std::vector<double> wsuf(M + 2, 0.0), usuf(M + 2, 0.0);
  for (int p = M; p >= 2; --p) {
    const double w = 1.0 / (static_cast<double>(p) * (p - 1));
    wsuf[p] = wsuf[p + 1] + w;
    usuf[p] = usuf[p + 1] + w * u_of[p - 1];
  }
  for (int p = 1; p <= M; ++p) {
    const double ui = u_of[p - 1];
    const double val = (ui - u_e) / M + ui * wsuf[p + 1] - usuf[p + 1];
    phi[ranked[p - 1].first] += ut.w * val;
  }
}

}  // namespace

ShapleyReport shapley_1nn_map(const TrackedDataset& d,
                              const std::vector<ValidationTuple>& val_set,
                              const TupleWiseUtility& ut, const ShapleyOptions& opt) {
  const auto t0 = Clock::now();
  if (d.pipeline_class != PipelineClass::Map)
    throw std::invalid_argument("1-NN map path requires a map-class dataset");
  d.validate();
  (void)opt;
  ShapleyReport rep;
  rep.values.assign(d.variables.size(), 0.0);
  rep.method = "onenn_map";
  rep.K = 1;
  rep.utility = ut.kind;
  for (const auto& t_val : val_set) {
    const ScoredDataset s = score(d, t_val);
    std::vector<std::pair<VarId, Label>> ranked;
    ranked.reserve(d.tuples.size());
    for (int t : s.by_rank)
      ranked.emplace_back(d.tuples[t].provenance.vars[0], d.tuples[t].label);
    onenn_accumulate(ranked, ut, t_val, rep.values);
  }
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

ShapleyReport shapley_1nn_fork(const TrackedDataset& d,
                               const std::vector<ValidationTuple>& val_set,
                               const TupleWiseUtility& ut, const ShapleyOptions& opt) {
  const auto t0 = Clock::now();
  if (d.pipeline_class != PipelineClass::Fork && d.pipeline_class != PipelineClass::Map)
    throw std::invalid_argument("1-NN fork path requires a fork-class dataset");
  d.validate();
  (void)opt;
  ShapleyReport rep;
  rep.values.assign(d.variables.size(), 0.0);
  rep.method = "onenn_fork";
  rep.K = 1;
  rep.utility = ut.kind;
  for (const auto& t_val : val_set) {
    const ScoredDataset s = score(d, t_val);
    // with K=1 only a provider's most similar tuple can ever matter
    std::vector<int> best(d.variables.size(), -1);
    for (int p = 0; p < static_cast<int>(s.by_rank.size()); ++p) {
      const int t = s.by_rank[p];
      const VarId v = d.tuples[t].provenance.vars[0];
      if (best[v] < 0) best[v] = t;
    }
    std::vector<std::pair<VarId, Label>> ranked;
    for (int p = 0; p < static_cast<int>(s.by_rank.size()); ++p) {
      const int t = s.by_rank[p];
      if (best[d.tuples[t].provenance.vars[0]] == t)
        ranked.emplace_back(d.tuples[t].provenance.vars[0], d.tuples[t].label);
    }
    onenn_accumulate(ranked, ut, t_val, rep.values);
  }
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

// ---------------------------------------------------------------------------
// Truncated Monte Carlo

ShapleyReport tmc_shapley(const TrackedDataset& d, const std::vector<ValidationTuple>& val_set,
                          int K, const TupleWiseUtility& ut, const TmcOptions& opt) {
  const auto t0 = Clock::now();
  d.validate();
  const int A = d.variables.size();
  ShapleyReport rep;
  rep.values.assign(A, 0.0);
  rep.method = "tmc";
  rep.K = K;
  rep.utility = ut.kind;
  rep.seed = opt.seed;
  if (opt.iterations <= 0 || A == 0) {
    rep.wall_seconds = seconds_since(t0);
    return rep;
  }
  // The baseline treats the utility as a black box of the training subset:
  // every evaluation scores and ranks from scratch.
  auto utility_of = [&](const Assignment& v) {
    return aggregate_utility(d, v, val_set, K, ut);
  };
  const double u_full = utility_of(Assignment::ones(A));

  // per-iteration marginal vectors, reduced in iteration order afterwards
  std::vector<std::vector<double>> marg(opt.iterations);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(run_threads(opt.threads))
#endif
  for (int it = 0; it < opt.iterations; ++it) {
    std::seed_seq sq{static_cast<std::uint32_t>(opt.seed),
                     static_cast<std::uint32_t>(opt.seed >> 32),
                     static_cast<std::uint32_t>(it)};
    std::mt19937_64 rng(sq);
    std::vector<VarId> perm(A);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double>& m = marg[it];
    m.assign(A, 0.0);
    Assignment v = Assignment::zeros(A);
    double u_prev = utility_of(v);
    for (VarId a : perm) {
      if (opt.truncation_tolerance > 0.0 &&
          std::abs(u_prev - u_full) < opt.truncation_tolerance)
        break;  // remaining marginals treated as zero
      v.set(a, true);
      const double u_cur = utility_of(v);
      m[a] = u_cur - u_prev;
      u_prev = u_cur;
    }
  }
  for (int it = 0; it < opt.iterations; ++it)
    for (VarId i = 0; i < A; ++i) rep.values[i] += marg[it][i];
  for (VarId i = 0; i < A; ++i) rep.values[i] /= opt.iterations;
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

// ---------------------------------------------------------------------------
// Brute force

ShapleyReport brute_force_shapley(const TrackedDataset& d,
                                  const std::vector<ValidationTuple>& val_set, int K,
                                  const TupleWiseUtility& ut, int max_vars) {
  const auto t0 = Clock::now();
  d.validate();
  const int A = d.variables.size();
  if (A > max_vars)
    throw std::invalid_argument("brute force refused: variable count exceeds cap");
  ShapleyReport rep;
  rep.values.assign(A, 0.0);
  rep.method = "brute_force";
  rep.K = K;
  rep.utility = ut.kind;
  std::vector<ScoredDataset> scored;
  for (const auto& t_val : val_set) scored.push_back(score(d, t_val));

  const std::uint64_t masks = std::uint64_t{1} << A;
  std::vector<double> u(masks, 0.0);
  for (std::uint64_t m = 0; m < masks; ++m) {
    const Assignment v = Assignment::from_mask(m, A);
    double acc = 0.0;
    for (std::size_t j = 0; j < val_set.size(); ++j)
      acc += knn_utility(scored[j], v, K, ut, val_set[j]);
    u[m] = ut.w * acc;
  }
  for (VarId i = 0; i < A; ++i) {
    const std::uint64_t bit = std::uint64_t{1} << i;
    double acc = 0.0;
    for (std::uint64_t m = 0; m < masks; ++m) {
      if (m & bit) continue;
      const int sup = static_cast<int>(std::popcount(m));
      acc += (u[m | bit] - u[m]) / binom_double(A - 1, sup);
    }
    rep.values[i] = acc / A;
  }
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

ShapleyReport shapley_auto(const TrackedDataset& d, const std::vector<ValidationTuple>& val_set,
                           int K, const TupleWiseUtility& ut, const ShapleyOptions& opt) {
  if (d.pipeline_class == PipelineClass::Map)
    return K == 1 ? shapley_1nn_map(d, val_set, ut, opt)
                  : shapley_knn_map_fast(d, val_set, K, ut, opt);
  if (d.pipeline_class == PipelineClass::Fork && K == 1)
    return shapley_1nn_fork(d, val_set, ut, opt);
  return shapley_knn_general(d, val_set, K, ut, opt);
}

}  // namespace provlens

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <map>
#include <random>
#include <tuple>

#include "doctest.h"
#include "helpers.hpp"
#include "provlens/shapley.hpp"

using namespace provlens;
using testutil::max_abs_diff;
using testutil::random_instance;
using testutil::t3_dataset;
using testutil::t3_val;

namespace {

// Reference semantics of a boundary diagram, evaluated directly from the
// definitions: invalid when the target's provenance is not fully present
// (or when the mode's exclusion rule fires), otherwise the support count
// plus the label histogram of candidates ranked at or above the target.
ValueTriple reference_semantics(const TrackedDataset& d, int t_idx, const ScoredDataset& s,
                                const Assignment& v, const CompileOptions& opt) {
  const auto cands = candidate_dataset(d, v);
  if (opt.mode == CompileMode::Empty) {
    if (!cands.empty()) return ValueTriple::infinity();
  } else {
    for (VarId a : d.tuples[t_idx].provenance.vars)
      if (!v.get(a)) return ValueTriple::infinity();
    if (opt.mode == CompileMode::Last) {
      for (int c : cands)
        if (s.position[c] > s.position[t_idx]) return ValueTriple::infinity();
    }
  }
  ValueTriple e;
  e.alpha = opt.track_alpha ? v.support_size() : 0;
  if (opt.mode != CompileMode::Empty) {
    TallyVector g(d.num_labels, 0);
    for (int c : cands)
      if (s.position[c] <= s.position[t_idx]) g[d.tuples[c].label]++;
    if (opt.use_gamma_prime_slot)
      e.gamma_prime = g;
    else
      e.gamma = g;
  }
  const int acap = opt.alpha_cap < 0 ? d.variables.size() : opt.alpha_cap;
  const int tcap = opt.tally_cap < 0 ? static_cast<int>(d.tuples.size()) : opt.tally_cap;
  if (e.alpha > acap) return ValueTriple::infinity();
  for (const TallyVector* g : {&e.gamma, &e.gamma_prime})
    for (int c : *g)
      if (c > tcap) return ValueTriple::infinity();
  return e;
}

bool triple_equiv(const ValueTriple& a, const ValueTriple& b, int num_labels) {
  if (a.invalid || b.invalid) return a.invalid == b.invalid;
  auto comp = [&](const TallyVector& g, int i) {
    return i < static_cast<int>(g.size()) ? g[i] : 0;
  };
  if (a.alpha != b.alpha) return false;
  for (int i = 0; i < num_labels; ++i) {
    if (comp(a.gamma, i) != comp(b.gamma, i)) return false;
    if (comp(a.gamma_prime, i) != comp(b.gamma_prime, i)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("compiled diagrams match reference semantics") {
  std::mt19937_64 rng(31);
  for (PipelineClass cls : {PipelineClass::Map, PipelineClass::Fork, PipelineClass::Join}) {
    for (int rep = 0; rep < 12; ++rep) {
      auto inst = random_instance(cls, 8, 2, rng, 1);
      const int A = inst.d.variables.size();
      if (A > 10) continue;
      ScoredDataset s = score(inst.d, inst.val[0]);
      for (CompileMode mode : {CompileMode::TopK, CompileMode::Last, CompileMode::Empty}) {
        CompileOptions opt;
        opt.mode = mode;
        opt.tally_cap = 3;
        const int t_idx = static_cast<int>(rng() % inst.d.tuples.size());
        Add add = compile_add(inst.d, t_idx, s, opt);
        add.check_structure();
        for (std::uint64_t mask = 0; mask < (1ull << A); ++mask) {
          Assignment v = Assignment::from_mask(mask, A);
          CHECK(triple_equiv(add.eval(v), reference_semantics(inst.d, t_idx, s, v, opt),
                             inst.d.num_labels));
        }
      }
    }
  }
}

TEST_CASE("compile example: boundary at the middle tuple") {
  TrackedDataset d = t3_dataset();
  ScoredDataset s = score(d, t3_val());
  CompileOptions opt;
  opt.tally_cap = 3;
  Add add = compile_add(d, 1, s, opt);
  Assignment v = Assignment::zeros(3);
  v.set(0, true);
  v.set(1, true);
  ValueTriple e = add.eval(v);
  CHECK_FALSE(e.invalid);
  CHECK(e.alpha == 2);
  CHECK(e.gamma == TallyVector{1, 1});
  // boundary absent -> invalid
  Assignment no_t2 = Assignment::zeros(3);
  no_t2.set(0, true);
  CHECK(add.eval(no_t2).invalid);
}

TEST_CASE("counting oracle equals direct enumeration") {
  std::mt19937_64 rng(37);
  int done = 0;
  while (done < 25) {
    const PipelineClass cls =
        std::vector<PipelineClass>{PipelineClass::Map, PipelineClass::Fork,
                                   PipelineClass::Join}[rng() % 3];
    auto inst = random_instance(cls, 7, 2, rng, 1);
    const int A = inst.d.variables.size();
    const int T = static_cast<int>(inst.d.tuples.size());
    if (A < 2 || A > 10) continue;
    ++done;
    ScoredDataset s = score(inst.d, inst.val[0]);
    const VarId a_i = static_cast<VarId>(rng() % A);
    const int t0 = static_cast<int>(rng() % T);
    const int t1 = static_cast<int>(rng() % T);
    const int K = 1 + static_cast<int>(rng() % 3);
    OracleTable ora = counting_oracle(inst.d, a_i, t0, t1, s, K);

    CompileOptions o0, o1;
    o0.tally_cap = o1.tally_cap = ora.counts.tallies.cap();
    o1.use_gamma_prime_slot = true;
    o1.track_alpha = false;
    std::uint64_t total = ora.invalid_count;
    std::map<std::tuple<int, int, int>, std::uint64_t> expect;
    std::uint64_t expect_invalid = 0;
    for (std::uint64_t mask = 0; mask < (1ull << A); ++mask) {
      Assignment v = Assignment::from_mask(mask, A);
      if (v.get(a_i)) continue;  // enumerate assignments over A \ {a_i}
      Assignment v0 = v, v1 = v;
      v1.set(a_i, true);
      ValueTriple e0 = reference_semantics(inst.d, t0, s, v0, o0);
      ValueTriple e1 = reference_semantics(inst.d, t1, s, v1, o1);
      if (e0.invalid || e1.invalid) {
        ++expect_invalid;
        continue;
      }
      const int g = ora.counts.tallies.index(
          e0.gamma.empty() ? TallyVector(inst.d.num_labels, 0) : e0.gamma);
      const int gp = ora.counts.tallies.index(
          e1.gamma_prime.empty() ? TallyVector(inst.d.num_labels, 0) : e1.gamma_prime);
      if (g < 0 || gp < 0 || e0.alpha > ora.counts.alpha_cap) {
        ++expect_invalid;
        continue;
      }
      ++expect[{e0.alpha, g, gp}];
    }
    CHECK(ora.invalid_count == expect_invalid);
    for (int ai = 0; ai <= ora.counts.alpha_cap; ++ai) {
      for (int g = 0; g < ora.counts.tallies.size(); ++g) {
        for (int gp = 0; gp < ora.counts.tallies.size(); ++gp) {
          const std::uint64_t c = ora.counts.counts[ora.counts.flat(ai, g, gp)];
          total += c;
          auto it = expect.find({ai, g, gp});
          CHECK(c == (it == expect.end() ? 0 : it->second));
        }
      }
    }
    CHECK(total == (1ull << (A - 1)));  // oracle mass partition
  }
}

TEST_CASE("named three-tuple instance matches brute force") {
  TrackedDataset d = t3_dataset();
  std::vector<ValidationTuple> val = {t3_val()};
  TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, val, d, 1);
  ShapleyReport bf = brute_force_shapley(d, val, 1, ut);
  for (GeneralRoute route : {GeneralRoute::Diagram, GeneralRoute::Quadrature}) {
    ShapleyOptions opt;
    opt.route = route;
    ShapleyReport g = shapley_knn_general(d, val, 1, ut, opt);
    CHECK(max_abs_diff(g.values, bf.values) < 1e-9);
  }
  CHECK(max_abs_diff(shapley_1nn_map(d, val, ut).values, bf.values) < 1e-9);
  CHECK(max_abs_diff(shapley_knn_map_fast(d, val, 1, ut).values, bf.values) < 1e-9);
}

TEST_CASE("general engine equals brute force on random instances") {
  std::mt19937_64 rng(41);
  for (PipelineClass cls : {PipelineClass::Map, PipelineClass::Fork, PipelineClass::Join}) {
    for (int rep = 0; rep < 10; ++rep) {
      auto inst = random_instance(cls, 7, 2, rng, 2);
      for (int K : {1, 2, 3}) {
        TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, inst.val, inst.d, K);
        ShapleyReport bf = brute_force_shapley(inst.d, inst.val, K, ut);
        for (GeneralRoute route : {GeneralRoute::Diagram, GeneralRoute::Quadrature}) {
          ShapleyOptions opt;
          opt.route = route;
          ShapleyReport g = shapley_knn_general(inst.d, inst.val, K, ut, opt);
          CHECK(max_abs_diff(g.values, bf.values) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("three-label instances") {
  std::mt19937_64 rng(43);
  for (int rep = 0; rep < 6; ++rep) {
    auto inst = random_instance(PipelineClass::Map, 6, 3, rng, 2);
    for (int K : {1, 2}) {
      TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, inst.val, inst.d, K);
      ShapleyReport bf = brute_force_shapley(inst.d, inst.val, K, ut);
      for (GeneralRoute route : {GeneralRoute::Diagram, GeneralRoute::Quadrature}) {
        ShapleyOptions opt;
        opt.route = route;
        CHECK(max_abs_diff(shapley_knn_general(inst.d, inst.val, K, ut, opt).values,
                           bf.values) < 1e-9);
      }
      CHECK(max_abs_diff(shapley_knn_map_fast(inst.d, inst.val, K, ut).values, bf.values) <
            1e-9);
    }
  }
}

TEST_CASE("map fast path coherence") {
  std::mt19937_64 rng(47);
  for (int rep = 0; rep < 50; ++rep) {
    auto inst = random_instance(PipelineClass::Map, 10, 2, rng, 2);
    for (int K : {1, 2, 3}) {
      TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, inst.val, inst.d, K);
      ShapleyReport g = shapley_knn_general(inst.d, inst.val, K, ut);
      CHECK(max_abs_diff(shapley_knn_map_fast(inst.d, inst.val, K, ut).values, g.values) <
            1e-9);
      if (K == 1)
        CHECK(max_abs_diff(shapley_1nn_map(inst.d, inst.val, ut).values, g.values) < 1e-9);
    }
  }
}

TEST_CASE("single tuple takes the full margin") {
  InputTable in;
  in.features = {{1.0}};
  in.labels = {1};
  TrackedDataset d = apply_pipeline(PipelineSpec::identity_map(2), in);
  std::vector<ValidationTuple> val = {t3_val()};  // label 1 -> match
  TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, val, d, 1);
  ShapleyReport r = shapley_knn_map_fast(d, val, 1, ut);
  CHECK(r.values[0] == doctest::Approx(0.5));  // u(full)=1 minus uniform guess 0.5
}

TEST_CASE("1-NN fork path") {
  std::mt19937_64 rng(53);
  SUBCASE("matches brute force and the general engine") {
    for (int rep = 0; rep < 30; ++rep) {
      auto inst = random_instance(PipelineClass::Fork, 6, 2, rng, 2);
      TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, inst.val, inst.d, 1);
      ShapleyReport bf = brute_force_shapley(inst.d, inst.val, 1, ut);
      CHECK(max_abs_diff(shapley_1nn_fork(inst.d, inst.val, ut).values, bf.values) < 1e-9);
      CHECK(max_abs_diff(shapley_knn_general(inst.d, inst.val, 1, ut).values, bf.values) <
            1e-9);
    }
  }
  SUBCASE("reduction is the identity on map datasets") {
    auto inst = random_instance(PipelineClass::Map, 8, 2, rng, 2);
    TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, inst.val, inst.d, 1);
    CHECK(shapley_1nn_fork(inst.d, inst.val, ut).values ==
          shapley_1nn_map(inst.d, inst.val, ut).values);
  }
}

TEST_CASE("other utilities cross-check") {
  std::mt19937_64 rng(59);
  for (PipelineClass cls : {PipelineClass::Map, PipelineClass::Fork, PipelineClass::Join}) {
    for (int rep = 0; rep < 5; ++rep) {
      auto inst = random_instance(cls, 6, 2, rng, 12, true);
      for (UtilityKind kind : {UtilityKind::Fnr, UtilityKind::EqoddsDiff}) {
        TupleWiseUtility ut = make_utility(kind, inst.val, inst.d, 2);
        ShapleyReport bf = brute_force_shapley(inst.d, inst.val, 2, ut);
        for (GeneralRoute route : {GeneralRoute::Diagram, GeneralRoute::Quadrature}) {
          ShapleyOptions opt;
          opt.route = route;
          CHECK(max_abs_diff(shapley_knn_general(inst.d, inst.val, 2, ut, opt).values,
                             bf.values) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("shapley axioms") {
  std::mt19937_64 rng(61);
  SUBCASE("efficiency") {
    for (PipelineClass cls : {PipelineClass::Map, PipelineClass::Fork, PipelineClass::Join}) {
      auto inst = random_instance(cls, 8, 2, rng, 3);
      const int A = inst.d.variables.size();
      for (int K : {1, 2}) {
        TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, inst.val, inst.d, K);
        ShapleyReport r = shapley_auto(inst.d, inst.val, K, ut);
        const double full =
            aggregate_utility(inst.d, Assignment::ones(A), inst.val, K, ut);
        const double empty =
            aggregate_utility(inst.d, Assignment::zeros(A), inst.val, K, ut);
        double sum = 0.0;
        for (double v : r.values) sum += v;
        CHECK(sum == doctest::Approx(full - empty).epsilon(1e-9));
      }
    }
  }
  SUBCASE("symmetry: duplicate tuples get equal value") {
    InputTable in;
    in.features = {{1.0}, {1.0}, {4.0}};
    in.labels = {1, 1, 0};
    TrackedDataset d = apply_pipeline(PipelineSpec::identity_map(2), in);
    std::vector<ValidationTuple> val = {t3_val()};
    TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, val, d, 1);
    ShapleyReport r = shapley_knn_general(d, val, 1, ut);
    CHECK(r.values[0] == doctest::Approx(r.values[1]).epsilon(1e-12));
    ShapleyReport bf = brute_force_shapley(d, val, 1, ut);
    CHECK(bf.values[0] == doctest::Approx(bf.values[1]).epsilon(1e-12));
    CHECK(max_abs_diff(r.values, bf.values) < 1e-9);
  }
  SUBCASE("dummy: a provider with no tuples gets zero") {
    InputTable in;
    in.features = {{1.0}, {2.0}, {3.0}};
    in.labels = {1, 0, 1};
    TrackedDataset d = apply_pipeline(PipelineSpec::fork(3, 2), in);
    // providers that contributed no rows: append two idle variables
    auto names = d.variables.names();
    names.push_back("a_provider_idle0");
    names.push_back("a_provider_idle1");
    d.variables = VariableSet(names);
    REQUIRE(d.variables.size() == 5);
    d.validate();
    std::vector<ValidationTuple> val = {t3_val()};
    TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, val, d, 1);
    for (const ShapleyReport& r :
         {shapley_knn_general(d, val, 1, ut), shapley_1nn_fork(d, val, ut),
          brute_force_shapley(d, val, 1, ut)}) {
      const auto per_var = d.tuples_of_var();
      for (int v = 0; v < 5; ++v)
        if (per_var[v].empty()) CHECK(r.values[v] == doctest::Approx(0.0).epsilon(1e-12));
    }
  }
  SUBCASE("positive rescaling of features changes nothing") {
    auto inst = random_instance(PipelineClass::Map, 8, 2, rng, 2);
    TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, inst.val, inst.d, 2);
    ShapleyReport base = shapley_auto(inst.d, inst.val, 2, ut);
    TrackedDataset scaled = inst.d;
    for (auto& t : scaled.tuples)
      for (double& x : t.features) x *= 3.0;
    auto val2 = inst.val;
    for (auto& t : val2)
      for (double& x : t.features) x *= 3.0;
    TupleWiseUtility ut2 = make_utility(UtilityKind::Accuracy, val2, scaled, 2);
    ShapleyReport same = shapley_auto(scaled, val2, 2, ut2);
    CHECK(max_abs_diff(base.values, same.values) < 1e-12);
  }
}

TEST_CASE("monte carlo estimator") {
  TrackedDataset d = t3_dataset();
  std::vector<ValidationTuple> val = {t3_val()};
  TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, val, d, 1);
  SUBCASE("zero iterations gives zero estimates") {
    TmcOptions o;
    o.iterations = 0;
    ShapleyReport r = tmc_shapley(d, val, 1, ut, o);
    for (double v : r.values) CHECK(v == 0.0);
  }
  SUBCASE("fixed seed is bit-reproducible") {
    TmcOptions o;
    o.iterations = 200;
    o.seed = 99;
    ShapleyReport a = tmc_shapley(d, val, 1, ut, o);
    ShapleyReport b = tmc_shapley(d, val, 1, ut, o);
    CHECK(a.values == b.values);
  }
  SUBCASE("converges to brute force") {
    TmcOptions o;
    o.iterations = 20000;
    o.truncation_tolerance = 0.0;
    o.seed = 7;
    ShapleyReport est = tmc_shapley(d, val, 1, ut, o);
    ShapleyReport bf = brute_force_shapley(d, val, 1, ut);
    // generous bound; the acceptance gate runs the formal 3-sigma version
    CHECK(max_abs_diff(est.values, bf.values) < 0.02);
  }
}

TEST_CASE("brute force basics") {
  SUBCASE("one variable") {
    InputTable in;
    in.features = {{1.0}};
    in.labels = {0};
    TrackedDataset d = apply_pipeline(PipelineSpec::identity_map(2), in);
    std::vector<ValidationTuple> val = {t3_val()};  // label 1, mismatch
    TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, val, d, 1);
    ShapleyReport r = brute_force_shapley(d, val, 1, ut);
    CHECK(r.values[0] == doctest::Approx(0.0 - 0.5));
  }
  SUBCASE("two identical tuples split the margin") {
    InputTable in;
    in.features = {{1.0}, {1.0}};
    in.labels = {1, 1};
    TrackedDataset d = apply_pipeline(PipelineSpec::identity_map(2), in);
    std::vector<ValidationTuple> val = {t3_val()};
    TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, val, d, 1);
    ShapleyReport r = brute_force_shapley(d, val, 1, ut);
    CHECK(r.values[0] == doctest::Approx(0.25));
    CHECK(r.values[1] == doctest::Approx(0.25));
  }
  SUBCASE("refuses oversized instances") {
    std::mt19937_64 rng(67);
    auto inst = random_instance(PipelineClass::Map, 5, 2, rng, 1);
    TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, inst.val, inst.d, 1);
    CHECK_THROWS(brute_force_shapley(inst.d, inst.val, 1, ut, 2));
  }
}

TEST_CASE("parallel execution is value-identical to serial") {
  std::mt19937_64 rng(71);
  for (PipelineClass cls : {PipelineClass::Map, PipelineClass::Fork, PipelineClass::Join}) {
    auto inst = random_instance(cls, 9, 2, rng, 3);
    TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, inst.val, inst.d, 2);
    ShapleyOptions serial, wide;
    serial.threads = 1;
    wide.threads = 8;
    CHECK(shapley_auto(inst.d, inst.val, 2, ut, serial).values ==
          shapley_auto(inst.d, inst.val, 2, ut, wide).values);
    TmcOptions ts, tw;
    ts.iterations = tw.iterations = 50;
    ts.seed = tw.seed = 5;
    ts.threads = 1;
    tw.threads = 8;
    CHECK(tmc_shapley(inst.d, inst.val, 2, ut, ts).values ==
          tmc_shapley(inst.d, inst.val, 2, ut, tw).values);
  }
}

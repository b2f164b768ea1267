#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "provlens/knn.hpp"

using namespace provlens;
using testutil::t3_dataset;
using testutil::t3_val;

TEST_CASE("scoring is monotone in distance") {
  TrackedDataset d = t3_dataset();
  ScoredDataset s = score(d, t3_val());
  CHECK(s.scores[0] == doctest::Approx(-1.0));
  CHECK(s.scores[1] == doctest::Approx(-4.0));
  CHECK(s.scores[2] == doctest::Approx(-9.0));
  CHECK(s.by_rank == std::vector<int>{0, 1, 2});
  CHECK(s.position[2] == 2);

  SUBCASE("exact match ranks first") {
    ValidationTuple v;
    v.features = {3.0};
    ScoredDataset s2 = score(d, v);
    CHECK(s2.by_rank[0] == 2);
  }
  SUBCASE("score ties break by input rank") {
    InputTable in;
    in.features = {{1.0}, {-1.0}};
    in.labels = {0, 1};
    TrackedDataset dup = apply_pipeline(PipelineSpec::identity_map(2), in);
    ValidationTuple v;
    v.features = {0.0};
    ScoredDataset s3 = score(dup, v);
    CHECK(s3.by_rank == std::vector<int>{0, 1});
  }
}

TEST_CASE("top-K boundary") {
  TrackedDataset d = t3_dataset();
  ScoredDataset s = score(d, t3_val());
  CHECK(boundary_top_k(s, Assignment::ones(3), 2) == 1);
  CHECK(boundary_top_k(s, Assignment::ones(3), 1) == 0);
  Assignment only_t3 = Assignment::zeros(3);
  only_t3.set(2, true);
  CHECK(boundary_top_k(s, only_t3, 3) == 2);  // fewer candidates than K
  CHECK_FALSE(boundary_top_k(s, Assignment::zeros(3), 1).has_value());
}

TEST_CASE("tally counts candidates at or above the boundary") {
  TrackedDataset d = t3_dataset();  // labels 1,0,1 in similarity order
  ScoredDataset s = score(d, t3_val());
  CHECK(tally(s, Assignment::ones(3), 1) == TallyVector{1, 1});
  CHECK(tally(s, Assignment::ones(3), 0) == TallyVector{0, 1});
  CHECK(tally(s, Assignment::ones(3), 2) == TallyVector{1, 2});
  CHECK(label_from_tally({1, 1}) == 0);  // vote tie -> smallest label
  CHECK(label_from_tally({0, 2}) == 1);
}

TEST_CASE("knn utility") {
  TrackedDataset d = t3_dataset();
  ScoredDataset s = score(d, t3_val());
  TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, {t3_val()}, d, 1);
  CHECK(knn_utility(s, Assignment::ones(3), 1, ut, t3_val()) == doctest::Approx(1.0));
  // empty candidate set -> uniform guess over two labels
  CHECK(knn_utility(s, Assignment::zeros(3), 1, ut, t3_val()) == doctest::Approx(0.5));

  SUBCASE("K=3 majority vote") {
    // tally (1,2), y_val=1 -> correct
    CHECK(knn_utility(s, Assignment::ones(3), 3, ut, t3_val()) == doctest::Approx(1.0));
  }
  SUBCASE("fixed empty label convention") {
    TupleWiseUtility fixed = ut;
    fixed.empty_uniform = false;
    fixed.empty_label = 0;
    CHECK(knn_utility(s, Assignment::zeros(3), 1, fixed, t3_val()) == doctest::Approx(0.0));
  }
}

TEST_CASE("aggregate utility") {
  TrackedDataset d = t3_dataset();
  std::vector<ValidationTuple> val = {t3_val(), t3_val()};
  TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, val, d, 1);
  CHECK(ut.w == doctest::Approx(0.5));
  CHECK(aggregate_utility(d, Assignment::ones(3), val, 1, ut) == doctest::Approx(1.0));
  CHECK(aggregate_utility(d, Assignment::ones(3), {}, 1, ut) == doctest::Approx(0.0));

  SUBCASE("false negative rate form") {
    // two positives, one classified 0 -> fnr = 0.5
    ValidationTuple near_neg = t3_val();  // lands on t1 (label 1): predicted 1
    ValidationTuple far_pos;
    far_pos.features = {2.1};  // nearest is t2 (label 0): predicted 0
    far_pos.label = 1;
    std::vector<ValidationTuple> vs = {near_neg, far_pos};
    TupleWiseUtility fnr = make_utility(UtilityKind::Fnr, vs, d, 1);
    CHECK(aggregate_utility(d, Assignment::ones(3), vs, 1, fnr) == doctest::Approx(0.5));
  }
}

TEST_CASE("utility properties") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 30; ++rep) {
    auto inst = testutil::random_instance(PipelineClass::Map, 8, 2, rng, 3);
    const int A = inst.d.variables.size();
    TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, inst.val, inst.d, 2);
    for (std::uint64_t mask = 0; mask < (1ull << A); ++mask) {
      Assignment v = Assignment::from_mask(mask, A);
      const double u = aggregate_utility(inst.d, v, inst.val, 2, ut);
      CHECK(u >= -1e-12);
      CHECK(u <= 1.0 + 1e-12);
      // additivity: whole equals the sum of per-tuple parts
      double parts = 0.0;
      for (const auto& t : inst.val) parts += knn_utility(score(inst.d, t), v, 2, ut, t);
      CHECK(u == doctest::Approx(ut.w * parts).epsilon(1e-12));
    }
  }
}

TEST_CASE("adding a far tuple leaves a saturated boundary alone") {
  InputTable in;
  in.features = {{1.0}, {2.0}};
  in.labels = {1, 0};
  TrackedDataset d2 = apply_pipeline(PipelineSpec::identity_map(2), in);
  in.features.push_back({50.0});
  in.labels.push_back(1);
  TrackedDataset d3 = apply_pipeline(PipelineSpec::identity_map(2), in);
  TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, {t3_val()}, d2, 2);
  const double u2 = knn_utility(score(d2, t3_val()), Assignment::ones(2), 2, ut, t3_val());
  const double u3 = knn_utility(score(d3, t3_val()), Assignment::ones(3), 2, ut, t3_val());
  CHECK(u2 == doctest::Approx(u3));
}

TEST_CASE("equalized odds freeze matches the direct metric direction") {
  std::mt19937_64 rng(29);
  auto inst = testutil::random_instance(PipelineClass::Map, 8, 2, rng, 40, true);
  TupleWiseUtility eq = make_utility(UtilityKind::EqoddsDiff, inst.val, inst.d, 1);
  CHECK(eq.w == doctest::Approx(1.0));
  // On the full dataset the additive decomposition reproduces the frozen
  // branch's group-rate difference exactly.
  std::vector<Label> pred;
  for (const auto& t : inst.val) pred.push_back(knn_predict_full(inst.d, t, 1).value_or(0));
  double additive = 0.0;
  for (std::size_t i = 0; i < inst.val.size(); ++i)
    additive += eq.u_T(pred[i], inst.val[i]);
  // per-tuple terms live in a bounded range
  for (std::size_t i = 0; i < inst.val.size(); ++i) {
    for (Label y : {0, 1}) {
      CHECK(std::abs(eq.u_T(y, inst.val[i])) <= 1.0 + 1e-12);
    }
  }
  const double direct = eqodds_diff_direct(pred, inst.val);
  CHECK(additive <= direct + 1e-9);  // frozen branch difference <= max over branches
}

TEST_CASE("prediction determinism under input permutation") {
  // permuting rows permutes tiebreak ranks, so only score ties may differ;
  // with distinct scores all utilities must be identical
  InputTable in;
  in.features = {{1.0}, {2.5}, {3.5}};
  in.labels = {1, 0, 1};
  TrackedDataset a = apply_pipeline(PipelineSpec::identity_map(2), in);
  std::swap(in.features[0], in.features[2]);
  std::swap(in.labels[0], in.labels[2]);
  TrackedDataset b = apply_pipeline(PipelineSpec::identity_map(2), in);
  TupleWiseUtility ut = make_utility(UtilityKind::Accuracy, {t3_val()}, a, 2);
  CHECK(knn_utility(score(a, t3_val()), Assignment::ones(3), 2, ut, t3_val()) ==
        doctest::Approx(knn_utility(score(b, t3_val()), Assignment::ones(3), 2, ut, t3_val())));
}

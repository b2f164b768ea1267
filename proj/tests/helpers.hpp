#pragma once

// Shared fixtures for the test suites: tiny hand-built datasets and a
// seeded random-instance generator covering all three pipeline classes.

#include <random>
#include <vector>

#include "provlens/harness.hpp"
#include "provlens/knn.hpp"
#include "provlens/provenance.hpp"
#include "provlens/shapley.hpp"

namespace testutil {

using namespace provlens;

// Three 1-D tuples at x=1,2,3 with labels 1,0,1; the validation point sits
// at x=0 so similarity order is t1 > t2 > t3.
inline TrackedDataset t3_dataset() {
  InputTable in;
  in.features = {{1.0}, {2.0}, {3.0}};
  in.labels = {1, 0, 1};
  return apply_pipeline(PipelineSpec::identity_map(2), in);
}

inline ValidationTuple t3_val() {
  ValidationTuple v;
  v.features = {0.0};
  v.label = 1;
  return v;
}

struct RandomInstance {
  TrackedDataset d;
  std::vector<ValidationTuple> val;
};

inline RandomInstance random_instance(PipelineClass cls, int max_vars, int num_labels,
                                      std::mt19937_64& rng, int val_size = 2,
                                      bool with_groups = false) {
  std::uniform_int_distribution<int> nvars(1, max_vars);
  const int A = nvars(rng);
  SyntheticSpec spec;
  spec.cls = cls;
  spec.num_labels = num_labels;
  spec.features = 2;
  spec.seed = rng();
  switch (cls) {
    case PipelineClass::Map:
      spec.rows = A;
      break;
    case PipelineClass::Fork:
      spec.providers = A;
      spec.rows = A + static_cast<int>(rng() % (2 * A + 1));
      break;
    case PipelineClass::Join:
      // dim vars + fact vars = |A|; keep at least one fact
      spec.dim_rows = 1 + static_cast<int>(rng() % std::max(1, A / 2));
      spec.rows = A - spec.dim_rows;
      if (spec.rows < 1) {
        spec.dim_rows = std::max(1, A - 1);
        spec.rows = std::max(1, A - spec.dim_rows);
      }
      break;
  }
  RandomInstance out;
  out.d = make_synthetic(spec);
  // join tuples carry the dimension row's feature as an extra column
  const int val_features = spec.features + (cls == PipelineClass::Join ? 1 : 0);
  out.val = make_synthetic_val(val_size, val_features, num_labels, with_groups ? 2 : 0, rng());
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  if (a.size() != b.size()) return 1e18;
  return m;
}

}  // namespace testutil

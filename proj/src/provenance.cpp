#include "provlens/provenance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace provlens {

const char* to_string(PipelineClass c) {
  switch (c) {
    case PipelineClass::Map: return "map";
    case PipelineClass::Fork: return "fork";
    case PipelineClass::Join: return "join";
  }
  return "?";
}

VariableSet::VariableSet(std::vector<std::string> names) : names_(std::move(names)) {
  std::unordered_set<std::string> seen;
  for (const auto& n : names_) {
    if (!seen.insert(n).second) throw std::invalid_argument("duplicate variable name: " + n);
  }
}

VarId VariableSet::index_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (names_[i] == name) return i;
  throw std::out_of_range("unknown variable: " + name);
}

Assignment Assignment::from_mask(std::uint64_t mask, int n) {
  Assignment a = zeros(n);
  for (int i = 0; i < n; ++i) a.bits[i] = (mask >> i) & 1u;
  return a;
}

int Assignment::support_size() const {
  return static_cast<int>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

bool Assignment::dominated_by(const Assignment& other) const {
  if (bits.size() != other.bits.size()) throw std::invalid_argument("assignment size mismatch");
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i] && !other.bits[i]) return false;
  return true;
}

ProvenancePolynomial ProvenancePolynomial::of(std::vector<VarId> vs) {
  std::sort(vs.begin(), vs.end());
  vs.erase(std::unique(vs.begin(), vs.end()), vs.end());
  if (vs.empty()) throw std::invalid_argument("empty provenance conjunction");
  return ProvenancePolynomial{std::move(vs)};
}

bool eval_polynomial(const ProvenancePolynomial& poly, const Assignment& v) {
  for (VarId x : poly.vars)
    if (!v.get(x)) return false;
  return true;
}

std::vector<std::vector<int>> TrackedDataset::tuples_of_var() const {
  std::vector<std::vector<int>> out(variables.size());
  std::vector<int> order(tuples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return tuples[a].tiebreak_rank < tuples[b].tiebreak_rank; });
  for (int t : order)
    for (VarId x : tuples[t].provenance.vars) out[x].push_back(t);
  return out;
}

void TrackedDataset::validate() const {
  const int n = variables.size();
  std::unordered_set<int> ranks;
  for (const auto& t : tuples) {
    if (t.provenance.vars.empty()) throw std::invalid_argument("tuple with empty provenance");
    for (VarId x : t.provenance.vars)
      if (x < 0 || x >= n) throw std::invalid_argument("provenance variable out of range");
    if (!ranks.insert(t.tiebreak_rank).second)
      throw std::invalid_argument("duplicate tiebreak rank");
    if (t.label < 0 || t.label >= num_labels) throw std::invalid_argument("label out of range");
  }
  switch (pipeline_class) {
    case PipelineClass::Map: {
      // singleton provenance, one tuple per variable
      std::unordered_set<VarId> used;
      for (const auto& t : tuples) {
        if (t.provenance.vars.size() != 1)
          throw std::invalid_argument("map tuple with non-singleton provenance");
        if (!used.insert(t.provenance.vars[0]).second)
          throw std::invalid_argument("map variable shared by two tuples");
      }
      break;
    }
    case PipelineClass::Fork:
      for (const auto& t : tuples)
        if (t.provenance.vars.size() != 1)
          throw std::invalid_argument("fork tuple with non-singleton provenance");
      break;
    case PipelineClass::Join: {
      if (static_cast<int>(is_dim_var.size()) != n ||
          static_cast<int>(facts_of_dim.size()) != n)
        throw std::invalid_argument("join structure arrays missing");
      std::unordered_set<VarId> used_facts;
      for (const auto& t : tuples) {
        if (t.provenance.vars.size() != 2)
          throw std::invalid_argument("join tuple provenance must pair fact and dim");
        VarId a = t.provenance.vars[0], b = t.provenance.vars[1];
        VarId fact = is_dim_var[a] ? b : a;
        VarId dim = is_dim_var[a] ? a : b;
        if (is_dim_var[fact] || !is_dim_var[dim])
          throw std::invalid_argument("join tuple must reference one fact and one dim variable");
        if (!used_facts.insert(fact).second)
          throw std::invalid_argument("fact variable shared by two tuples");
        const auto& group = facts_of_dim[dim];
        if (std::find(group.begin(), group.end(), fact) == group.end())
          throw std::invalid_argument("fact variable not registered under its dim");
      }
      break;
    }
  }
}

std::vector<int> candidate_dataset(const TrackedDataset& d, const Assignment& v) {
  std::vector<int> out;
  out.reserve(d.tuples.size());
  for (int i = 0; i < static_cast<int>(d.tuples.size()); ++i)
    if (eval_polynomial(d.tuples[i].provenance, v)) out.push_back(i);
  std::sort(out.begin(), out.end(), [&](int a, int b) {
    return d.tuples[a].tiebreak_rank < d.tuples[b].tiebreak_rank;
  });
  return out;
}

PipelineSpec PipelineSpec::identity_map(int num_labels) {
  PipelineSpec s;
  s.num_labels = num_labels;
  s.ops.push_back(PipelineOp{PipelineOp::Kind::Identity});
  return s;
}

PipelineSpec PipelineSpec::fork(int group_count, int num_labels) {
  PipelineSpec s;
  s.num_labels = num_labels;
  PipelineOp op;
  op.kind = PipelineOp::Kind::ForkByProvider;
  op.group_count = group_count;
  s.ops.push_back(op);
  return s;
}

PipelineSpec PipelineSpec::star_join(int num_labels) {
  PipelineSpec s;
  s.num_labels = num_labels;
  s.ops.push_back(PipelineOp{PipelineOp::Kind::Join});
  return s;
}

PipelineOp freeze_reduce(PipelineOp::Kind kind, const std::vector<std::vector<double>>& full_input) {
  PipelineOp op;
  op.kind = kind;
  op.frozen = true;
  if (kind == PipelineOp::Kind::StandardScaler) {
    if (full_input.empty()) throw std::invalid_argument("cannot freeze scaler on empty input");
    const std::size_t dim = full_input[0].size();
    op.means.assign(dim, 0.0);
    op.stds.assign(dim, 0.0);
    for (const auto& row : full_input)
      for (std::size_t j = 0; j < dim; ++j) op.means[j] += row[j];
    for (std::size_t j = 0; j < dim; ++j) op.means[j] /= static_cast<double>(full_input.size());
    for (const auto& row : full_input)
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = row[j] - op.means[j];
        op.stds[j] += d * d;
      }
    for (std::size_t j = 0; j < dim; ++j) {
      op.stds[j] = std::sqrt(op.stds[j] / static_cast<double>(full_input.size()));
      if (op.stds[j] == 0.0) op.stds[j] = 1.0;  // constant column passes through centered
    }
  }
  return op;
}

std::vector<double> apply_map_op(const PipelineOp& op, const std::vector<double>& row) {
  switch (op.kind) {
    case PipelineOp::Kind::Identity:
      return row;
    case PipelineOp::Kind::LogScaler: {
      std::vector<double> out(row.size());
      for (std::size_t j = 0; j < row.size(); ++j) out[j] = std::log1p(std::abs(row[j]));
      return out;
    }
    case PipelineOp::Kind::StandardScaler: {
      if (!op.frozen) throw std::logic_error("scaler applied before freeze_reduce");
      std::vector<double> out(row.size());
      for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - op.means[j]) / op.stds[j];
      return out;
    }
    default:
      throw std::logic_error("not a map operator");
  }
}

namespace {

std::string row_id(const InputTable& t, std::size_t i, const char* prefix) {
  if (i < t.ids.size() && !t.ids[i].empty()) return t.ids[i];
  return std::string(prefix) + std::to_string(i);
}

}  // namespace

TrackedDataset apply_pipeline(const PipelineSpec& spec, const InputTable& primary,
                              const InputTable* dim) {
  if (primary.features.size() != primary.labels.size())
    throw std::invalid_argument("feature/label count mismatch");

  PipelineClass cls = PipelineClass::Map;
  int group_count = 0;
  std::vector<PipelineOp> map_ops;
  for (const auto& op : spec.ops) {
    switch (op.kind) {
      case PipelineOp::Kind::ForkByProvider:
        cls = PipelineClass::Fork;
        group_count = op.group_count;
        break;
      case PipelineOp::Kind::Join:
        cls = PipelineClass::Join;
        break;
      default: {
        PipelineOp frozen = op;
        if (op.kind == PipelineOp::Kind::StandardScaler && !op.frozen)
          frozen = freeze_reduce(op.kind, primary.features);
        map_ops.push_back(frozen);
        break;
      }
    }
  }

  TrackedDataset d;
  d.pipeline_class = cls;
  d.num_labels = spec.num_labels;
  const int n_rows = static_cast<int>(primary.features.size());

  auto mapped = [&](const std::vector<double>& row) {
    std::vector<double> out = row;
    for (const auto& op : map_ops) out = apply_map_op(op, out);
    return out;
  };

  if (cls == PipelineClass::Map) {
    std::vector<std::string> names;
    names.reserve(n_rows);
    for (int i = 0; i < n_rows; ++i) names.push_back("a_" + row_id(primary, i, "r"));
    d.variables = VariableSet(std::move(names));
    for (int i = 0; i < n_rows; ++i) {
      TrackedTuple t;
      t.features = mapped(primary.features[i]);
      t.label = primary.labels[i];
      t.provenance = ProvenancePolynomial::of({i});
      t.source_id = row_id(primary, i, "r");
      t.tiebreak_rank = i;
      d.tuples.push_back(std::move(t));
    }
  } else if (cls == PipelineClass::Fork) {
    if (group_count <= 0) throw std::invalid_argument("fork requires a positive group count");
    if (group_count > n_rows) group_count = n_rows;
    std::vector<std::string> names;
    for (int g = 0; g < group_count; ++g) names.push_back("a_provider" + std::to_string(g));
    d.variables = VariableSet(std::move(names));
    // contiguous blocks; earlier blocks absorb the remainder
    const int base = group_count > 0 ? n_rows / group_count : 0;
    const int extra = group_count > 0 ? n_rows % group_count : 0;
    int row = 0;
    for (int g = 0; g < group_count; ++g) {
      const int take = base + (g < extra ? 1 : 0);
      for (int k = 0; k < take; ++k, ++row) {
        TrackedTuple t;
        t.features = mapped(primary.features[row]);
        t.label = primary.labels[row];
        t.provenance = ProvenancePolynomial::of({g});
        t.source_id = row_id(primary, row, "r");
        t.tiebreak_rank = row;
        d.tuples.push_back(std::move(t));
      }
    }
  } else {
    if (dim == nullptr) throw std::invalid_argument("join requires a dimension table");
    if (primary.keys.size() != primary.features.size() ||
        dim->keys.size() != dim->features.size())
      throw std::invalid_argument("join requires key columns on both tables");
    std::unordered_map<long long, int> dim_by_key;
    for (int j = 0; j < static_cast<int>(dim->keys.size()); ++j)
      if (!dim_by_key.emplace(dim->keys[j], j).second)
        throw std::invalid_argument("duplicate dimension key");

    // variable order: each dim variable, immediately followed by the fact
    // variables of the rows that join to it
    std::vector<std::vector<int>> facts_by_dim(dim->keys.size());
    for (int i = 0; i < n_rows; ++i) {
      auto it = dim_by_key.find(primary.keys[i]);
      if (it == dim_by_key.end())
        throw std::invalid_argument("fact row " + std::to_string(i) + " references key " +
                                    std::to_string(primary.keys[i]) +
                                    " with no matching dimension row");
      facts_by_dim[it->second].push_back(i);
    }

    std::vector<std::string> names;
    std::vector<VarId> fact_var(n_rows, -1);
    std::vector<VarId> dim_var(dim->keys.size(), -1);
    for (int j = 0; j < static_cast<int>(dim->keys.size()); ++j) {
      if (facts_by_dim[j].empty()) continue;  // unreferenced dim rows carry no variable
      dim_var[j] = static_cast<VarId>(names.size());
      names.push_back("a_dim_" + row_id(*dim, j, "d"));
      for (int i : facts_by_dim[j]) {
        fact_var[i] = static_cast<VarId>(names.size());
        names.push_back("a_" + row_id(primary, i, "r"));
      }
    }
    d.variables = VariableSet(std::move(names));
    d.is_dim_var.assign(d.variables.size(), false);
    d.facts_of_dim.assign(d.variables.size(), {});
    for (int j = 0; j < static_cast<int>(dim->keys.size()); ++j) {
      if (dim_var[j] < 0) continue;
      d.is_dim_var[dim_var[j]] = true;
      for (int i : facts_by_dim[j]) d.facts_of_dim[dim_var[j]].push_back(fact_var[i]);
    }
    for (int i = 0; i < n_rows; ++i) {
      const int j = dim_by_key.at(primary.keys[i]);
      std::vector<double> row = primary.features[i];
      row.insert(row.end(), dim->features[j].begin(), dim->features[j].end());
      TrackedTuple t;
      t.features = mapped(row);
      t.label = primary.labels[i];
      t.provenance = ProvenancePolynomial::of({fact_var[i], dim_var[j]});
      t.source_id = row_id(primary, i, "r");
      t.tiebreak_rank = i;
      d.tuples.push_back(std::move(t));
    }
  }
  d.validate();
  return d;
}

}  // namespace provlens

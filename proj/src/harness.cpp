#include "provlens/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace provlens {

namespace {

using ojson = nlohmann::ordered_json;

[[noreturn]] void csv_error(const std::string& path, int row, const std::string& msg) {
  throw std::runtime_error(path + ":" + std::to_string(row) + ": " + msg);
}

std::vector<std::string> split_csv_line(const std::string& line, const std::string& path,
                                        int row) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      if (!cur.empty()) csv_error(path, row, "quote inside unquoted field");
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) csv_error(path, row, "unterminated quoted field");
  out.push_back(cur);
  return out;
}

int column_index(const CsvTable& csv, const std::string& name, const std::string& what) {
  for (std::size_t i = 0; i < csv.header.size(); ++i)
    if (csv.header[i] == name) return static_cast<int>(i);
  throw std::runtime_error(what + ": missing column '" + name + "'");
}

double parse_double(const std::string& s, const std::string& path, int row,
                    const std::string& col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    csv_error(path, row, "non-numeric value '" + s + "' in feature column '" + col + "'");
  }
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * (static_cast<double>(v.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  CsvTable t;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (row == 1) {
      t.header = split_csv_line(line, path, row);
      continue;
    }
    if (line.empty()) continue;
    auto fields = split_csv_line(line, path, row);
    if (fields.size() != t.header.size())
      csv_error(path, row, "expected " + std::to_string(t.header.size()) + " fields, got " +
                               std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw std::runtime_error(path + ": empty file (header required)");
  if (t.rows.empty()) throw std::runtime_error(path + ": no data rows");
  return t;
}

int LabelCodec::encode(const std::string& s, bool allow_new) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return static_cast<int>(i);
  if (!allow_new) throw std::runtime_error("unknown categorical value '" + s + "'");
  names.push_back(s);
  return static_cast<int>(names.size()) - 1;
}

InputTable load_input_table(const CsvTable& csv, const ColumnSpec& cols, LabelCodec& labels,
                            const std::string& what) {
  InputTable t;
  std::vector<int> fidx;
  for (const auto& c : cols.feature_columns) fidx.push_back(column_index(csv, c, what));
  const int lidx = cols.label_column.empty() ? -1 : column_index(csv, cols.label_column, what);
  const int kidx = cols.key_column.empty() ? -1 : column_index(csv, cols.key_column, what);
  const int iidx = cols.id_column.empty() ? -1 : column_index(csv, cols.id_column, what);
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const int file_row = static_cast<int>(r) + 2;  // 1-based, after header
    std::vector<double> f;
    for (std::size_t j = 0; j < fidx.size(); ++j)
      f.push_back(parse_double(row[fidx[j]], what, file_row, cols.feature_columns[j]));
    t.features.push_back(std::move(f));
    if (lidx >= 0) t.labels.push_back(labels.encode(row[lidx], true));
    if (kidx >= 0) {
      try {
        t.keys.push_back(std::stoll(row[kidx]));
      } catch (const std::exception&) {
        csv_error(what, file_row, "non-integer join key '" + row[kidx] + "'");
      }
    }
    if (iidx >= 0) t.ids.push_back(row[iidx]);
  }
  return t;
}

std::vector<ValidationTuple> load_validation_set(const CsvTable& csv, const ColumnSpec& cols,
                                                 LabelCodec& labels, LabelCodec& groups,
                                                 const std::string& what) {
  std::vector<ValidationTuple> out;
  std::vector<int> fidx;
  for (const auto& c : cols.feature_columns) fidx.push_back(column_index(csv, c, what));
  const int lidx = column_index(csv, cols.label_column, what);
  const int gidx = cols.group_column.empty() ? -1 : column_index(csv, cols.group_column, what);
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const int file_row = static_cast<int>(r) + 2;
    ValidationTuple v;
    for (std::size_t j = 0; j < fidx.size(); ++j)
      v.features.push_back(parse_double(row[fidx[j]], what, file_row, cols.feature_columns[j]));
    v.label = labels.encode(row[lidx], true);
    if (gidx >= 0) v.group = groups.encode(row[gidx], true);
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corruption

std::pair<TrackedDataset, std::vector<Label>> corrupt_labels(const TrackedDataset& d,
                                                             const CorruptionConfig& cfg,
                                                             std::uint64_t seed) {
  TrackedDataset out = d;
  std::vector<Label> original;
  original.reserve(d.tuples.size());
  for (const auto& t : d.tuples) original.push_back(t.label);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int Y = d.num_labels;
  auto flip = [&](Label old) {
    if (Y < 2) return old;
    std::uniform_int_distribution<int> pick(1, Y - 1);
    return static_cast<Label>((old + pick(rng)) % Y);
  };
  if (d.pipeline_class == PipelineClass::Fork) {
    const int P = d.variables.size();
    std::vector<double> rate(P, cfg.flip_probability);
    for (int g = 0; g < P; ++g) rate[g] = P > 1 ? static_cast<double>(g) / (P - 1) : 1.0;
    if (cfg.shuffle_provider_rates) std::shuffle(rate.begin(), rate.end(), rng);
    for (auto& t : out.tuples) {
      const double p = rate[t.provenance.vars[0]];
      if (unif(rng) < p) t.label = flip(t.label);
    }
  } else {
    for (auto& t : out.tuples)
      if (unif(rng) < cfg.flip_probability) t.label = flip(t.label);
  }
  return {std::move(out), std::move(original)};
}

const char* to_string(RepairMethod m) {
  switch (m) {
    case RepairMethod::Random: return "random";
    case RepairMethod::Datascope: return "datascope";
    case RepairMethod::DatascopeInteractive: return "datascope_interactive";
    case RepairMethod::TmcX10: return "tmc_x10";
    case RepairMethod::TmcX100: return "tmc_x100";
    case RepairMethod::BruteForce: return "brute_force";
  }
  return "?";
}

RepairMethod repair_method_from_string(const std::string& s) {
  for (RepairMethod m : {RepairMethod::Random, RepairMethod::Datascope,
                         RepairMethod::DatascopeInteractive, RepairMethod::TmcX10,
                         RepairMethod::TmcX100, RepairMethod::BruteForce})
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown repair method: " + s);
}

double test_metric(const TrackedDataset& d, const std::vector<ValidationTuple>& test_set, int K,
                   UtilityKind kind) {
  std::vector<Label> pred;
  pred.reserve(test_set.size());
  for (const auto& t : test_set) pred.push_back(knn_predict_full(d, t, K).value_or(0));
  if (kind == UtilityKind::EqoddsDiff) return eqodds_diff_direct(pred, test_set);
  int num = 0, den = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const Label y = test_set[i].label;
    const Label p = pred[i];
    switch (kind) {
      case UtilityKind::Accuracy: den++; num += p == y; break;
      case UtilityKind::Fnr: if (y == 1) { den++; num += p == 0; } break;
      case UtilityKind::Tpr: if (y == 1) { den++; num += p == 1; } break;
      case UtilityKind::Fpr: if (y == 0) { den++; num += p == 1; } break;
      case UtilityKind::Tnr: if (y == 0) { den++; num += p == 0; } break;
      case UtilityKind::EqoddsDiff: break;
    }
  }
  return den ? static_cast<double>(num) / den : 0.0;
}

// ---------------------------------------------------------------------------
// Repair simulation

namespace {

// Units of repair: variables for fork (providers), tuples otherwise.
std::vector<std::vector<int>> unit_tuples(const TrackedDataset& d) {
  std::vector<std::vector<int>> units;
  if (d.pipeline_class == PipelineClass::Fork) {
    units = d.tuples_of_var();
  } else {
    for (int t = 0; t < static_cast<int>(d.tuples.size()); ++t) units.push_back({t});
  }
  return units;
}

// Importance of a unit = Shapley value of its variable (fork: the provider
// variable; map: the tuple's variable; join: the tuple's fact variable).
VarId unit_variable(const TrackedDataset& d, const std::vector<std::vector<int>>& units,
                    int unit) {
  if (d.pipeline_class == PipelineClass::Fork) return static_cast<VarId>(unit);
  const auto& p = d.tuples[units[unit][0]].provenance;
  if (d.pipeline_class == PipelineClass::Map) return p.vars[0];
  for (VarId v : p.vars)
    if (!d.is_dim_var[v]) return v;
  throw std::logic_error("join tuple without a fact variable");
}

struct TimedImportance {
  std::vector<double> phi;  // per variable
  double seconds = 0.0;
};

TimedImportance compute_importance(const TrackedDataset& d,
                                   const std::vector<ValidationTuple>& val_set,
                                   const SimulationConfig& cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const TupleWiseUtility ut = make_utility(cfg.utility, val_set, d, cfg.K);
  ShapleyOptions opt;
  opt.threads = cfg.threads;
  ShapleyReport rep;
  switch (cfg.method) {
    case RepairMethod::Datascope:
    case RepairMethod::DatascopeInteractive:
      rep = shapley_auto(d, val_set, cfg.K, ut, opt);
      break;
    case RepairMethod::TmcX10:
    case RepairMethod::TmcX100: {
      TmcOptions topt;
      topt.iterations = cfg.method == RepairMethod::TmcX10 ? 10 : 100;
      topt.seed = seed;
      topt.threads = cfg.threads;
      rep = tmc_shapley(d, val_set, cfg.K, ut, topt);
      break;
    }
    case RepairMethod::BruteForce:
      rep = brute_force_shapley(d, val_set, cfg.K, ut, cfg.brute_force_cap);
      break;
    case RepairMethod::Random:
      throw std::logic_error("random method has no importance");
  }
  TimedImportance out;
  out.phi = std::move(rep.values);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace

SimulationResult run_repair_simulation(const TrackedDataset& clean,
                                       const std::vector<ValidationTuple>& val_set,
                                       const std::vector<ValidationTuple>& test_set,
                                       const SimulationConfig& cfg) {
  if (cfg.checkpoints < 1) throw std::invalid_argument("need at least one checkpoint");
  SimulationResult res;
  const int C = cfg.checkpoints;
  std::vector<std::vector<double>> metric(C);      // per checkpoint, per rep
  std::vector<std::vector<double>> imp_secs(C);

  for (int r = 0; r < cfg.repetitions; ++r) {
    const std::uint64_t seed_r = cfg.seed + static_cast<std::uint64_t>(r) * 0x9E3779B97F4A7C15ull;
    auto [cur, truth] = corrupt_labels(clean, cfg.corruption, seed_r);
    const auto units = unit_tuples(cur);
    const int U = static_cast<int>(units.size());

    std::vector<int> order;
    double imp_elapsed = 0.0;
    const bool interactive = cfg.method == RepairMethod::DatascopeInteractive;
    if (cfg.method == RepairMethod::Random) {
      order.resize(U);
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(seed_r ^ 0xD1B54A32D192ED03ull);
      std::shuffle(order.begin(), order.end(), rng);
    } else if (!interactive) {
      const TimedImportance imp = compute_importance(cur, val_set, cfg, seed_r);
      imp_elapsed += imp.seconds;
      order.resize(U);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return imp.phi[unit_variable(cur, units, a)] < imp.phi[unit_variable(cur, units, b)];
      });
    }

    std::vector<char> repaired(U, 0);
    auto repair_unit = [&](int u) {
      for (int t : units[u]) cur.tuples[t].label = truth[t];
      repaired[u] = 1;
    };
    int done = 0;
    std::vector<int> rep_order;
    for (int c = 0; c < C; ++c) {
      const double frac = static_cast<double>(c + 1) / C;
      const int target = static_cast<int>(std::llround(frac * U));
      while (done < target) {
        int u;
        if (interactive) {
          const TimedImportance imp = compute_importance(cur, val_set, cfg, seed_r);
          imp_elapsed += imp.seconds;
          u = -1;
          double best = 0.0;
          for (int cand = 0; cand < U; ++cand) {
            if (repaired[cand]) continue;
            const double v = imp.phi[unit_variable(cur, units, cand)];
            if (u < 0 || v < best) {
              u = cand;
              best = v;
            }
          }
        } else {
          u = order[done];
        }
        repair_unit(u);
        rep_order.push_back(u);
        ++done;
      }
      metric[c].push_back(test_metric(cur, test_set, cfg.K, cfg.utility));
      imp_secs[c].push_back(imp_elapsed);
    }
    std::vector<double> curve(C);
    for (int c = 0; c < C; ++c) curve[c] = metric[c][r];
    res.metric_by_seed.push_back(std::move(curve));
    res.repair_order_by_seed.push_back(std::move(rep_order));
  }

  res.checkpoints.resize(C);
  for (int c = 0; c < C; ++c) {
    CheckpointReport& cp = res.checkpoints[c];
    cp.fraction_examined = static_cast<double>(c + 1) / C;
    cp.metric_median = percentile(metric[c], 0.5);
    cp.metric_p10 = percentile(metric[c], 0.1);
    cp.metric_p90 = percentile(metric[c], 0.9);
    cp.importance_seconds = percentile(imp_secs[c], 0.5);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Synthetic instances

TrackedDataset make_synthetic(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> lab(0, spec.num_labels - 1);
  InputTable primary;
  for (int i = 0; i < spec.rows; ++i) {
    const Label y = lab(rng);
    std::vector<double> f(spec.features);
    for (double& x : f) x = 2.0 * y + noise(rng);  // label-dependent cluster means
    primary.features.push_back(std::move(f));
    primary.labels.push_back(y);
  }
  switch (spec.cls) {
    case PipelineClass::Map:
      return apply_pipeline(PipelineSpec::identity_map(spec.num_labels), primary);
    case PipelineClass::Fork:
      return apply_pipeline(PipelineSpec::fork(spec.providers, spec.num_labels), primary);
    case PipelineClass::Join: {
      InputTable dim;
      std::uniform_int_distribution<int> pick(0, spec.dim_rows - 1);
      for (int j = 0; j < spec.dim_rows; ++j) {
        dim.features.push_back({noise(rng)});
        dim.keys.push_back(j);
      }
      for (int i = 0; i < spec.rows; ++i) primary.keys.push_back(pick(rng));
      return apply_pipeline(PipelineSpec::star_join(spec.num_labels), primary, &dim);
    }
  }
  throw std::logic_error("unreachable");
}

std::vector<ValidationTuple> make_synthetic_val(int n, int features, int num_labels, int groups,
                                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> lab(0, num_labels - 1);
  std::vector<ValidationTuple> out;
  for (int i = 0; i < n; ++i) {
    ValidationTuple v;
    v.label = lab(rng);
    v.features.resize(features);
    for (double& x : v.features) x = 2.0 * v.label + noise(rng);
    if (groups > 0) v.group = static_cast<int>(rng() % groups);
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmarking

double fit_loglog_slope(const std::vector<BenchmarkPoint>& points) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int n = static_cast<int>(points.size());
  for (const auto& p : points) {
    const double x = std::log(static_cast<double>(p.n));
    const double y = std::log(std::max(p.seconds, 1e-12));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

BenchmarkResult benchmark_scaling(PipelineClass cls, int K, UtilityKind kind,
                                  const std::vector<int>& sizes, int val_size,
                                  std::uint64_t seed, const ShapleyOptions& opt,
                                  GeneralRoute force_route) {
  BenchmarkResult res;
  for (int n : sizes) {
    SyntheticSpec spec;
    spec.cls = cls;
    spec.rows = n;
    spec.providers = std::max(2, n / 10);
    spec.dim_rows = std::max(2, n / 10);
    spec.seed = seed + n;
    const TrackedDataset d = make_synthetic(spec);
    // join tuples carry the dimension feature as an extra column
    const int val_features = spec.features + (cls == PipelineClass::Join ? 1 : 0);
    const auto val = make_synthetic_val(val_size, val_features, spec.num_labels, 0, seed ^ n);
    const TupleWiseUtility ut = make_utility(kind, val, d, K);
    ShapleyReport rep;
    if (force_route != GeneralRoute::Auto) {
      ShapleyOptions o = opt;
      o.route = force_route;
      rep = shapley_knn_general(d, val, K, ut, o);
      res.method = rep.method;
    } else {
      rep = shapley_auto(d, val, K, ut, opt);
      res.method = rep.method;
    }
    res.points.push_back(BenchmarkPoint{n, rep.wall_seconds});
  }
  res.fitted_slope = fit_loglog_slope(res.points);
  return res;
}

// ---------------------------------------------------------------------------
// Output

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::string variable_source_id(const TrackedDataset& d, VarId v,
                               const std::vector<std::vector<int>>& var_tuples) {
  if (var_tuples[v].empty()) return "";
  return d.tuples[var_tuples[v].front()].source_id;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
}

std::vector<VarId> ranked_variables(const ShapleyReport& rep) {
  std::vector<VarId> order(rep.values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](VarId a, VarId b) { return rep.values[a] < rep.values[b]; });
  return order;
}

}  // namespace

void emit_importance_csv(const ShapleyReport& rep, const TrackedDataset& d,
                         const std::string& path) {
  const auto var_tuples = d.tuples_of_var();
  std::ostringstream os;
  os << "source_id,variable,shapley_value,rank\n";
  const auto order = ranked_variables(rep);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const VarId v = order[r];
    os << variable_source_id(d, v, var_tuples) << "," << d.variables.name(v) << ","
       << format_double(rep.values[v]) << "," << (r + 1) << "\n";
  }
  write_file(path, os.str());
}

void emit_importance_json(const ShapleyReport& rep, const TrackedDataset& d,
                          const std::string& path, const std::string& config_echo) {
  const auto var_tuples = d.tuples_of_var();
  ojson j;
  j["version"] = "1.0.0";
  j["method"] = rep.method;
  j["k"] = rep.K;
  j["utility"] = to_string(rep.utility);
  j["seed"] = rep.seed;
  j["config"] = config_echo;
  ojson rows = ojson::array();
  const auto order = ranked_variables(rep);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const VarId v = order[r];
    ojson e;
    e["source_id"] = variable_source_id(d, v, var_tuples);
    e["variable"] = d.variables.name(v);
    e["shapley_value"] = rep.values[v];
    e["rank"] = r + 1;
    rows.push_back(e);
  }
  j["values"] = rows;
  write_file(path, j.dump(2) + "\n");
}

void emit_simulation_csv(const SimulationResult& sim, const std::string& path) {
  std::ostringstream os;
  os << "checkpoint_fraction,metric_median,metric_p10,metric_p90,importance_seconds\n";
  for (const auto& c : sim.checkpoints)
    os << format_double(c.fraction_examined) << "," << format_double(c.metric_median) << ","
       << format_double(c.metric_p10) << "," << format_double(c.metric_p90) << ","
       << format_double(c.importance_seconds) << "\n";
  write_file(path, os.str());
}

void emit_simulation_json(const SimulationResult& sim, const SimulationConfig& cfg,
                          const std::string& path, const std::string& config_echo) {
  ojson j;
  j["version"] = "1.0.0";
  j["method"] = to_string(cfg.method);
  j["k"] = cfg.K;
  j["utility"] = to_string(cfg.utility);
  j["seed"] = cfg.seed;
  j["repetitions"] = cfg.repetitions;
  j["config"] = config_echo;
  ojson rows = ojson::array();
  for (const auto& c : sim.checkpoints) {
    ojson e;
    e["checkpoint_fraction"] = c.fraction_examined;
    e["metric_median"] = c.metric_median;
    e["metric_p10"] = c.metric_p10;
    e["metric_p90"] = c.metric_p90;
    e["importance_seconds"] = c.importance_seconds;
    rows.push_back(e);
  }
  j["checkpoints"] = rows;
  write_file(path, j.dump(2) + "\n");
}

}  // namespace provlens

#pragma once

// Executable surface: CSV ingestion, label corruption, importance-driven
// repair simulation, scaling benchmarks, and deterministic report output.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "provlens/knn.hpp"
#include "provlens/provenance.hpp"
#include "provlens/shapley.hpp"

namespace provlens {

// ---------------------------------------------------------------------------
// CSV ingestion

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// RFC-4180-style reader: header required, quoted fields supported, UTF-8.
// Throws with row numbers on structural errors; empty file is an error.
CsvTable read_csv(const std::string& path);

// Shared categorical encoding (first-appearance order across calls).
struct LabelCodec {
  std::vector<std::string> names;
  int encode(const std::string& s, bool allow_new);
};

struct ColumnSpec {
  std::vector<std::string> feature_columns;
  std::string label_column;
  std::string group_column;  // optional
  std::string key_column;    // join fact/dim key; optional otherwise
  std::string id_column;     // optional stable ids
};

InputTable load_input_table(const CsvTable& csv, const ColumnSpec& cols, LabelCodec& labels,
                            const std::string& what);
std::vector<ValidationTuple> load_validation_set(const CsvTable& csv, const ColumnSpec& cols,
                                                 LabelCodec& labels, LabelCodec& groups,
                                                 const std::string& what);

// ---------------------------------------------------------------------------
// Corruption and repair simulation

struct CorruptionConfig {
  double flip_probability = 0.5;     // map/join: independent per tuple
  bool shuffle_provider_rates = false;  // fork: permute the 0..100% ladder
};

// Returns the corrupted copy and the original labels. Fork datasets get
// per-provider flip rates linearly spaced from 0% to 100% by provider index.
std::pair<TrackedDataset, std::vector<Label>> corrupt_labels(const TrackedDataset& d,
                                                             const CorruptionConfig& cfg,
                                                             std::uint64_t seed);

enum class RepairMethod { Random, Datascope, DatascopeInteractive, TmcX10, TmcX100, BruteForce };
const char* to_string(RepairMethod m);
RepairMethod repair_method_from_string(const std::string& s);

struct SimulationConfig {
  int K = 1;
  UtilityKind utility = UtilityKind::Accuracy;
  RepairMethod method = RepairMethod::Datascope;
  CorruptionConfig corruption;
  int checkpoints = 100;
  int repetitions = 10;
  std::uint64_t seed = 0;
  int threads = 1;
  int brute_force_cap = 20;
};

struct CheckpointReport {
  double fraction_examined = 0.0;
  double metric_median = 0.0, metric_p10 = 0.0, metric_p90 = 0.0;
  double importance_seconds = 0.0;  // median cumulative across repetitions
};

struct SimulationResult {
  std::vector<CheckpointReport> checkpoints;
  // raw per-repetition curves, checkpoint-major
  std::vector<std::vector<double>> metric_by_seed;
  std::vector<std::vector<int>> repair_order_by_seed;  // unit ids in repair order
};

// Corrupts, repairs one unit at a time (tuples for map/join, providers for
// fork) in the method's order, and measures the K-NN test metric at each
// checkpoint. Repeats over `repetitions` derived seeds.
SimulationResult run_repair_simulation(const TrackedDataset& clean,
                                       const std::vector<ValidationTuple>& val_set,
                                       const std::vector<ValidationTuple>& test_set,
                                       const SimulationConfig& cfg);

// The metric the simulation tracks: accuracy-family utilities report test
// accuracy of the K-NN model; the fairness utility reports the direct
// equalized-odds difference.
double test_metric(const TrackedDataset& d, const std::vector<ValidationTuple>& test_set, int K,
                   UtilityKind kind);

// ---------------------------------------------------------------------------
// Synthetic instances (benchmarks, simulations, tests)

struct SyntheticSpec {
  PipelineClass cls = PipelineClass::Map;
  int rows = 100;
  int features = 2;
  int num_labels = 2;
  int providers = 10;   // fork
  int dim_rows = 10;    // join
  std::uint64_t seed = 0;
};

TrackedDataset make_synthetic(const SyntheticSpec& spec);
std::vector<ValidationTuple> make_synthetic_val(int n, int features, int num_labels, int groups,
                                                std::uint64_t seed);

// ---------------------------------------------------------------------------
// Benchmarking

struct BenchmarkPoint {
  int n = 0;
  double seconds = 0.0;
};
struct BenchmarkResult {
  std::vector<BenchmarkPoint> points;
  double fitted_slope = 0.0;  // least-squares slope on log-log axes
  std::string method;
};

// Times one importance computation per ladder size on synthetic data.
BenchmarkResult benchmark_scaling(PipelineClass cls, int K, UtilityKind kind,
                                  const std::vector<int>& sizes, int val_size,
                                  std::uint64_t seed, const ShapleyOptions& opt,
                                  GeneralRoute force_route = GeneralRoute::Auto);

double fit_loglog_slope(const std::vector<BenchmarkPoint>& points);

// ---------------------------------------------------------------------------
// Report output (byte-deterministic)

std::string format_double(double v);  // %.17g

void emit_importance_csv(const ShapleyReport& rep, const TrackedDataset& d,
                         const std::string& path);
void emit_importance_json(const ShapleyReport& rep, const TrackedDataset& d,
                          const std::string& path, const std::string& config_echo);
void emit_simulation_csv(const SimulationResult& sim, const std::string& path);
void emit_simulation_json(const SimulationResult& sim, const SimulationConfig& cfg,
                          const std::string& path, const std::string& config_echo);

}  // namespace provlens

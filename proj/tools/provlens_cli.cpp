// Command-line front end: importance reports, repair simulations, and
// scaling benchmarks over provenance-tracked CSV pipelines.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "provlens/harness.hpp"

using namespace provlens;

namespace {

struct IoOptions {
  std::string facts_path, dim_path, validation_path, test_path;
  ColumnSpec cols;
  std::string pipeline = "map";
  std::string scaler = "none";
  int providers = 100;
  std::string out_csv, out_json;
};

void add_input_flags(CLI::App* app, IoOptions& io, bool need_test) {
  app->add_option("--facts", io.facts_path, "primary/fact table CSV")->required();
  app->add_option("--dim", io.dim_path, "dimension table CSV (join pipelines)");
  app->add_option("--validation", io.validation_path, "validation set CSV")->required();
  if (need_test) app->add_option("--test", io.test_path, "held-out test set CSV")->required();
  app->add_option("--features", io.cols.feature_columns, "feature column names")
      ->required()
      ->delimiter(',');
  app->add_option("--label", io.cols.label_column, "label column name")->required();
  app->add_option("--group", io.cols.group_column, "sensitive-group column (eqodds)");
  app->add_option("--key", io.cols.key_column, "join key column (both tables)");
  app->add_option("--id", io.cols.id_column, "stable row-id column");
  app->add_option("--pipeline", io.pipeline, "pipeline class")
      ->check(CLI::IsMember({"map", "fork", "join"}))
      ->capture_default_str();
  app->add_option("--scaler", io.scaler, "feature scaler applied tuple-at-a-time")
      ->check(CLI::IsMember({"none", "standard", "log"}))
      ->capture_default_str();
  app->add_option("--providers", io.providers, "provider count (fork pipelines)")
      ->capture_default_str();
  app->add_option("--output-csv", io.out_csv, "CSV report path");
  app->add_option("--output-json", io.out_json, "JSON report path");
}

struct LoadedInstance {
  TrackedDataset dataset;
  std::vector<ValidationTuple> val_set, test_set;
};

LoadedInstance load_instance(const IoOptions& io, bool need_test) {
  LabelCodec labels, groups;
  ColumnSpec fact_cols = io.cols;
  const bool join = io.pipeline == "join";
  if (join && io.cols.key_column.empty())
    throw std::runtime_error("join pipelines need --key");
  if (join && io.dim_path.empty()) throw std::runtime_error("join pipelines need --dim");
  if (!join) fact_cols.key_column.clear();

  InputTable facts = load_input_table(read_csv(io.facts_path), fact_cols, labels, io.facts_path);

  PipelineSpec spec;
  if (io.pipeline == "map") {
    spec = PipelineSpec::identity_map();
  } else if (io.pipeline == "fork") {
    spec = PipelineSpec::fork(io.providers);
  } else {
    spec = PipelineSpec::star_join();
  }
  if (io.scaler == "standard") {
    PipelineOp op;
    op.kind = PipelineOp::Kind::StandardScaler;
    spec.ops.insert(spec.ops.begin(), op);
  } else if (io.scaler == "log") {
    PipelineOp op;
    op.kind = PipelineOp::Kind::LogScaler;
    spec.ops.insert(spec.ops.begin(), op);
  }

  LoadedInstance out;
  InputTable dim;
  if (join) {
    const CsvTable dim_csv = read_csv(io.dim_path);
    ColumnSpec dim_cols;
    dim_cols.key_column = io.cols.key_column;
    // keep whichever of the feature columns the dimension table actually has
    for (const auto& c : io.cols.feature_columns)
      for (const auto& h : dim_csv.header)
        if (h == c) dim_cols.feature_columns.push_back(c);
    dim = load_input_table(dim_csv, dim_cols, labels, io.dim_path);
  }

  ColumnSpec val_cols = io.cols;
  val_cols.key_column.clear();
  val_cols.id_column.clear();
  out.val_set =
      load_validation_set(read_csv(io.validation_path), val_cols, labels, groups, io.validation_path);
  if (need_test)
    out.test_set =
        load_validation_set(read_csv(io.test_path), val_cols, labels, groups, io.test_path);

  spec.num_labels = static_cast<int>(labels.names.size());
  out.dataset = apply_pipeline(spec, facts, join ? &dim : nullptr);
  out.dataset.validate();
  return out;
}

std::string echo_config(const CLI::App& app) { return app.config_to_str(true, false); }

int run(int argc, char** argv) {
  CLI::App app{"Shapley-based data importance over provenance-tracked pipelines"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value config file; flags take precedence");

  // --- shapley -------------------------------------------------------------
  auto* sh = app.add_subcommand("shapley", "compute per-source importance values");
  IoOptions sh_io;
  add_input_flags(sh, sh_io, false);
  int sh_k = 1, sh_threads = 1;
  std::string sh_utility = "accuracy", sh_method = "auto";
  std::uint64_t sh_seed = 0;
  int sh_tmc_iters = 100;
  sh->add_option("-k,--k", sh_k, "number of neighbors")->capture_default_str();
  sh->add_option("--utility", sh_utility, "utility kind")
      ->check(CLI::IsMember({"accuracy", "fnr", "fpr", "tpr", "tnr", "eqodds_diff"}))
      ->capture_default_str();
  sh->add_option("--method", sh_method, "importance method")
      ->check(CLI::IsMember({"auto", "general", "diagram", "quadrature", "tmc", "brute_force"}))
      ->capture_default_str();
  sh->add_option("--threads", sh_threads, "worker threads (1 = serial reference)")
      ->capture_default_str();
  sh->add_option("--seed", sh_seed, "RNG seed (tmc method)")->capture_default_str();
  sh->add_option("--tmc-iterations", sh_tmc_iters, "permutations for --method tmc")
      ->capture_default_str();

  // --- repair-sim ----------------------------------------------------------
  auto* rs = app.add_subcommand("repair-sim", "simulate importance-driven label repair");
  IoOptions rs_io;
  add_input_flags(rs, rs_io, true);
  SimulationConfig sim;
  std::string rs_utility = "accuracy", rs_method = "datascope";
  rs->add_option("-k,--k", sim.K, "number of neighbors")->capture_default_str();
  rs->add_option("--utility", rs_utility, "utility kind")
      ->check(CLI::IsMember({"accuracy", "fnr", "fpr", "tpr", "tnr", "eqodds_diff"}))
      ->capture_default_str();
  rs->add_option("--method", rs_method, "repair-order method")
      ->check(CLI::IsMember({"random", "datascope", "datascope_interactive", "tmc_x10",
                             "tmc_x100", "brute_force"}))
      ->capture_default_str();
  rs->add_option("--flip-probability", sim.corruption.flip_probability,
                 "label corruption rate (map/join)")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  rs->add_flag("--shuffle-provider-rates", sim.corruption.shuffle_provider_rates,
               "permute the fork 0..100% flip-rate ladder");
  rs->add_option("--checkpoints", sim.checkpoints, "measurement checkpoints")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  rs->add_option("--repetitions", sim.repetitions, "seeded repetitions")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  rs->add_option("--seed", sim.seed, "RNG seed")->required();
  rs->add_option("--threads", sim.threads, "worker threads (1 = serial reference)")
      ->capture_default_str();

  // --- benchmark -----------------------------------------------------------
  auto* bm = app.add_subcommand("benchmark", "time importance computation over a size ladder");
  std::string bm_pipeline = "map", bm_utility = "accuracy", bm_route = "auto", bm_out;
  std::vector<int> bm_sizes = {200, 400, 800, 1600, 3200};
  int bm_k = 1, bm_val = 10, bm_threads = 1;
  std::uint64_t bm_seed = 0;
  bm->add_option("--pipeline", bm_pipeline, "pipeline class")
      ->check(CLI::IsMember({"map", "fork", "join"}))
      ->capture_default_str();
  bm->add_option("-k,--k", bm_k, "number of neighbors")->capture_default_str();
  bm->add_option("--utility", bm_utility, "utility kind")->capture_default_str();
  bm->add_option("--sizes", bm_sizes, "training-set size ladder")
      ->delimiter(',')
      ->capture_default_str();
  bm->add_option("--val-size", bm_val, "validation-set size")->capture_default_str();
  bm->add_option("--route", bm_route, "general-engine route")
      ->check(CLI::IsMember({"auto", "diagram", "quadrature"}))
      ->capture_default_str();
  bm->add_option("--seed", bm_seed, "RNG seed for synthetic data")->capture_default_str();
  bm->add_option("--threads", bm_threads, "worker threads")->capture_default_str();
  bm->add_option("--output-csv", bm_out, "CSV report path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  if (sh->parsed()) {
    const LoadedInstance inst = load_instance(sh_io, false);
    const UtilityKind kind = utility_kind_from_string(sh_utility);
    const TupleWiseUtility ut = make_utility(kind, inst.val_set, inst.dataset, sh_k);
    ShapleyOptions opt;
    opt.threads = sh_threads;
    ShapleyReport rep;
    if (sh_method == "auto") {
      rep = shapley_auto(inst.dataset, inst.val_set, sh_k, ut, opt);
    } else if (sh_method == "tmc") {
      TmcOptions topt;
      topt.iterations = sh_tmc_iters;
      topt.seed = sh_seed;
      topt.threads = sh_threads;
      rep = tmc_shapley(inst.dataset, inst.val_set, sh_k, ut, topt);
    } else if (sh_method == "brute_force") {
      rep = brute_force_shapley(inst.dataset, inst.val_set, sh_k, ut);
    } else {
      if (sh_method == "diagram") opt.route = GeneralRoute::Diagram;
      if (sh_method == "quadrature") opt.route = GeneralRoute::Quadrature;
      rep = shapley_knn_general(inst.dataset, inst.val_set, sh_k, ut, opt);
    }
    rep.seed = sh_seed;
    if (sh_io.out_csv.empty() && sh_io.out_json.empty())
      throw std::runtime_error("need --output-csv and/or --output-json");
    if (!sh_io.out_csv.empty()) emit_importance_csv(rep, inst.dataset, sh_io.out_csv);
    if (!sh_io.out_json.empty())
      emit_importance_json(rep, inst.dataset, sh_io.out_json, echo_config(app));
    return 0;
  }

  if (rs->parsed()) {
    const LoadedInstance inst = load_instance(rs_io, true);
    sim.utility = utility_kind_from_string(rs_utility);
    sim.method = repair_method_from_string(rs_method);
    const SimulationResult res =
        run_repair_simulation(inst.dataset, inst.val_set, inst.test_set, sim);
    if (rs_io.out_csv.empty() && rs_io.out_json.empty())
      throw std::runtime_error("need --output-csv and/or --output-json");
    if (!rs_io.out_csv.empty()) emit_simulation_csv(res, rs_io.out_csv);
    if (!rs_io.out_json.empty())
      emit_simulation_json(res, sim, rs_io.out_json, echo_config(app));
    return 0;
  }

  // benchmark
  PipelineClass cls = PipelineClass::Map;
  if (bm_pipeline == "fork") cls = PipelineClass::Fork;
  if (bm_pipeline == "join") cls = PipelineClass::Join;
  ShapleyOptions opt;
  opt.threads = bm_threads;
  GeneralRoute route = GeneralRoute::Auto;
  if (bm_route == "diagram") route = GeneralRoute::Diagram;
  if (bm_route == "quadrature") route = GeneralRoute::Quadrature;
  const BenchmarkResult res = benchmark_scaling(cls, bm_k, utility_kind_from_string(bm_utility),
                                                bm_sizes, bm_val, bm_seed, opt, route);
  std::string csv = "n,seconds\n";
  for (const auto& p : res.points)
    csv += std::to_string(p.n) + "," + format_double(p.seconds) + "\n";
  csv += "# method=" + res.method + " fitted_slope=" + format_double(res.fitted_slope) + "\n";
  if (bm_out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::FILE* f = std::fopen(bm_out.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot write " + bm_out);
    std::fputs(csv.c_str(), f);
    std::fclose(f);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

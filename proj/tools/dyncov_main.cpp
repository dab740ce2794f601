// dyncov command line: simulate, fit, tune, evaluate, classify.
//
// Every command reads a JSON config (strictly validated, unknown keys
// rejected), writes its outputs into --output-dir, and exits 0 on success,
// 2 on config errors, 3 on data errors, 4 on numerical failures.

#include "dyncov/dyncov.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using nlohmann::json;
using namespace dyncov;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string config_path;
  std::string output_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool use_qr = false;
};

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& context) {
  if (!obj.is_object()) {
    throw ConfigError(context + ": expected a JSON object");
  }
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(context + ": unknown key '" + key + "'");
    }
  }
}

template <class T>
T require(const json& obj, const std::string& key, const std::string& context) {
  if (!obj.contains(key)) {
    throw ConfigError(context + ": missing key '" + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(context + ": bad value for '" + key + "'");
  }
}

template <class T>
T optional_or(const json& obj, const std::string& key, T fallback,
              const std::string& context) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(context + ": bad value for '" + key + "'");
  }
}

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config: " + path);
  }
  try {
    return json::parse(in);
  } catch (const json::exception& err) {
    throw ConfigError("config parse error in " + path + ": " + err.what());
  }
}

KernelSpec parse_kernel(const json& obj, const std::string& context) {
  check_keys(obj, {"kind", "length_scale", "variance", "rq_shape"}, context);
  KernelSpec spec;
  spec.kind = kernel_kind_from_string(require<std::string>(obj, "kind", context));
  spec.length_scale = require<double>(obj, "length_scale", context);
  spec.variance = optional_or(obj, "variance", 1.0, context);
  spec.rq_shape = optional_or(obj, "rq_shape", 1.0, context);
  validate(spec);
  return spec;
}

json kernel_to_json(const KernelSpec& spec) {
  return json{{"kind", to_string(spec.kind)},
              {"length_scale", spec.length_scale},
              {"variance", spec.variance},
              {"rq_shape", spec.rq_shape}};
}

FitOptions parse_fit_options(const json& cfg, const CommonFlags& flags,
                             const std::string& context) {
  FitOptions opts;
  if (cfg.contains("fit")) {
    const json& obj = cfg.at("fit");
    check_keys(obj,
               {"step_multiplier", "epsilon_stop", "max_iter", "use_qr", "max_alt_iter",
                "proj_tol"},
               context + ".fit");
    opts.step_multiplier = optional_or(obj, "step_multiplier", opts.step_multiplier, context);
    opts.epsilon_stop = optional_or(obj, "epsilon_stop", opts.epsilon_stop, context);
    opts.max_iter = optional_or(obj, "max_iter", opts.max_iter, context);
    opts.use_qr = optional_or(obj, "use_qr", opts.use_qr, context);
    opts.max_alt_iter = optional_or(obj, "max_alt_iter", opts.max_alt_iter, context);
    opts.proj_tol = optional_or(obj, "proj_tol", opts.proj_tol, context);
  }
  if (flags.use_qr) opts.use_qr = true;
  return opts;
}

std::uint64_t resolve_seed(const json& cfg, const CommonFlags& flags) {
  if (flags.seed) return *flags.seed;
  return optional_or<std::uint64_t>(cfg, "seed", 0, "config");
}

SampleSet load_samples(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") {
    return read_sample_set_csv(path);
  }
  return read_sample_set_binary(path);
}

double max_cov_spectral_norm(const std::vector<Matrix>& covs) {
  double bound = 0.0;
  for (const Matrix& s : covs) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(s, Eigen::EigenvaluesOnly);
    bound = std::max(bound, solver.eigenvalues().maxCoeff());
  }
  return bound;
}

/// Collects files written by a command and removes all of them if the
/// command fails before commit.
class OutputGuard {
 public:
  ~OutputGuard() {
    if (committed_) return;
    for (const std::string& path : written_) {
      std::error_code ec;
      std::filesystem::remove(path, ec);
    }
  }
  void track(const std::string& path) { written_.push_back(path); }
  void commit() { committed_ = true; }

 private:
  std::vector<std::string> written_;
  bool committed_ = false;
};

void write_json(OutputGuard& guard, const std::string& path, const json& value) {
  detail::AtomicFile file(path);
  file.stream() << value.dump(2) << "\n";
  file.commit();
  guard.track(path);
}

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// ---------------------------------------------------------------------------

int cmd_simulate(const CommonFlags& flags) {
  const json cfg = load_config(flags.config_path);
  check_keys(cfg,
             {"P", "K", "J", "N", "block_size", "waveform", "n_knots", "sigma", "kernel",
              "delta_a", "seed", "format", "knot_lo", "knot_hi"},
             "simulate");
  const Index n_vars = require<Index>(cfg, "P", "simulate");
  const Index n_comp = require<Index>(cfg, "K", "simulate");
  const Index n_times = require<Index>(cfg, "J", "simulate");
  const Index n_subjects = require<Index>(cfg, "N", "simulate");
  const Index block_size = require<Index>(cfg, "block_size", "simulate");
  const WaveformKind kind =
      waveform_from_string(require<std::string>(cfg, "waveform", "simulate"));
  const int n_knots = optional_or(cfg, "n_knots", 6, "simulate");
  const double sigma = require<double>(cfg, "sigma", "simulate");
  const KernelSpec kernel = parse_kernel(cfg.at("kernel"), "simulate.kernel");
  const double delta_a = optional_or(cfg, "delta_a", 1e-5, "simulate");
  const double knot_lo = optional_or(cfg, "knot_lo", 0.0, "simulate");
  const double knot_hi = optional_or(cfg, "knot_hi", 1.0, "simulate");
  const std::string format = optional_or<std::string>(cfg, "format", "binary", "simulate");
  if (format != "binary" && format != "csv") {
    throw ConfigError("simulate: format must be 'binary' or 'csv'");
  }
  const std::uint64_t seed = resolve_seed(cfg, flags);

  const TruncatedKernelBasis basis = truncated_basis(build_kernel(kernel, n_times), delta_a);
  const GroundTruth truth = make_ground_truth(n_vars, n_comp, n_times, block_size, kind,
                                              n_knots, sigma, basis, seed, knot_lo, knot_hi);
  Rng rng(seed + 1);
  const SampleSet samples = sample_gaussian(truth, n_subjects, rng);

  OutputGuard guard;
  const std::string samples_file =
      join(flags.output_dir, format == "binary" ? "samples.dcov" : "samples.csv");
  if (format == "binary") {
    write_sample_set_binary(samples_file, samples);
  } else {
    write_sample_set_csv(samples_file, samples);
  }
  guard.track(samples_file);
  write_matrix_csv(join(flags.output_dir, "Vstar.csv"), truth.vstar, "v");
  guard.track(join(flags.output_dir, "Vstar.csv"));
  write_matrix_csv(join(flags.output_dir, "Astar.csv"), truth.astar, "t");
  guard.track(join(flags.output_dir, "Astar.csv"));
  write_json(guard, join(flags.output_dir, "truth.json"),
             json{{"P", n_vars},
                  {"K", n_comp},
                  {"J", n_times},
                  {"N", n_subjects},
                  {"block_size", block_size},
                  {"waveform", to_string(kind)},
                  {"n_knots", n_knots},
                  {"sigma", sigma},
                  {"seed", seed},
                  {"kernel", kernel_to_json(kernel)},
                  {"delta_a", delta_a},
                  {"knot_lo", knot_lo},
                  {"knot_hi", knot_hi},
                  {"s_star", truth.sparsity()},
                  {"c_star", truth.box_bound()},
                  {"gamma_star", truth.gamma_star},
                  {"samples_file", samples_file},
                  {"format", format}});
  guard.commit();
  return 0;
}

int cmd_fit(const CommonFlags& flags) {
  const json cfg = load_config(flags.config_path);
  check_keys(cfg, {"samples", "kernel", "constraints", "fit", "truth_v", "truth_a", "seed"},
             "fit");
  const SampleSet samples = load_samples(require<std::string>(cfg, "samples", "fit"));

  const json& cons = cfg.at("constraints");
  check_keys(cons, {"K", "s", "c", "gamma", "delta_a"}, "fit.constraints");
  ConstraintConfig constraints;
  constraints.n_components = require<Index>(cons, "K", "fit.constraints");
  constraints.sparsity = require<Index>(cons, "s", "fit.constraints");
  constraints.smoothness = require<double>(cons, "gamma", "fit.constraints");
  constraints.delta_a = optional_or(cons, "delta_a", 1e-5, "fit.constraints");
  constraints.kernel = parse_kernel(cfg.at("kernel"), "fit.kernel");
  if (cons.contains("c")) {
    constraints.box_bound = cons.at("c").get<double>();
  } else {
    constraints.box_bound = 1.5 * max_cov_spectral_norm(samples.covariances());
  }

  const FitOptions opts = parse_fit_options(cfg, flags, "fit");
  const std::uint64_t seed = resolve_seed(cfg, flags);

  std::optional<FactorEstimate> truth;
  if (cfg.contains("truth_v") != cfg.contains("truth_a")) {
    throw ConfigError("fit: truth_v and truth_a must be given together");
  }
  if (cfg.contains("truth_v")) {
    truth = FactorEstimate{read_matrix_csv(cfg.at("truth_v").get<std::string>()),
                           read_matrix_csv(cfg.at("truth_a").get<std::string>())};
  }

  const FitResult result =
      fit(samples, constraints, opts, truth ? &*truth : nullptr);

  OutputGuard guard;
  write_matrix_csv(join(flags.output_dir, "V.csv"), result.estimate.v, "v");
  guard.track(join(flags.output_dir, "V.csv"));
  write_matrix_csv(join(flags.output_dir, "A.csv"), result.estimate.a, "t");
  guard.track(join(flags.output_dir, "A.csv"));

  Matrix trace(static_cast<Index>(result.report.objective_trace.size()),
               truth ? 3 : 2);
  for (Index i = 0; i < trace.rows(); ++i) {
    trace(i, 0) = static_cast<double>(i);
    trace(i, 1) = result.report.objective_trace[static_cast<std::size_t>(i)];
    if (truth) trace(i, 2) = result.report.dist_trace[static_cast<std::size_t>(i)];
  }
  write_matrix_csv(join(flags.output_dir, "trace.csv"), trace, "c");
  guard.track(join(flags.output_dir, "trace.csv"));

  write_json(guard, join(flags.output_dir, "report.json"),
             json{{"iterations", result.report.iterations},
                  {"step_size", result.report.step_size},
                  {"objective_initial", result.report.objective_trace.front()},
                  {"objective_final", result.report.objective_trace.back()},
                  {"wall_time_s", result.report.wall_time_s},
                  {"use_qr", opts.use_qr},
                  {"zero_column_events", result.report.zero_column_events},
                  {"infeasible_row_events", result.report.infeasible_row_events},
                  {"c", constraints.box_bound},
                  {"seed", seed}});
  guard.commit();
  return 0;
}

int cmd_evaluate(const CommonFlags& flags) {
  const json cfg = load_config(flags.config_path);
  check_keys(cfg, {"estimate_v", "estimate_a", "truth_v", "truth_a", "eig_floor"},
             "evaluate");
  const FactorEstimate estimate{
      read_matrix_csv(require<std::string>(cfg, "estimate_v", "evaluate")),
      read_matrix_csv(require<std::string>(cfg, "estimate_a", "evaluate"))};
  const FactorEstimate truth{
      read_matrix_csv(require<std::string>(cfg, "truth_v", "evaluate")),
      read_matrix_csv(require<std::string>(cfg, "truth_a", "evaluate"))};
  const double eig_floor = optional_or(cfg, "eig_floor", 1e-5, "evaluate");

  const double d2 = dist_squared(estimate, truth);
  const std::vector<Matrix> sig = covariances_from(estimate);
  const std::vector<Matrix> sig_star = covariances_from(truth);
  const double log_euclidean = avg_log_euclidean(sig, sig_star, eig_floor);

  Matrix per_time(static_cast<Index>(sig.size()), 3);
  for (Index j = 0; j < per_time.rows(); ++j) {
    const std::size_t idx = static_cast<std::size_t>(j);
    per_time(j, 0) = static_cast<double>(j + 1);
    per_time(j, 1) = (sig[idx] - sig_star[idx]).squaredNorm();
    per_time(j, 2) = (log_spd_truncated(sig[idx], eig_floor) -
                      log_spd_truncated(sig_star[idx], eig_floor))
                         .norm();
  }

  OutputGuard guard;
  write_matrix_csv(join(flags.output_dir, "per_time_errors.csv"), per_time, "c");
  guard.track(join(flags.output_dir, "per_time_errors.csv"));
  write_json(guard, join(flags.output_dir, "metrics.json"),
             json{{"dist2", d2}, {"avg_log_euclidean", log_euclidean}});
  guard.commit();
  return 0;
}

int cmd_tune(const CommonFlags& flags) {
  const json cfg = load_config(flags.config_path);
  check_keys(cfg, {"samples", "grid", "kernel", "constraints", "fit", "seed"}, "tune");
  const SampleSet samples = load_samples(require<std::string>(cfg, "samples", "tune"));

  const json& grid_json = cfg.at("grid");
  check_keys(grid_json,
             {"s_values", "K_values", "gamma_values", "l_values", "folds", "ridge",
              "stage1_sweep_gamma_l"},
             "tune.grid");
  TuningGrid grid;
  grid.s_values = require<std::vector<Index>>(grid_json, "s_values", "tune.grid");
  grid.k_values = require<std::vector<Index>>(grid_json, "K_values", "tune.grid");
  grid.gamma_values = require<std::vector<double>>(grid_json, "gamma_values", "tune.grid");
  grid.l_values = require<std::vector<double>>(grid_json, "l_values", "tune.grid");
  grid.folds = optional_or(grid_json, "folds", 5, "tune.grid");
  grid.ridge = optional_or(grid_json, "ridge", 1e-3, "tune.grid");
  grid.stage1_sweep_gamma_l =
      optional_or(grid_json, "stage1_sweep_gamma_l", false, "tune.grid");

  ConstraintConfig defaults;
  defaults.kernel = parse_kernel(cfg.at("kernel"), "tune.kernel");
  if (cfg.contains("constraints")) {
    const json& cons = cfg.at("constraints");
    check_keys(cons, {"c", "delta_a"}, "tune.constraints");
    defaults.delta_a = optional_or(cons, "delta_a", 1e-5, "tune.constraints");
    if (cons.contains("c")) {
      defaults.box_bound = cons.at("c").get<double>();
    } else {
      defaults.box_bound = 1.5 * max_cov_spectral_norm(samples.covariances());
    }
  } else {
    defaults.box_bound = 1.5 * max_cov_spectral_norm(samples.covariances());
  }

  FitOptions opts = parse_fit_options(cfg, flags, "tune");
  opts.rng_seed = resolve_seed(cfg, flags);

  const TuningResult result = tune(samples, grid, defaults, opts);

  Matrix scores(static_cast<Index>(result.stage1.size() + result.stage2.size()), 7);
  Index row = 0;
  const auto emit = [&](const TuningCell& cell, double stage) {
    scores(row, 0) = stage;
    scores(row, 1) = static_cast<double>(cell.sparsity);
    scores(row, 2) = static_cast<double>(cell.n_components);
    scores(row, 3) = cell.gamma;
    scores(row, 4) = cell.length_scale;
    scores(row, 5) = cell.score;
    scores(row, 6) = cell.failed ? 1.0 : 0.0;
    ++row;
  };
  for (const TuningCell& cell : result.stage1) emit(cell, 1);
  for (const TuningCell& cell : result.stage2) emit(cell, 2);

  OutputGuard guard;
  write_matrix_csv(join(flags.output_dir, "scores.csv"), scores, "c");
  guard.track(join(flags.output_dir, "scores.csv"));
  write_json(guard, join(flags.output_dir, "selected.json"),
             json{{"s", result.sparsity},
                  {"K", result.n_components},
                  {"gamma", result.gamma},
                  {"l", result.length_scale},
                  {"ridge_abs", result.ridge_abs}});
  guard.commit();
  return 0;
}

int cmd_classify(const CommonFlags& flags) {
  const json cfg = load_config(flags.config_path);
  check_keys(cfg, {"tasks", "blocks", "labels"}, "classify");
  if (!cfg.contains("tasks") || !cfg.at("tasks").is_array() || cfg.at("tasks").empty()) {
    throw ConfigError("classify: 'tasks' must be a nonempty array");
  }

  std::vector<std::string> task_names;
  std::vector<std::vector<Matrix>> task_covs;
  for (const json& task : cfg.at("tasks")) {
    check_keys(task, {"name", "v", "a"}, "classify.tasks[]");
    task_names.push_back(require<std::string>(task, "name", "classify.tasks[]"));
    const FactorEstimate estimate{
        read_matrix_csv(require<std::string>(task, "v", "classify.tasks[]")),
        read_matrix_csv(require<std::string>(task, "a", "classify.tasks[]"))};
    task_covs.push_back(covariances_from(estimate));
  }

  // blocks.csv rows: block id, position within block, then the P variables
  const Matrix blocks_raw = read_matrix_csv(require<std::string>(cfg, "blocks", "classify"));
  if (blocks_raw.cols() < 3) {
    throw DataFormatError("classify: blocks csv needs block,i,p1.. columns");
  }
  std::map<int, std::vector<std::pair<int, Vector>>> grouped;
  for (Index r = 0; r < blocks_raw.rows(); ++r) {
    grouped[static_cast<int>(blocks_raw(r, 0))].emplace_back(
        static_cast<int>(blocks_raw(r, 1)), blocks_raw.row(r).tail(blocks_raw.cols() - 2));
  }

  std::map<int, std::string> labels;
  if (cfg.contains("labels")) {
    std::ifstream in(cfg.at("labels").get<std::string>());
    if (!in) throw DataFormatError("classify: cannot open labels file");
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto fields = detail::split_csv_line(line);
      if (fields.size() != 2) throw DataFormatError("classify: bad labels row");
      labels[static_cast<int>(detail::parse_double(fields[0], "labels"))] = fields[1];
    }
  }

  std::ostringstream predictions;
  predictions << "block,predicted";
  for (const std::string& name : task_names) predictions << ",score_" << name;
  predictions << "\n";
  int correct = 0;
  int labeled = 0;
  for (auto& [block_id, rows] : grouped) {
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Vector> block;
    block.reserve(rows.size());
    for (auto& [pos, x] : rows) block.push_back(std::move(x));
    const TaskScore score = block_task_score(block, task_covs);
    predictions << block_id << "," << task_names[score.predicted];
    for (double s : score.scores) predictions << "," << detail::format_double(s);
    predictions << "\n";
    if (const auto it = labels.find(block_id); it != labels.end()) {
      ++labeled;
      if (it->second == task_names[score.predicted]) ++correct;
    }
  }

  OutputGuard guard;
  {
    detail::AtomicFile file(join(flags.output_dir, "predictions.csv"));
    file.stream() << predictions.str();
    file.commit();
    guard.track(join(flags.output_dir, "predictions.csv"));
  }
  json summary{{"n_blocks", grouped.size()}};
  if (labeled > 0) {
    summary["accuracy"] = static_cast<double>(correct) / static_cast<double>(labeled);
  } else {
    summary["accuracy"] = nullptr;
  }
  write_json(guard, join(flags.output_dir, "classify.json"), summary);
  guard.commit();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic covariance estimation from multi-subject time series"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::uint64_t seed_flag = 0;
  int threads_flag = 0;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config_path, "JSON config file")->required();
    sub->add_option("--output-dir", flags.output_dir, "output directory");
    sub->add_option("--seed", seed_flag, "seed override")->each([&](const std::string&) {
      flags.seed = seed_flag;
    });
    sub->add_option("--threads", threads_flag, "Eigen thread count")
        ->each([&](const std::string&) { flags.threads = threads_flag; });
    sub->add_flag("--use-qr", flags.use_qr, "orthonormalize V each iteration");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "generate ground truth and samples");
  CLI::App* fit_cmd = app.add_subcommand("fit", "estimate factors from samples");
  CLI::App* tune_cmd = app.add_subcommand("tune", "two-stage hyperparameter selection");
  CLI::App* evaluate = app.add_subcommand("evaluate", "compare an estimate to a truth");
  CLI::App* classify = app.add_subcommand("classify", "score blocks against task models");
  for (CLI::App* sub : {simulate, fit_cmd, tune_cmd, evaluate, classify}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  if (!flags.threads) {
    if (const char* env = std::getenv("DYNCOV_THREADS")) {
      try {
        flags.threads = std::stoi(env);
      } catch (const std::exception&) {
        std::cerr << "error: DYNCOV_THREADS is not an integer\n";
        return 2;
      }
    }
  }
  if (flags.threads) {
    if (*flags.threads < 1) {
      std::cerr << "error: thread count must be positive\n";
      return 2;
    }
    Eigen::setNbThreads(*flags.threads);
  }

  try {
    if (simulate->parsed()) return cmd_simulate(flags);
    if (fit_cmd->parsed()) return cmd_fit(flags);
    if (tune_cmd->parsed()) return cmd_tune(flags);
    if (evaluate->parsed()) return cmd_evaluate(flags);
    if (classify->parsed()) return cmd_classify(flags);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const InvalidParameterError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const DataFormatError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return 4;
  }
  return 2;
}

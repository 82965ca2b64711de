#ifndef KFSC_CLI_HPP
#define KFSC_CLI_HPP

#include "kfsc/core.hpp"
#include "kfsc/eval.hpp"
#include "kfsc/io.hpp"
#include "kfsc/solver.hpp"
#include "kfsc/synth.hpp"
#include "kfsc/types.hpp"
#include "kfsc/variants.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace kfsc::cli {

enum ExitCode : int { kOk = 0, kBadFlags = 2, kDataError = 3, kSolverError = 4 };

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidParams:
    case ErrorCode::InvalidConfig:
      return kBadFlags;
    case ErrorCode::NeedTwoBlocks:
    case ErrorCode::AmbiguousSupport:
    case ErrorCode::EmptyClusterUnrecoverable:
      return kSolverError;
    default:
      return kDataError;
  }
}

inline const std::map<std::string, MatrixFormat>& format_names() {
  static const std::map<std::string, MatrixFormat> names{
      {"csv", MatrixFormat::CsvRowsAreSamples},
      {"csv-rows", MatrixFormat::CsvRowsAreSamples},
      {"csv-cols", MatrixFormat::CsvColsAreSamples},
      {"bin", MatrixFormat::Binary},
  };
  return names;
}

/// Flags shared by fit and bench.
struct ModelFlags {
  Index k = 5;
  Index d = 10;
  std::string lambda = "auto";
  std::string variant = "batch";
  std::string init = "kmeans";
  std::uint64_t seed = 0;
  int kmeans_reps = 10;
  int max_iters = 200;
  double delta = 0.95;
  double gamma = 1.0;
  int inner_d_steps = 5;
  double tol = 1e-4;
  double ridge = 1e-5;
  std::string solver = "gs";
  Index batch_size = 50;
  int epochs = 5;
  int tc = 10;
  int td = 10;
  bool shuffle = false;
  Index landmarks = 0;
  double noise_weight = RobustParams{}.noise_weight;
  std::string noise_norm = "l1";
};

inline void add_model_flags(CLI::App& cmd, ModelFlags& f) {
  cmd.add_option("--k", f.k, "number of clusters")->check(CLI::PositiveNumber);
  cmd.add_option("--d", f.d, "atoms per block")->check(CLI::PositiveNumber);
  cmd.add_option("--lambda", f.lambda, "group-sparsity weight, or 'auto' to estimate it from the initial dictionary");
  cmd.add_option("--variant", f.variant)
      ->check(CLI::IsMember({"batch", "minibatch", "landmark", "robust-sparse", "missing"}));
  cmd.add_option("--init", f.init)->check(CLI::IsMember({"random", "kmeans"}));
  cmd.add_option("--seed", f.seed);
  cmd.add_option("--kmeans-reps", f.kmeans_reps)->check(CLI::PositiveNumber);
  cmd.add_option("--max-iters", f.max_iters)->check(CLI::PositiveNumber);
  cmd.add_option("--delta", f.delta, "extrapolation weight in [0,1)");
  cmd.add_option("--gamma", f.gamma, "step-constant multiplier, >= 1");
  cmd.add_option("--inner-d-steps", f.inner_d_steps)->check(CLI::PositiveNumber);
  cmd.add_option("--tol", f.tol);
  cmd.add_option("--ridge", f.ridge, "small ridge used for initial codes and the residual rule");
  cmd.add_option("--solver", f.solver)->check(CLI::IsMember({"gs", "jacobi"}));
  cmd.add_option("--batch-size", f.batch_size)->check(CLI::PositiveNumber);
  cmd.add_option("--epochs", f.epochs)->check(CLI::PositiveNumber);
  cmd.add_option("--tc", f.tc, "coefficient sweeps per batch")->check(CLI::PositiveNumber);
  cmd.add_option("--td", f.td, "dictionary steps per batch")->check(CLI::PositiveNumber);
  cmd.add_flag("--shuffle", f.shuffle, "reshuffle the batch partition every epoch (seeded by --seed)");
  cmd.add_option("--landmarks", f.landmarks, "landmark count (default n/2)")->check(CLI::NonNegativeNumber);
  cmd.add_option("--noise-weight", f.noise_weight);
  cmd.add_option("--noise-norm", f.noise_norm)->check(CLI::IsMember({"l1", "l21"}));
}

inline HyperParams to_params(const ModelFlags& f) {
  HyperParams p;
  p.k = f.k;
  p.d = f.d;
  if (f.lambda != "auto") {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(f.lambda.data(), f.lambda.data() + f.lambda.size(), v);
    if (ec != std::errc() || ptr != f.lambda.data() + f.lambda.size())
      throw Error(ErrorCode::InvalidParams, "--lambda must be a number or 'auto'");
    p.lambda = v;
  }
  p.max_iters = f.max_iters;
  p.delta = f.delta;
  p.gamma = f.gamma;
  p.inner_d_steps = f.inner_d_steps;
  p.tol = f.tol;
  p.ridge_small = f.ridge;
  p.c_solver = f.solver == "jacobi" ? CSolver::Jacobi : CSolver::GaussSeidel;
  if (f.init == "random")
    p.init = RandomInit{f.seed};
  else
    p.init = KMeansInit{f.seed, f.kmeans_reps, 100, std::nullopt};
  p.validate();
  return p;
}

struct RunOutput {
  FitResult result;
  std::optional<Matrix> imputed;
};

inline RunOutput run_variant(const DataMatrix& X, const ModelFlags& f) {
  const HyperParams params = to_params(f);
  RunOutput out;
  if (f.variant == "batch") {
    out.result = fit(X, params);
  } else if (f.variant == "minibatch") {
    MiniBatchParams mb;
    mb.batch_size = f.batch_size;
    mb.epochs = f.epochs;
    mb.c_passes = f.tc;
    mb.d_steps = f.td;
    if (f.shuffle) mb.shuffle_seed = f.seed;
    out.result = fit_minibatch(X, params, mb);
  } else if (f.variant == "landmark") {
    LandmarkParams lm;
    lm.landmark_count = f.landmarks > 0 ? f.landmarks : std::max<Index>(f.k, X.cols() / 2);
    lm.kmeans_reps = f.kmeans_reps;
    lm.seed = f.seed;
    out.result = fit_landmark(X, params, lm);
  } else if (f.variant == "robust-sparse") {
    RobustParams rp{f.noise_weight, f.noise_norm == "l21" ? NoiseNorm::ColumnwiseL21 : NoiseNorm::ElementwiseL1};
    out.result = fit_robust_sparse(X, params, rp).result;
  } else {
    auto run = fit_missing(X, params);
    out.result = std::move(run.result);
    out.imputed = std::move(run.imputed);
  }
  return out;
}

inline nlohmann::json config_echo(const ModelFlags& f) {
  return {{"k", f.k},
          {"d", f.d},
          {"lambda", f.lambda},
          {"variant", f.variant},
          {"init", f.init},
          {"seed", f.seed},
          {"kmeans_reps", f.kmeans_reps},
          {"max_iters", f.max_iters},
          {"delta", f.delta},
          {"gamma", f.gamma},
          {"inner_d_steps", f.inner_d_steps},
          {"tol", f.tol},
          {"ridge", f.ridge},
          {"solver", f.solver},
          {"batch_size", f.batch_size},
          {"epochs", f.epochs},
          {"tc", f.tc},
          {"td", f.td},
          {"shuffle", f.shuffle},
          {"landmarks", f.landmarks},
          {"noise_weight", f.noise_weight},
          {"noise_norm", f.noise_norm}};
}

/// Machine-readable record of one fit. Only `seconds_per_iter` depends on timing.
inline nlohmann::json run_report(const FitResult& r, const nlohmann::json& config, const std::string& labels_path,
                                 const std::optional<Labels>& truth) {
  nlohmann::json rel = nlohmann::json::array();
  for (const auto& [c, d] : r.state.rel_change_trace) rel.push_back({c, d});
  nlohmann::json report{{"config", config},
                        {"labels_path", labels_path},
                        {"n", r.labels.size()},
                        {"lambda", r.lambda},
                        {"label_rule", r.label_rule},
                        {"iterations", r.state.objective_trace.size()},
                        {"initial_objective", r.state.initial_objective},
                        {"objective_trace", r.state.objective_trace},
                        {"rel_change_trace", rel},
                        {"seconds_per_iter", r.seconds_per_iter},
                        {"peak_elements", r.peak_elements},
                        {"restarts", r.state.restarts},
                        {"notes", r.state.warnings}};
  if (truth) {
    report["acc"] = clustering_accuracy(r.labels, *truth);
    report["nmi"] = nmi(r.labels, *truth);
  }
  return report;
}

inline void write_text(const std::string& path, const std::string& text) { detail::write_file(path, text); }

inline int cmd_fit(const std::string& data_path, const std::string& format, const ModelFlags& f,
                   const std::string& truth_path, const std::string& out_model, const std::string& out_labels,
                   const std::string& out_report, const std::string& out_imputed, std::ostream& err) {
  const DataMatrix X = load_matrix(data_path, format_names().at(format));
  const RunOutput run = run_variant(X, f);
  for (const auto& w : run.result.state.warnings) err << "note: " << w << "\n";
  std::optional<Labels> truth;
  if (!truth_path.empty()) truth = load_labels(truth_path);
  if (!out_labels.empty()) save_labels(out_labels, run.result.labels);
  if (!out_model.empty()) save_model(out_model, Model{run.result.dictionary, run.result.lambda, f.ridge});
  if (!out_report.empty()) write_text(out_report, run_report(run.result, config_echo(f), out_labels, truth).dump(2) + "\n");
  if (!out_imputed.empty()) {
    const Matrix imputed = run.imputed ? *run.imputed : X.values;
    save_matrix(out_imputed, DataMatrix(imputed), format_names().at(format));
  }
  return kOk;
}

inline int cmd_predict(const std::string& model_path, const std::string& data_path, const std::string& format,
                       const std::string& out_labels) {
  const Model model = load_model(model_path);
  const DataMatrix X = load_matrix(data_path, format_names().at(format));
  if (X.rows() != model.dictionary.m())
    throw Error(ErrorCode::ShapeMismatch, "model has m=" + std::to_string(model.dictionary.m()) +
                                              " but data has m=" + std::to_string(X.rows()));
  DataMatrix Xn = normalize_columns(X);
  save_labels(out_labels, assign_by_residual(Xn.values, model.dictionary, model.ridge_small));
  return kOk;
}

struct SynthFlags {
  SynthConfig cfg;
  std::string out_data;
  std::string out_labels;
  std::string format = "bin";
};

inline int cmd_synth(const SynthFlags& f) {
  const SynthData data = generate(f.cfg);
  save_matrix(f.out_data, data.data, format_names().at(f.format));
  if (!f.out_labels.empty()) save_labels(f.out_labels, data.labels);
  return kOk;
}

inline int cmd_eval(const std::string& pred_path, const std::string& truth_path, const std::string& out_path,
                    std::ostream& out) {
  const Labels pred = load_labels(pred_path), truth = load_labels(truth_path);
  const nlohmann::json result{{"acc", clustering_accuracy(pred, truth)}, {"nmi", nmi(pred, truth)}, {"n", pred.size()}};
  if (out_path.empty())
    out << result.dump() << "\n";
  else
    write_text(out_path, result.dump(2) + "\n");
  return kOk;
}

struct BenchFlags {
  std::string sweep = "noise";
  std::vector<double> values;
  int seeds = 10;
  std::string method = "kfsc";
  SynthConfig base;
  std::string out;
};

/// One row per (grid value, seed), flushed as soon as it is computed.
inline int cmd_bench(const BenchFlags& b, const ModelFlags& model, std::ostream& err) {
  if (b.values.empty()) throw Error(ErrorCode::InvalidParams, "--values must list at least one value");
  std::ofstream csv(b.out, std::ios::trunc);
  if (!csv) throw Error(ErrorCode::Io, "cannot open " + b.out + " for writing");
  csv << "setting,seed,acc,nmi,seconds\n" << std::flush;
  for (const double value : b.values) {
    for (int s = 0; s < b.seeds; ++s) {
      SynthConfig cfg = b.base;
      ModelFlags f = model;
      cfg.seed = static_cast<std::uint64_t>(s);
      f.seed = static_cast<std::uint64_t>(s);
      if (b.sweep == "noise") cfg.noise_level = value;
      else if (b.sweep == "sparse") cfg.sparse_density = value;
      else if (b.sweep == "missing") cfg.missing_rate = value;
      else if (b.sweep == "n") cfg.per_cluster = static_cast<Index>(value);
      else if (b.sweep == "d") f.d = static_cast<Index>(value);
      else {
        std::ostringstream text;
        text << value;
        f.lambda = text.str();
      }
      const SynthData data = generate(cfg);
      const auto started = std::chrono::steady_clock::now();
      Labels labels;
      if (b.method == "kpc") {
        const DataMatrix Xn = normalize_columns(data.data);
        labels = kpc_fit(Xn.values, f.k, f.d, f.max_iters, f.seed, KpcInit::KMeans, f.kmeans_reps).labels;
      } else {
        labels = run_variant(data.data, f).result.labels;
      }
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      csv << b.sweep << "=" << value << "," << s << "," << clustering_accuracy(labels, data.labels) << ","
          << nmi(labels, data.labels) << "," << seconds << "\n"
          << std::flush;
      err << b.sweep << "=" << value << " seed " << s << " done\n";
    }
  }
  return kOk;
}

/// Entry point behind the kfsc executable. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"k-factorization subspace clustering"};
  app.require_subcommand(1);

  std::string data, format = "csv", truth, out_model, out_labels, out_report, out_imputed, model_path;
  ModelFlags fit_flags;
  auto* fit_cmd = app.add_subcommand("fit", "cluster a data matrix");
  fit_cmd->add_option("--data", data)->required();
  fit_cmd->add_option("--format", format)->check(CLI::IsMember({"csv", "csv-rows", "csv-cols", "bin"}));
  fit_cmd->add_option("--truth", truth, "ground-truth labels; adds ACC and NMI to the report");
  fit_cmd->add_option("--out-model", out_model);
  fit_cmd->add_option("--out-labels", out_labels);
  fit_cmd->add_option("--out-report", out_report);
  fit_cmd->add_option("--out-imputed", out_imputed, "completed matrix (missing variant)");
  add_model_flags(*fit_cmd, fit_flags);

  auto* predict_cmd = app.add_subcommand("predict", "label data with a saved model");
  predict_cmd->add_option("--model", model_path)->required();
  predict_cmd->add_option("--data", data)->required();
  predict_cmd->add_option("--format", format)->check(CLI::IsMember({"csv", "csv-rows", "csv-cols", "bin"}));
  predict_cmd->add_option("--out-labels", out_labels)->required();

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a union-of-subspaces dataset");
  synth_cmd->add_option("--k", synth.cfg.k)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--m", synth.cfg.ambient_dim, "ambient dimension")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--d0", synth.cfg.subspace_dim, "subspace dimension")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--n0", synth.cfg.per_cluster, "samples per subspace")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--alpha", synth.cfg.similarity, "weight of the shared basis component");
  synth_cmd->add_option("--noise", synth.cfg.noise_level, "dense noise std relative to the clean data");
  synth_cmd->add_option("--sparse-density", synth.cfg.sparse_density);
  synth_cmd->add_option("--missing-rate", synth.cfg.missing_rate);
  synth_cmd->add_option("--seed", synth.cfg.seed);
  synth_cmd->add_option("--out-data", synth.out_data)->required();
  synth_cmd->add_option("--out-labels", synth.out_labels);
  synth_cmd->add_option("--format", synth.format)->check(CLI::IsMember({"csv", "csv-rows", "csv-cols", "bin"}));

  std::string pred_path, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "ACC and NMI between two label files");
  eval_cmd->add_option("--pred", pred_path)->required();
  eval_cmd->add_option("--truth", truth)->required();
  eval_cmd->add_option("--out", eval_out);

  BenchFlags bench;
  ModelFlags bench_model;
  auto* bench_cmd = app.add_subcommand("bench", "sweep a parameter over seeded synthetic datasets");
  bench_cmd->add_option("--sweep", bench.sweep)
      ->check(CLI::IsMember({"noise", "d", "lambda", "sparse", "missing", "n"}));
  bench_cmd->add_option("--values", bench.values)->delimiter(',')->required();
  bench_cmd->add_option("--seeds", bench.seeds)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--method", bench.method)->check(CLI::IsMember({"kfsc", "kpc"}));
  bench_cmd->add_option("--m", bench.base.ambient_dim)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--d0", bench.base.subspace_dim)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--n0", bench.base.per_cluster)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--alpha", bench.base.similarity);
  bench_cmd->add_option("--noise", bench.base.noise_level);
  bench_cmd->add_option("--sparse-density", bench.base.sparse_density);
  bench_cmd->add_option("--missing-rate", bench.base.missing_rate);
  bench_cmd->add_option("--out", bench.out)->required();
  add_model_flags(*bench_cmd, bench_model);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kBadFlags;
  }

  try {
    if (*fit_cmd)
      return cmd_fit(data, format, fit_flags, truth, out_model, out_labels, out_report, out_imputed, err);
    if (*predict_cmd) return cmd_predict(model_path, data, format, out_labels);
    if (*synth_cmd) return cmd_synth(synth);
    if (*eval_cmd) return cmd_eval(pred_path, truth, eval_out, out);
    bench.base.k = bench_model.k;
    return cmd_bench(bench, bench_model, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace kfsc::cli

#endif  // KFSC_CLI_HPP

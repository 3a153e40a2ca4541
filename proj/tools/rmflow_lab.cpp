// rmflow-lab: train, sample, evaluate and ablate one-step flow models from
// JSON run configs.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rmflow/config.hpp"
#include "rmflow/error.hpp"
#include "rmflow/eval.hpp"
#include "rmflow/sample.hpp"
#include "rmflow/tasks.hpp"
#include "rmflow/train.hpp"

namespace fs = std::filesystem;
using namespace rmflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

nlohmann::json normalization_extras(const Task& task) {
  const auto* traj = dynamic_cast<const TrajectoryTask*>(&task);
  if (traj == nullptr) return nlohmann::json::object();
  return {{"normalization", {{"mean", traj->coord_mean()}, {"std", traj->coord_std()}}}};
}

struct TrainOutcome {
  fs::path checkpoint;
  double seconds = 0.0;
};

/// Trains cfg into out_dir: checkpoint.json, metrics.csv, config-echo.json.
TrainOutcome train_into(const RunConfig& cfg, const fs::path& out_dir, bool resume, std::size_t log_every) {
  fs::create_directories(out_dir);
  const auto task = make_task(cfg.task);
  const fs::path ck_path = out_dir / "checkpoint.json";
  const fs::path metrics_path = out_dir / "metrics.csv";
  write_text(out_dir / "config-echo.json", to_json(cfg).dump(2) + "\n");

  TrainSetup setup = make_setup(cfg);
  std::unique_ptr<Trainer> trainer;
  if (resume && fs::exists(ck_path)) {
    const LoadedRun prev = load_run(ck_path.string());
    trainer = std::make_unique<Trainer>(*task, setup, prev.checkpoint);
  } else {
    trainer = std::make_unique<Trainer>(*task, setup);
  }
  trainer->extras = normalization_extras(*task);

  std::ofstream metrics;
  if (trainer->steps_done() > 0) {
    metrics.open(metrics_path, std::ios::app);
  } else {
    metrics.open(metrics_path, std::ios::trunc);
    metrics << metrics_csv_header() << '\n';
  }
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());

  const auto t0 = std::chrono::steady_clock::now();
  try {
    trainer->run(cfg.train.iterations, [&](const MetricsRow& row) {
      metrics << metrics_csv_row(row) << '\n';
      if (log_every > 0 && (row.step + 1) % log_every == 0) {
        std::fprintf(stderr, "[%s/%s] step %zu total %.5g cmfm %.5g nll %.5g lr %.3g\n", cfg.task.c_str(),
                     to_string(cfg.model_kind).c_str(), row.step + 1, row.report.total, row.report.cmfm,
                     row.report.nll, row.lr);
      }
    });
  } catch (const NumericError&) {
    metrics.flush();
    save_checkpoint(trainer->checkpoint(), (out_dir / "checkpoint-at-failure.json").string());
    throw;
  }
  metrics.flush();
  save_checkpoint(trainer->checkpoint(), ck_path.string());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {ck_path, secs};
}

SamplerConfig sampler_from(const RunConfig& cfg, std::optional<std::size_t> nfe, std::optional<std::string> mode,
                           std::optional<std::uint64_t> seed) {
  SamplerConfig s = cfg.sampler;
  if (mode) s.mode = model_kind_from_string(*mode);
  if (nfe) {
    s.nfe = *nfe;
    s.grid.clear();
  }
  if (seed) s.seed = *seed;
  s.validate();
  return s;
}

std::string samples_csv(const Tensor& x, const Tensor* ctx, const std::string& hash, const SamplerConfig& s) {
  std::ostringstream out;
  out.precision(17);
  out << "# checkpoint=" << hash << " seed=" << s.seed << " nfe=" << s.nfe << " mode=" << to_string(s.mode) << '\n';
  const std::size_t d = x.cols();
  const std::size_t c = ctx ? ctx->cols() : 0;
  for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << "x_" << j + 1;
  for (std::size_t j = 0; j < c; ++j) out << ",c_" << j + 1;
  out << '\n';
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << x[i * d + j];
    for (std::size_t j = 0; j < c; ++j) out << ',' << (*ctx)[i * c + j];
    out << '\n';
  }
  return out.str();
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Train, sample and evaluate one-step mean-flow models"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> nfe;
  std::optional<std::string> mode;
  std::string checkpoint_path;
  std::size_t n = 0;
  bool resume = false;
  std::size_t log_every = 1000;
  std::string lambda_grid = "0,1e-2,1e-1,1e1,1e2";
  std::string task_name;

  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("--config", config_path, "Run config JSON")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out", out, "Output directory (default: config out_dir)");
  train->add_flag("--resume", resume, "Continue from <out>/checkpoint.json when present");
  train->add_option("--log-every", log_every, "Progress line interval on stderr (0 disables)");

  auto* sample = app.add_subcommand("sample", "Draw samples from a checkpoint");
  sample->add_option("--checkpoint", checkpoint_path, "checkpoint.json")->required();
  sample->add_option("--n", n, "Number of samples")->default_val(10000);
  sample->add_option("--nfe", nfe, "Network evaluations per sample");
  sample->add_option("--mode", mode, "meanflow or rmflow");
  sample->add_option("--seed", seed, "Sampler seed");
  sample->add_option("--out", out, "Output CSV")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint against its task");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint.json")->required();
  eval->add_option("--task", task_name, "Task (default: the one the checkpoint was trained on)");
  eval->add_option("--n", n, "Number of samples (default: config eval_samples)");
  eval->add_option("--nfe", nfe, "Network evaluations per sample");
  eval->add_option("--mode", mode, "meanflow or rmflow");
  eval->add_option("--seed", seed, "Sampler seed");
  eval->add_option("--out", out, "Report JSON path (default: next to the checkpoint)");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate one model per lambda1 value");
  ablate->add_option("--config", config_path, "Base run config JSON")->required();
  ablate->add_option("--lambda1-grid", lambda_grid, "Comma-separated lambda1 values");
  ablate->add_option("--seed", seed, "Shared seed");
  ablate->add_option("--out", out, "Output directory (default: <out_dir>/ablate)");
  ablate->add_option("--log-every", log_every, "Progress line interval on stderr (0 disables)");

  auto* defaults = app.add_subcommand("print-default-config", "Print the full default config for a task");
  defaults->add_option("task", task_name, "gmm, checkerboard, shift, lorenz, fhn, lorenz-guided, fhn-guided")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*defaults) {
    std::cout << to_json(default_config(task_name)).dump(2) << '\n';
    return kExitOk;
  }

  if (*train) {
    RunConfig cfg = load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    const fs::path dir = out.empty() ? fs::path(cfg.out_dir) : fs::path(out);
    const TrainOutcome r = train_into(cfg, dir, resume, log_every);
    std::fprintf(stderr, "wrote %s (%.1f s)\n", r.checkpoint.string().c_str(), r.seconds);
    return kExitOk;
  }

  if (*sample) {
    const LoadedRun run = load_run(checkpoint_path);
    const SamplerConfig s = sampler_from(run.config, nfe, mode, seed);
    const auto task = make_task(run.config.task);
    Rng root(s.seed);
    std::optional<DataBatch> ctx;
    if (run.encoder) {
      Rng cr = root.split(1);
      ctx = task->reference(cr, n);
    }
    Rng gr = root.split(0);
    const Tensor* c = ctx ? &ctx->context : nullptr;
    const Tensor x = generate(run.net, run.encoder ? &*run.encoder : nullptr, c, n, s, run.config.interp, gr);
    write_text(out, samples_csv(x, c, run.checkpoint_hash, s));
    return kExitOk;
  }

  if (*eval) {
    const LoadedRun run = load_run(checkpoint_path);
    const SamplerConfig s = sampler_from(run.config, nfe, mode, seed);
    const auto task = make_task(task_name.empty() ? run.config.task : task_name);
    const std::size_t count = n > 0 ? n : run.config.eval_samples;
    const EvalReport rep = evaluate_run(run.net, run.encoder ? &*run.encoder : nullptr, *task, s, run.config.interp,
                                        count);
    nlohmann::json j = report_to_json(rep);
    j["checkpoint"] = run.checkpoint_hash;
    const std::string text = j.dump(2) + "\n";
    std::cout << text;
    const fs::path report_path =
        out.empty() ? fs::path(checkpoint_path).parent_path() / ("report-" + rep.model + "-nfe" +
                                                                 std::to_string(rep.nfe) + ".json")
                    : fs::path(out);
    write_text(report_path, text);

    // Histogram dump of generated vs reference for external plotting.
    Rng root(s.seed);
    Rng rr = root.split(1);
    const DataBatch ref = task->reference(rr, count);
    Rng gr = root.split(0);
    const Tensor gen = generate(run.net, run.encoder ? &*run.encoder : nullptr, run.encoder ? &ref.context : nullptr,
                                count, s, run.config.interp, gr);
    const EvalGrid grid = task->eval_grid();
    fs::path hist_path = report_path;
    hist_path.replace_extension(".hist.csv");
    write_text(hist_path, histogram_csv(histogram(ref.x, grid), histogram(gen, grid)));
    return kExitOk;
  }

  if (*ablate) {
    RunConfig base = load_run_config(config_path);
    if (seed) base.seed = *seed;
    base.model_kind = ModelKind::rmflow;
    std::vector<double> grid;
    std::stringstream ss(lambda_grid);
    for (std::string tok; std::getline(ss, tok, ',');) {
      try {
        grid.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ConfigError("--lambda1-grid: cannot parse '" + tok + "'");
      }
    }
    if (grid.empty()) throw ConfigError("--lambda1-grid: empty grid");
    const fs::path dir = out.empty() ? fs::path(base.out_dir) / "ablate" : fs::path(out);
    const auto task = make_task(base.task);
    std::vector<EvalReport> reports;
    for (double l1 : grid) {
      RunConfig cfg = base;
      cfg.loss.lambda1 = l1;
      char name[64];
      std::snprintf(name, sizeof name, "lambda1_%g", l1);
      const TrainOutcome r = train_into(cfg, dir / name, false, log_every);
      const LoadedRun run = load_run(r.checkpoint.string());
      reports.push_back(evaluate_run(run.net, run.encoder ? &*run.encoder : nullptr, *task, cfg.sampler, cfg.interp,
                                     cfg.eval_samples));
    }
    std::ostringstream table;
    table.precision(6);
    table << "metric";
    for (double l1 : grid) table << ',' << l1;
    table << "\nTV";
    for (const auto& r : reports) table << ',' << r.tv;
    table << "\nKL";
    for (const auto& r : reports) table << ',' << r.kl;
    table << '\n';
    write_text(dir / "ablation.csv", table.str());
    std::cout << table.str();
    return kExitOk;
  }
  return kExitOther;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitOther;
  }
}

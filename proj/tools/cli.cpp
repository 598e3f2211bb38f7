#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lipdd/checkpoint.hpp"
#include "lipdd/config.hpp"
#include "lipdd/error.hpp"
#include "lipdd/harness.hpp"
#include "lipdd/lipschitz.hpp"
#include "lipdd/rng.hpp"

namespace lipdd::cli {

namespace {

namespace fs = std::filesystem;

struct ConfigArgs {
  std::optional<std::string> config;
  std::string profile = "desk";
  std::vector<std::string> sets;
  std::vector<std::string> positional;
  std::string out = "runs";
  std::optional<std::size_t> workers;

  std::vector<std::string> overrides() const {
    std::vector<std::string> all = sets;
    all.insert(all.end(), positional.begin(), positional.end());
    return all;
  }
};

void add_config_args(CLI::App* sub, ConfigArgs& a) {
  sub->add_option("-c,--config", a.config, "Experiment config (JSON)");
  sub->add_option("-p,--profile", a.profile, "Built-in profile layer")
      ->check(CLI::IsMember({"desk", "paper"}));
  sub->add_option("-s,--set", a.sets, "Override, e.g. train.base_lr=0.005 (repeatable)");
  sub->add_option("overrides", a.positional, "Overrides as key=value");
  sub->add_option("-o,--out", a.out, "Root directory for run directories");
  sub->add_option("-j,--workers", a.workers,
                  std::string("Worker threads (default: $") + kWorkersEnv + " or all cores)");
}

ExperimentConfig effective_config(const ConfigArgs& a) {
  std::optional<fs::path> path;
  if (a.config) {
    path = *a.config;
    if (!fs::exists(*path)) throw ConfigError("config", "config file not found: " + *a.config);
  }
  return load_config(path, a.profile, a.overrides());
}

RunOptions run_options(const ConfigArgs& a, bool verbose, std::ostream& err) {
  RunOptions o;
  o.workers = a.workers ? *a.workers : default_workers();
  if (o.workers == 0) throw ConfigError("workers", "must be positive");
  if (verbose) o.log = [&err](const std::string& m) { err << m << '\n'; };
  return o;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

int cmd_train(const ConfigArgs& a, std::optional<std::uint64_t> seed_arg, bool verbose,
              std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = effective_config(a);
  const fs::path dir = prepare_run_dir(a.out, cfg);
  const std::uint64_t seed = seed_arg ? *seed_arg : cfg.seeds.front();
  const DatasetPair data = load_datasets(cfg);
  if (verbose) err << "training " << cfg.base_arch(data.train.dim(), data.train.num_classes).name()
                   << " with seed " << seed << " -> " << dir.string() << '\n';

  ExperimentConfig single = cfg;
  single.sweep.axis = SweepAxis::Width;
  single.sweep.values = {static_cast<double>(cfg.model.width)};
  const CellResult cell = run_cell(single, data, cfg.model.width, seed, true);
  const std::string stem = "seed-" + std::to_string(seed);
  {
    std::ostringstream s;
    write_trace_jsonl(s, cell.trace);
    write_file(dir / ("trace-" + stem + ".jsonl"), s.str());
  }
  {
    std::ostringstream s;
    write_records_jsonl(s, cell.records);
    write_file(dir / ("records-" + stem + ".jsonl"), s.str());
  }
  if (cell.error) {
    err << "error: " << *cell.error << '\n';
    return kExitRuntime;
  }
  const std::size_t epoch = cell.trace.epochs.back().epoch;
  save_checkpoint(dir / ("final-" + stem + ".ckpt"), Checkpoint::capture(*cell.network, seed, epoch));
  out << dir.string() << '\n';
  return kExitOk;
}

int cmd_sweep(const ConfigArgs& a, bool verbose, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = effective_config(a);
  const fs::path dir = prepare_run_dir(a.out, cfg);
  if (verbose) err << "sweep " << to_string(cfg.sweep.axis) << " -> " << dir.string() << '\n';
  RunOptions o = run_options(a, verbose, err);
  o.keep_networks = true;
  const DatasetPair pristine = load_pristine(cfg.data);
  std::vector<CellResult> cells;
  const SweepTable table = run_sweep(cfg, pristine, o, &cells);
  write_sweep_outputs(dir, table, cells);
  out << dir.string() << '\n';
  if (!table.failures.empty()) {
    err << table.failures.size() << " cell(s) failed; see failures.jsonl\n";
    return table.summary.empty() ? kExitRuntime : kExitOk;
  }
  return kExitOk;
}

int cmd_biasvar(const ConfigArgs& a, bool verbose, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = effective_config(a);
  const fs::path dir = prepare_run_dir(a.out, cfg);
  if (verbose) err << "bias-variance sweep -> " << dir.string() << '\n';
  const DatasetPair pristine = load_pristine(cfg.data);
  const BiasVarTable table = sweep_biasvar(cfg, pristine, run_options(a, verbose, err));
  std::ostringstream s;
  write_biasvar_csv(s, table);
  write_file(dir / "biasvar.csv", s.str());
  std::ostringstream f;
  for (const auto& fail : table.failures)
    f << nlohmann::json{{"size", fail.size}, {"seed", fail.seed}, {"error", fail.message}}.dump() << '\n';
  write_file(dir / "failures.jsonl", f.str());
  out << dir.string() << '\n';
  if (!table.failures.empty()) err << table.failures.size() << " failure(s); see failures.jsonl\n";
  return table.rows.empty() ? kExitRuntime : kExitOk;
}

struct BoundsArgs {
  std::string checkpoint;
  std::string data;
  std::optional<std::string> test_data;
  bool probe = false;
  std::size_t pairs_per_lambda = 1000;
  std::uint64_t probe_seed = 0;
  bool softmax = false;
  std::size_t max_iters = 1000;
  double rel_tol = 1e-9;
};

DatasetPair bounds_data(const BoundsArgs& b, const ArchSpec& arch) {
  DatasetPair d;
  if (fs::is_directory(b.data)) {
    d = load_cifar10(b.data);
  } else {
    d = read_labeled_csv(b.data, arch.input_size(), arch.output_dim);
  }
  if (b.test_data) d.test = read_labeled_csv(*b.test_data, arch.input_size(), arch.output_dim).train;
  if (d.train.dim() != arch.input_size())
    throw ConfigError("data", "input dimension " + std::to_string(d.train.dim()) +
                                  " does not match the checkpoint's " + std::to_string(arch.input_size()));
  return d;
}

int cmd_bounds(const BoundsArgs& b, std::ostream& out) {
  if (!fs::exists(b.checkpoint)) throw ConfigError("checkpoint", "file not found: " + b.checkpoint);
  if (!fs::exists(b.data)) throw ConfigError("data", "not found: " + b.data);
  const Checkpoint ckpt = load_checkpoint(b.checkpoint);
  const Network net = ckpt.restore();
  const DatasetPair d = bounds_data(b, ckpt.arch);
  ReportOptions o;
  o.power.max_iters = b.max_iters;
  o.power.rel_tol = b.rel_tol;
  o.power.validate();
  o.softmax = b.softmax;
  if (b.probe) o.probe_pairs = b.pairs_per_lambda;
  o.probe_seed = b.probe_seed;
  const LipschitzReport r = compute_report(net, d.train.inputs, &d.test.inputs, o,
                                           Snapshot{ckpt.arch.name(), ckpt.seed, ckpt.epoch});
  out << report_json(r).dump(2) << '\n';
  return kExitOk;
}

int cmd_plot(const std::string& run, const std::string& kind, const std::optional<std::string>& out_path,
             std::ostream& out) {
  const fs::path dir(run);
  if (!fs::is_directory(dir)) throw ConfigError("run", "run directory not found: " + run);
  std::ostringstream s;
  if (kind == "variance-vs-width") {
    std::ifstream in(dir / "biasvar.csv");
    if (!in) throw Error("missing " + (dir / "biasvar.csv").string());
    emit_plot_data(s, read_biasvar_csv(in), kind);
  } else {
    SweepTable table;
    if (std::ifstream in(dir / "summary.csv"); in) table.summary = read_summary_csv(in);
    if (std::ifstream in(dir / "records.jsonl"); in) table.records = read_records_jsonl(in);
    emit_plot_data(s, table, kind);
  }
  if (out_path) {
    write_file(*out_path, s.str());
  } else {
    out << s.str();
  }
  return kExitOk;
}

}  // namespace

void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lipschitz bounds and double descent experiments", "lipdd"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages");
  app.set_version_flag("--version", toolkit_version());

  ConfigArgs train_args, sweep_args, biasvar_args;
  std::optional<std::uint64_t> train_seed;
  auto* train = app.add_subcommand("train", "Train one model; writes a trace and a checkpoint");
  add_config_args(train, train_args);
  train->add_option("--seed", train_seed, "Seed (default: first entry of `seeds`)");

  auto* sweep = app.add_subcommand("sweep", "Run a width/depth/samples/noise sweep");
  add_config_args(sweep, sweep_args);

  auto* biasvar = app.add_subcommand("biasvar", "Bias-variance decomposition over a width sweep");
  add_config_args(biasvar, biasvar_args);

  BoundsArgs bounds_args;
  auto* bounds = app.add_subcommand("bounds", "Lipschitz bounds of a checkpoint as JSON on stdout");
  bounds->add_option("--checkpoint", bounds_args.checkpoint, "Checkpoint file")->required();
  bounds->add_option("--data", bounds_args.data, "Labeled CSV (optionally with a split column) or CIFAR-10 directory")
      ->required();
  bounds->add_option("--test-data", bounds_args.test_data, "Separate test CSV");
  bounds->add_flag("--probe", bounds_args.probe, "Also evaluate the probe set");
  bounds->add_option("--pairs-per-lambda", bounds_args.pairs_per_lambda, "Probe pairs per mixing weight");
  bounds->add_option("--probe-seed", bounds_args.probe_seed, "Probe sampling seed");
  bounds->add_flag("--softmax", bounds_args.softmax, "Also report the softmax-composed lower bound");
  bounds->add_option("--max-iters", bounds_args.max_iters, "Power-iteration cap");
  bounds->add_option("--rel-tol", bounds_args.rel_tol, "Power-iteration relative tolerance");

  std::string plot_run, plot_kind;
  std::optional<std::string> plot_out;
  auto* plot = app.add_subcommand("emit-plot-data", "Plot-ready CSV from a run directory");
  plot->add_option("--run", plot_run, "Run directory")->required();
  plot->add_option("--kind", plot_kind,
                   "bounds-vs-width | bounds-vs-epoch | variance-vs-width | param-dist-vs-width")
      ->required();
  plot->add_option("--out", plot_out, "Output file (default: stdout)");

  std::vector<const char*> argv{"lipdd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << toolkit_version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitConfig;
  }

  const bool verbose = !quiet;
  try {
    if (*train) return cmd_train(train_args, train_seed, verbose, out, err);
    if (*sweep) return cmd_sweep(sweep_args, verbose, out, err);
    if (*biasvar) return cmd_biasvar(biasvar_args, verbose, out, err);
    if (*bounds) return cmd_bounds(bounds_args, out);
    if (*plot) return cmd_plot(plot_run, plot_kind, plot_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace lipdd::cli

#include "lipdd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "lipdd/error.hpp"
#include "lipdd/lipschitz.hpp"
#include "lipdd/rng.hpp"

namespace lipdd {

namespace {

constexpr std::uint64_t kInitStream = 1;

template <class Count>
std::size_t smallest_width(std::size_t target, Count&& count) {
  std::size_t hi = 1;
  while (count(hi) < target) hi *= 2;
  std::size_t lo = hi / 2 + 1;
  if (hi == 1) return 1;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (count(mid) >= target) hi = mid;
    else lo = mid + 1;
  }
  return hi;
}

std::size_t threshold_target(std::size_t n, std::size_t k, LossKind loss) {
  return loss == LossKind::Mse ? k * n : n;
}

Stat stat_of(const std::vector<double>& v) {
  Stat s;
  if (v.empty()) return s;
  double sum = 0.0;
  s.min = s.max = v.front();
  for (double x : v) {
    sum += x;
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
  }
  s.mean = sum / static_cast<double>(v.size());
  return s;
}

bool same_bits(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

bool same_stat(const Stat& a, const Stat& b) {
  return same_bits(a.mean, b.mean) && same_bits(a.min, b.min) && same_bits(a.max, b.max);
}

}  // namespace

const char* toolkit_version() { return LIPDD_VERSION; }

std::size_t default_workers() {
  if (const char* env = std::getenv(kWorkersEnv); env && *env) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end && *end == '\0' && v > 0) return v;
    throw ConfigError(kWorkersEnv, "must be a positive integer, got '" + std::string(env) + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::size_t interpolation_threshold(std::size_t n_samples, std::size_t input_dim,
                                    std::size_t output_dim, LossKind loss, std::size_t depth) {
  if (depth == 0) throw Error("interpolation_threshold: depth must be positive");
  const std::size_t target = threshold_target(n_samples, output_dim, loss);
  return smallest_width(target, [&](std::size_t w) {
    return ArchSpec::ff_relu(std::vector<std::size_t>(depth, w), input_dim, output_dim).param_count();
  });
}

std::size_t cnn_interpolation_threshold(std::size_t n_samples, std::size_t image_side,
                                        std::size_t output_dim, LossKind loss) {
  const std::size_t target = threshold_target(n_samples, output_dim, loss);
  return smallest_width(target, [&](std::size_t w) {
    return ArchSpec::cnn(w, {3, image_side, image_side}, output_dim).param_count();
  });
}

bool SweepRecord::ordered(double rel_slack) const {
  auto le = [rel_slack](double a, double b) { return a <= b + rel_slack * std::abs(b); };
  if (!le(c_avg_norm, c_lower)) return false;
  if (c_probe) return le(c_lower, *c_probe) && le(*c_probe, c_upper);
  return le(c_lower, c_upper);
}

bool SummaryRow::bit_equal(const SummaryRow& o) const {
  return same_bits(size, o.size) && seeds == o.seeds && same_bits(epochs_mean, o.epochs_mean) &&
         same_stat(train_loss, o.train_loss) && same_stat(test_loss, o.test_loss) &&
         same_stat(c_lower, o.c_lower) && same_stat(c_avg_norm, o.c_avg_norm) &&
         same_stat(c_upper, o.c_upper) && same_stat(c_probe, o.c_probe) &&
         same_stat(param_dist, o.param_dist) && same_stat(grad_norm, o.grad_norm) &&
         same_bits(c_lower_sup_of_mean, o.c_lower_sup_of_mean);
}

DatasetPair datasets_for(const ExperimentConfig& cfg, const DatasetPair& pristine, double value) {
  DataConfig data = cfg.data;
  if (cfg.sweep.axis == SweepAxis::Noise) data.shuffle_alpha = value;
  if (cfg.sweep.axis == SweepAxis::Samples) data.subsample = static_cast<std::size_t>(value);
  return apply_mutations(pristine, data);
}

CellResult run_cell(const ExperimentConfig& cfg, const DatasetPair& data, double value,
                    std::uint64_t seed, bool keep_network) {
  CellResult cell;
  cell.size = value;
  cell.seed = seed;
  const std::string hash = cfg.hash();
  try {
    const ArchSpec arch = cfg.arch_at(value, data.train.dim(), data.train.num_classes);
    Network net = Network::init(arch, derive_seed(seed, kInitStream));
    const ParamVector theta0 = net.params();
    const TrainOptions opts = cfg.train_options(seed);
    const PowerIterSettings power = cfg.eval.power;
    const Dataset* test = data.test.size() > 0 ? &data.test : nullptr;
    std::optional<ProbeSet> probe;
    if (cfg.eval.probe_pairs)
      probe.emplace(data.train.inputs, data.test.inputs, *cfg.eval.probe_pairs, cfg.eval.probe_seed);

    auto evaluate = [&](const Network& n, std::size_t epoch, double train_loss, double test_loss,
                        double grad_norm, double eta) {
      SweepRecord r;
      r.config_hash = hash;
      r.size = value;
      r.seed = seed;
      r.epoch = epoch;
      r.train_loss = train_loss;
      r.test_loss = test_loss;
      const LowerBound lb = lower_bound(n, data.train.inputs, power, &cell.final_sample_norms);
      r.c_lower = lb.c_lower;
      r.c_avg_norm = lb.c_avg;
      r.c_upper = upper_bound(n, power);
      if (probe) r.c_probe = probe_bound(n, *probe, power);
      r.param_dist = param_distance(n, theta0);
      r.grad_norm = grad_norm;
      r.eta = eta;
      cell.records.push_back(r);
    };

    {
      const LossGrad full = loss_and_grad(net, data.train.inputs, data.train.labels, opts.loss);
      const double test_loss =
          test ? loss_value(net, test->inputs, test->labels, opts.loss)
               : std::numeric_limits<double>::quiet_NaN();
      evaluate(net, 0, full.loss, test_loss, norm2(full.grad), opts.schedule.coeff(0));
    }
    std::size_t last_logged = 0;
    cell.trace = train(net, data.train, test, opts, [&](const EpochRecord& e, const Network& n) {
      if (cfg.eval.cadence > 0 && e.epoch % cfg.eval.cadence == 0) {
        evaluate(n, e.epoch, e.train_loss, e.test_loss, e.grad_norm, e.eta);
        last_logged = e.epoch;
      }
    });
    const EpochRecord& last = cell.trace.epochs.back();
    if (last.epoch != last_logged)
      evaluate(net, last.epoch, last.train_loss, last.test_loss, last.grad_norm, last.eta);
    if (keep_network) cell.network = std::move(net);
  } catch (const std::exception& e) {
    cell.error = e.what();
  }
  return cell;
}

std::vector<CellResult> run_grid(const ExperimentConfig& cfg, const DatasetPair& pristine,
                                 const RunOptions& options) {
  cfg.validate();
  // Width and depth sweeps share one dataset; the other axes mutate per value.
  std::vector<std::shared_ptr<const DatasetPair>> per_value;
  std::shared_ptr<const DatasetPair> shared;
  for (double v : cfg.sweep.values) {
    const bool mutates = cfg.sweep.axis == SweepAxis::Noise || cfg.sweep.axis == SweepAxis::Samples;
    if (mutates) {
      per_value.push_back(std::make_shared<const DatasetPair>(datasets_for(cfg, pristine, v)));
    } else {
      if (!shared) shared = std::make_shared<const DatasetPair>(datasets_for(cfg, pristine, v));
      per_value.push_back(shared);
    }
  }

  struct Job {
    std::size_t value_index;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < cfg.sweep.values.size(); ++i)
    for (std::uint64_t s : cfg.seeds) jobs.push_back({i, s});

  std::vector<CellResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto log = [&](const std::string& msg) {
    if (!options.log) return;
    std::lock_guard lock(log_mutex);
    options.log(msg);
  };
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const Job& job = jobs[j];
      const double value = cfg.sweep.values[job.value_index];
      log("cell " + std::to_string(j + 1) + "/" + std::to_string(jobs.size()) + ": " +
          to_string(cfg.sweep.axis) + " " + format_double(value) + ", seed " +
          std::to_string(job.seed));
      results[j] = run_cell(cfg, *per_value[job.value_index], value, job.seed, options.keep_networks);
      if (results[j].error) log("  failed: " + *results[j].error);
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(options.workers, 1, std::max<std::size_t>(1, jobs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  return results;
}

std::vector<SummaryRow> summarize(const std::vector<SweepRecord>& final_records,
                                  const std::vector<CellResult>& cells) {
  std::vector<double> sizes;
  for (const auto& r : final_records)
    if (std::find(sizes.begin(), sizes.end(), r.size) == sizes.end()) sizes.push_back(r.size);

  std::vector<SummaryRow> rows;
  for (double size : sizes) {
    SummaryRow row;
    row.size = size;
    std::vector<double> train, test, lower, avg, upper, probe, dist, grad, epochs;
    for (const auto& r : final_records) {
      if (r.size != size) continue;
      train.push_back(r.train_loss);
      test.push_back(r.test_loss);
      lower.push_back(r.c_lower);
      avg.push_back(r.c_avg_norm);
      upper.push_back(r.c_upper);
      if (r.c_probe) probe.push_back(*r.c_probe);
      dist.push_back(r.param_dist);
      grad.push_back(r.grad_norm);
      epochs.push_back(static_cast<double>(r.epoch));
    }
    row.seeds = train.size();
    row.train_loss = stat_of(train);
    row.test_loss = stat_of(test);
    row.c_lower = stat_of(lower);
    row.c_avg_norm = stat_of(avg);
    row.c_upper = stat_of(upper);
    row.c_probe = stat_of(probe);
    row.param_dist = stat_of(dist);
    row.grad_norm = stat_of(grad);
    row.epochs_mean = stat_of(epochs).mean;

    std::vector<const std::vector<double>*> norms;
    for (const auto& c : cells)
      if (!c.error && c.size == size && !c.final_sample_norms.empty()) norms.push_back(&c.final_sample_norms);
    if (!norms.empty() &&
        std::all_of(norms.begin(), norms.end(), [&](auto* v) { return v->size() == norms[0]->size(); })) {
      double best = 0.0;
      for (std::size_t i = 0; i < norms[0]->size(); ++i) {
        double sum = 0.0;
        for (auto* v : norms) sum += (*v)[i];
        best = std::max(best, sum / static_cast<double>(norms.size()));
      }
      row.c_lower_sup_of_mean = best;
    }
    rows.push_back(row);
  }
  return rows;
}

SweepTable make_table(const ExperimentConfig& cfg, const std::vector<CellResult>& cells) {
  SweepTable t;
  t.config_hash = cfg.hash();
  t.axis = cfg.sweep.axis;
  std::vector<SweepRecord> finals;
  for (const auto& c : cells) {
    t.records.insert(t.records.end(), c.records.begin(), c.records.end());
    if (c.error) {
      t.failures.push_back({c.size, c.seed, *c.error});
    } else if (!c.records.empty()) {
      finals.push_back(c.records.back());
    }
  }
  t.summary = summarize(finals, cells);
  return t;
}

SweepTable run_sweep(const ExperimentConfig& cfg, const DatasetPair& pristine,
                     const RunOptions& options, std::vector<CellResult>* cells_out) {
  std::vector<CellResult> cells = run_grid(cfg, pristine, options);
  SweepTable t = make_table(cfg, cells);
  if (cells_out) *cells_out = std::move(cells);
  return t;
}

namespace {

SweepTable run_axis(SweepAxis axis, const ExperimentConfig& cfg, const DatasetPair& pristine,
                    const RunOptions& o) {
  if (cfg.sweep.axis != axis)
    throw ConfigError("sweep.axis", "expected '" + to_string(axis) + "', config has '" +
                                        to_string(cfg.sweep.axis) + "'");
  return run_sweep(cfg, pristine, o);
}

}  // namespace

SweepTable run_width_sweep(const ExperimentConfig& cfg, const DatasetPair& p, const RunOptions& o) {
  return run_axis(SweepAxis::Width, cfg, p, o);
}
SweepTable run_depth_sweep(const ExperimentConfig& cfg, const DatasetPair& p, const RunOptions& o) {
  return run_axis(SweepAxis::Depth, cfg, p, o);
}
SweepTable run_samples_sweep(const ExperimentConfig& cfg, const DatasetPair& p, const RunOptions& o) {
  return run_axis(SweepAxis::Samples, cfg, p, o);
}
SweepTable run_noise_sweep(const ExperimentConfig& cfg, const DatasetPair& p, const RunOptions& o) {
  return run_axis(SweepAxis::Noise, cfg, p, o);
}

BiasVarTable sweep_biasvar(const ExperimentConfig& cfg, const DatasetPair& pristine,
                           const RunOptions& options) {
  if (cfg.sweep.axis != SweepAxis::Width)
    throw ConfigError("sweep.axis", "bias-variance sweeps run over widths");
  RunOptions o = options;
  o.keep_networks = true;
  std::vector<CellResult> cells = run_grid(cfg, pristine, o);
  const DatasetPair data = datasets_for(cfg, pristine, cfg.sweep.values.front());
  if (data.test.size() == 0) throw Error("sweep_biasvar: empty test set");
  Rng pick(derive_seed(cfg.biasvar.xprime_seed, 0));
  const XPrime random_point = XPrime::test_point(static_cast<std::size_t>(pick.below(data.test.size())));

  BiasVarTable table;
  for (double width : cfg.sweep.values) {
    SeedEnsemble e;
    for (auto& c : cells) {
      if (c.size != width) continue;
      if (c.error) {
        table.failures.push_back({c.size, c.seed, *c.error});
      } else {
        e.members.push_back(std::move(*c.network));
        e.seeds.push_back(c.seed);
      }
    }
    if (e.size() < 2) {
      table.failures.push_back({width, 0, "fewer than 2 trained seeds; row skipped"});
      continue;
    }
    try {
      const LipschitzConstants lower = ensemble_lipschitz_lower(e, data.train.inputs, cfg.eval.power);
      const LipschitzConstants upper = ensemble_lipschitz_upper(e, cfg.eval.power);
      for (const XPrime& xp : {XPrime::zero(), random_point})
        table.rows.push_back({width, analyze_ensemble(e, data.test, xp, lower, upper)});
    } catch (const std::exception& ex) {
      table.failures.push_back({width, 0, ex.what()});
    }
  }
  return table;
}

}  // namespace lipdd

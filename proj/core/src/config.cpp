#include "lipdd/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "lipdd/error.hpp"
#include "lipdd/rng.hpp"

namespace lipdd {

namespace {

using nlohmann::json;

const json& at_path(const json& root, const std::string& path) {
  const json* node = &root;
  std::size_t start = 0;
  while (start <= path.size()) {
    const std::size_t dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError(path, "missing key");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return *node;
}

template <class T>
T get(const json& root, const std::string& path, const char* expected) {
  const json& v = at_path(root, path);
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError(path, std::string("expected ") + expected);
    } else if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
        throw ConfigError(path, std::string("expected ") + expected);
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, std::string("expected ") + expected);
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path, std::string("expected ") + expected);
    }
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path, std::string("expected ") + expected);
  }
}

std::size_t get_count(const json& root, const std::string& path) {
  return get<std::size_t>(root, path, "a non-negative integer");
}

json values_json(const SweepConfig& s) {
  json arr = json::array();
  for (double v : s.values) {
    if (s.axis != SweepAxis::Noise && v >= 0 && std::floor(v) == v)
      arr.push_back(static_cast<std::uint64_t>(v));
    else
      arr.push_back(v);
  }
  return arr;
}

std::string family_name(ModelFamily f) { return f == ModelFamily::Cnn ? "cnn" : "ff_relu"; }

}  // namespace

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Width: return "width";
    case SweepAxis::Depth: return "depth";
    case SweepAxis::Samples: return "samples";
    case SweepAxis::Noise: return "noise";
  }
  return "width";
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "width") return SweepAxis::Width;
  if (name == "depth") return SweepAxis::Depth;
  if (name == "samples") return SweepAxis::Samples;
  if (name == "noise") return SweepAxis::Noise;
  throw ConfigError("sweep.axis", "unknown axis '" + name + "' (width, depth, samples, noise)");
}

nlohmann::json ExperimentConfig::to_json() const {
  json schedule;
  lipdd::to_json(schedule, train.schedule);
  json j;
  j["name"] = name;
  j["model"] = {{"family", family_name(model.family)}, {"width", model.width}, {"depth", model.depth}};
  j["data"] = {{"source", data.source},
               {"path", data.path},
               {"test_path", data.test_path},
               {"synthetic_train", data.synthetic_train},
               {"synthetic_test", data.synthetic_test},
               {"synthetic_dim", data.synthetic_dim},
               {"num_classes", data.num_classes},
               {"synthetic_seed", data.synthetic_seed},
               {"shuffle_alpha", data.shuffle_alpha},
               {"shuffle_test", data.shuffle_test},
               {"subsample", data.subsample},
               {"mutation_seed", data.mutation_seed},
               {"test_limit", data.test_limit}};
  j["train"] = {{"loss", to_string(train.loss)},
                {"optimizer", to_string(train.optimizer)},
                {"base_lr", train.base_lr},
                {"schedule", schedule},
                {"grad_norm_threshold",
                 train.grad_norm_threshold ? json(*train.grad_norm_threshold) : json(nullptr)},
                {"min_epochs", train.min_epochs},
                {"max_epochs", train.max_epochs},
                {"batch_size", train.batch_size}};
  j["eval"] = {{"cadence", eval.cadence},
               {"power_max_iters", eval.power.max_iters},
               {"power_rel_tol", eval.power.rel_tol},
               {"power_seed", eval.power.seed},
               {"probe_pairs", eval.probe_pairs ? json(*eval.probe_pairs) : json(nullptr)},
               {"probe_seed", eval.probe_seed},
               {"softmax", eval.softmax}};
  j["sweep"] = {{"axis", to_string(sweep.axis)}, {"values", values_json(sweep)}};
  j["biasvar"] = {{"xprime_seed", biasvar.xprime_seed}};
  j["seeds"] = seeds;
  j["log"] = {{"wall_time", wall_time}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& in) {
  if (!in.is_object()) throw ConfigError("", "config must be a JSON object");
  json j = ExperimentConfig{}.to_json();
  merge_config(j, in);

  ExperimentConfig c;
  c.name = get<std::string>(j, "name", "a string");

  const auto family = get<std::string>(j, "model.family", "a string");
  if (family == "ff_relu") c.model.family = ModelFamily::FFRelu;
  else if (family == "cnn") c.model.family = ModelFamily::Cnn;
  else throw ConfigError("model.family", "unknown family '" + family + "' (ff_relu, cnn)");
  c.model.width = get_count(j, "model.width");
  c.model.depth = get_count(j, "model.depth");

  c.data.source = get<std::string>(j, "data.source", "a string");
  c.data.path = get<std::string>(j, "data.path", "a string");
  c.data.test_path = get<std::string>(j, "data.test_path", "a string");
  c.data.synthetic_train = get_count(j, "data.synthetic_train");
  c.data.synthetic_test = get_count(j, "data.synthetic_test");
  c.data.synthetic_dim = get_count(j, "data.synthetic_dim");
  c.data.num_classes = get_count(j, "data.num_classes");
  c.data.synthetic_seed = get<std::uint64_t>(j, "data.synthetic_seed", "an unsigned integer");
  c.data.shuffle_alpha = get<double>(j, "data.shuffle_alpha", "a number");
  c.data.shuffle_test = get<bool>(j, "data.shuffle_test", "true or false");
  c.data.subsample = get_count(j, "data.subsample");
  c.data.mutation_seed = get<std::uint64_t>(j, "data.mutation_seed", "an unsigned integer");
  c.data.test_limit = get_count(j, "data.test_limit");

  try {
    c.train.loss = parse_loss_kind(get<std::string>(j, "train.loss", "a string"));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("train.loss", e.what());
  }
  try {
    c.train.optimizer = parse_optimizer_kind(get<std::string>(j, "train.optimizer", "a string"));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("train.optimizer", e.what());
  }
  c.train.base_lr = get<double>(j, "train.base_lr", "a number");
  try {
    c.train.schedule = at_path(j, "train.schedule").get<LrSchedule>();
  } catch (const json::exception&) {
    throw ConfigError("train.schedule", "malformed schedule");
  }
  if (const json& t = at_path(j, "train.grad_norm_threshold"); !t.is_null())
    c.train.grad_norm_threshold = get<double>(j, "train.grad_norm_threshold", "a number or null");
  c.train.min_epochs = get_count(j, "train.min_epochs");
  c.train.max_epochs = get_count(j, "train.max_epochs");
  c.train.batch_size = get_count(j, "train.batch_size");

  c.eval.cadence = get_count(j, "eval.cadence");
  c.eval.power.max_iters = get_count(j, "eval.power_max_iters");
  c.eval.power.rel_tol = get<double>(j, "eval.power_rel_tol", "a number");
  c.eval.power.seed = get<std::uint64_t>(j, "eval.power_seed", "an unsigned integer");
  if (const json& p = at_path(j, "eval.probe_pairs"); !p.is_null())
    c.eval.probe_pairs = get_count(j, "eval.probe_pairs");
  c.eval.probe_seed = get<std::uint64_t>(j, "eval.probe_seed", "an unsigned integer");
  c.eval.softmax = get<bool>(j, "eval.softmax", "true or false");

  c.sweep.axis = parse_sweep_axis(get<std::string>(j, "sweep.axis", "a string"));
  const json& values = at_path(j, "sweep.values");
  if (!values.is_array()) throw ConfigError("sweep.values", "expected an array of numbers");
  c.sweep.values.clear();
  for (const auto& v : values) {
    if (!v.is_number()) throw ConfigError("sweep.values", "expected an array of numbers");
    c.sweep.values.push_back(v.get<double>());
  }

  c.biasvar.xprime_seed = get<std::uint64_t>(j, "biasvar.xprime_seed", "an unsigned integer");

  const json& seeds = at_path(j, "seeds");
  if (!seeds.is_array()) throw ConfigError("seeds", "expected an array of unsigned integers");
  c.seeds.clear();
  for (const auto& s : seeds) {
    if (!s.is_number_integer() || s.get<std::int64_t>() < 0) throw ConfigError("seeds", "expected an array of unsigned integers");
    c.seeds.push_back(s.get<std::uint64_t>());
  }
  c.wall_time = get<bool>(j, "log.wall_time", "true or false");
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("name", "must not be empty");
  if (model.width == 0) throw ConfigError("model.width", "must be positive");
  if (model.family == ModelFamily::FFRelu && model.depth == 0)
    throw ConfigError("model.depth", "must be positive");
  if (data.source != "mnist1d" && data.source != "cifar10" && data.source != "synthetic")
    throw ConfigError("data.source", "unknown source '" + data.source + "' (mnist1d, cifar10, synthetic)");
  if (data.source != "synthetic" && data.path.empty())
    throw ConfigError("data.path", "required for source '" + data.source + "'");
  if (data.source == "synthetic") {
    if (data.synthetic_train == 0) throw ConfigError("data.synthetic_train", "must be positive");
    if (data.synthetic_dim == 0) throw ConfigError("data.synthetic_dim", "must be positive");
  }
  if (data.num_classes < 2) throw ConfigError("data.num_classes", "must be at least 2");
  if (!(data.shuffle_alpha >= 0.0 && data.shuffle_alpha <= 1.0))
    throw ConfigError("data.shuffle_alpha", "must lie in [0, 1]");
  if (!(train.base_lr > 0.0) || !std::isfinite(train.base_lr))
    throw ConfigError("train.base_lr", "must be a positive finite number");
  if (train.grad_norm_threshold && !(*train.grad_norm_threshold > 0.0))
    throw ConfigError("train.grad_norm_threshold", "must be positive");
  if (train.max_epochs == 0) throw ConfigError("train.max_epochs", "must be at least 1");
  if (train.min_epochs > train.max_epochs)
    throw ConfigError("train.min_epochs", "exceeds train.max_epochs");
  if (train.batch_size == 0) throw ConfigError("train.batch_size", "must be positive");
  if (train.schedule.kind == LrSchedule::Kind::WarmupStep && train.schedule.warmup_updates == 0)
    throw ConfigError("train.schedule.warmup_updates", "must be positive");
  if (train.schedule.kind == LrSchedule::Kind::EpochDecay && train.schedule.decay_every_epochs == 0)
    throw ConfigError("train.schedule.decay_every_epochs", "must be positive");
  if (eval.power.max_iters == 0) throw ConfigError("eval.power_max_iters", "must be positive");
  if (!(eval.power.rel_tol > 0.0)) throw ConfigError("eval.power_rel_tol", "must be positive");
  if (sweep.values.empty()) throw ConfigError("sweep.values", "must not be empty");
  for (double v : sweep.values) {
    if (sweep.axis == SweepAxis::Noise) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("sweep.values", "noise fractions must lie in [0, 1]");
    } else if (!(v >= 1.0 && std::floor(v) == v)) {
      throw ConfigError("sweep.values", "sizes must be positive integers");
    }
  }
  if (sweep.axis == SweepAxis::Depth && model.family != ModelFamily::FFRelu)
    throw ConfigError("sweep.axis", "depth sweeps need model.family = ff_relu");
  if (seeds.empty()) throw ConfigError("seeds", "must not be empty");
}

std::string ExperimentConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ArchSpec ExperimentConfig::base_arch(std::size_t input_dim, std::size_t output_dim) const {
  if (model.family == ModelFamily::Cnn) {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(input_dim / 3.0)));
    if (side * side * 3 != input_dim)
      throw ConfigError("model.family", "cnn needs 3-channel square images, input has " +
                                            std::to_string(input_dim) + " values");
    return ArchSpec::cnn(model.width, {3, side, side}, output_dim);
  }
  return ArchSpec::ff_relu(std::vector<std::size_t>(model.depth, model.width), input_dim, output_dim);
}

ArchSpec ExperimentConfig::arch_at(double axis_value, std::size_t input_dim,
                                   std::size_t output_dim) const {
  ExperimentConfig c = *this;
  const auto size = static_cast<std::size_t>(axis_value);
  if (sweep.axis == SweepAxis::Width) c.model.width = size;
  if (sweep.axis == SweepAxis::Depth) c.model.depth = size;
  return c.base_arch(input_dim, output_dim);
}

TrainOptions ExperimentConfig::train_options(std::uint64_t seed) const {
  TrainOptions o;
  o.loss = train.loss;
  o.optimizer = train.optimizer;
  o.base_lr = train.base_lr;
  o.schedule = train.schedule;
  o.stop = StopRule::for_loss(train.loss, train.min_epochs, train.max_epochs);
  if (train.grad_norm_threshold) o.stop.grad_norm_threshold = *train.grad_norm_threshold;
  o.batch_size = train.batch_size;
  o.seed = seed;
  o.record_wall_time = wall_time;
  return o;
}

ReportOptions ExperimentConfig::report_options() const {
  ReportOptions r;
  r.power = eval.power;
  r.softmax = eval.softmax;
  r.probe_pairs = eval.probe_pairs;
  r.probe_seed = eval.probe_seed;
  return r;
}

nlohmann::json profile_defaults(const std::string& profile) {
  if (profile == "desk") {
    // Shortened budgets that keep the qualitative trends visible on one core.
    return {{"train",
             {{"base_lr", 0.1},
              {"schedule", {{"kind", "warmup_step"},
                            {"warmup_updates", 500},
                            {"step_phase_epochs", 2000},
                            {"drops", 3},
                            {"step_factor", 0.75}}},
              {"min_epochs", 0},
              {"max_epochs", 2000},
              {"batch_size", 128}}},
            {"eval", {{"cadence", 250}}},
            {"sweep", {{"axis", "width"}, {"values", {16, 32, 64, 80, 96, 128, 256, 512, 1024}}}}};
  }
  if (profile == "paper") {
    return {{"train",
             {{"base_lr", 0.005},
              {"schedule", {{"kind", "warmup20000step25"}}},
              {"min_epochs", 10000},
              {"max_epochs", 300000},
              {"batch_size", 512}}},
            {"eval", {{"cadence", 1000}, {"probe_pairs", 10000}}},
            {"sweep",
             {{"axis", "width"},
              {"values", {16, 32, 64, 80, 96, 128, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768,
                          65536, 131072}}}}};
  }
  throw ConfigError("profile", "unknown profile '" + profile + "' (desk, paper)");
}

void merge_config(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError(prefix, "expected an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError(path, "unknown key");
    json& slot = base[key];
    // Schedules are replaced whole; their keys depend on the kind.
    if (slot.is_object() && value.is_object() && path != "train.schedule")
      merge_config(slot, value, path);
    else
      slot = value;
  }
}

void apply_override(nlohmann::json& tree, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError(assignment, "override must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const std::size_t dot = key.rfind('.', end - 1);
    const std::size_t start = dot == std::string::npos ? 0 : dot + 1;
    const std::string part = key.substr(start, end - start);
    if (part.empty()) throw ConfigError(key, "empty path component");
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  // Nested schedule keys are written in place so `train.schedule.drops=2` works.
  if (key.rfind("train.schedule.", 0) == 0) {
    json& sched = tree["train"]["schedule"];
    const std::string field = key.substr(std::string("train.schedule.").size());
    if (field.find('.') != std::string::npos || (field != "kind" && !sched.contains(field)))
      throw ConfigError(key, "unknown key");
    sched[field] = value;
    return;
  }
  merge_config(tree, patch);
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::string& profile,
                             const std::vector<std::string>& overrides) {
  json tree = ExperimentConfig{}.to_json();
  merge_config(tree, profile_defaults(profile));
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("config", "cannot open config file " + path->string());
    json file = json::parse(in, nullptr, false, true);
    if (file.is_discarded() || !file.is_object())
      throw ConfigError("config", path->string() + " is not a valid JSON object");
    json profiles;
    if (file.contains("profiles")) {
      profiles = file["profiles"];
      file.erase("profiles");
    }
    merge_config(tree, file);
    if (profiles.is_object() && profiles.contains(profile))
      merge_config(tree, profiles[profile]);
  }
  for (const auto& o : overrides) apply_override(tree, o);
  return ExperimentConfig::from_json(tree);
}

DatasetPair load_pristine(const DataConfig& data) {
  if (data.source == "mnist1d") {
    return data.test_path.empty() ? load_mnist1d(data.path) : load_mnist1d(data.path, data.test_path);
  }
  if (data.source == "cifar10") return load_cifar10(data.path);
  if (data.source == "synthetic") {
    SyntheticData s = synthetic_fallback(data.synthetic_train, data.synthetic_test,
                                         data.synthetic_dim, data.num_classes, data.synthetic_seed);
    return {std::move(s.train), std::move(s.test)};
  }
  throw ConfigError("data.source", "unknown source '" + data.source + "'");
}

DatasetPair apply_mutations(const DatasetPair& pristine, const DataConfig& data) {
  DatasetPair d = pristine;
  if (data.shuffle_alpha > 0.0) {
    d.train = shuffle_labels(d.train, data.shuffle_alpha, derive_seed(data.mutation_seed, 0));
    if (data.shuffle_test)
      d.test = shuffle_labels(d.test, data.shuffle_alpha, derive_seed(data.mutation_seed, 1));
  }
  if (data.subsample > 0) {
    if (data.subsample > d.train.size())
      throw ConfigError("data.subsample", "exceeds the training set size " +
                                              std::to_string(d.train.size()));
    d.train = subsample(d.train, data.subsample, derive_seed(data.mutation_seed, 2));
  }
  if (data.test_limit > 0 && data.test_limit < d.test.size())
    d.test = subsample(d.test, data.test_limit, derive_seed(data.mutation_seed, 3));
  return d;
}

}  // namespace lipdd

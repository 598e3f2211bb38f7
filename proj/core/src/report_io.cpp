#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "lipdd/checkpoint.hpp"
#include "lipdd/error.hpp"
#include "lipdd/harness.hpp"

namespace lipdd {

namespace {

using nlohmann::ordered_json;

constexpr const char* kStatNames[] = {"train_loss", "test_loss", "c_lower", "c_avg_norm",
                                      "c_upper", "c_probe", "param_dist", "grad_norm"};

const char* const kBiasVarColumns[] = {
    "width",          "bias_sq",        "variance",       "test_loss",
    "r_sq",           "c_bar",          "c_bar_zeta",     "bound_v1_lower",
    "bound_v2_lower", "bound_v1_upper", "bound_v2_upper", "xprime_kind"};

std::array<Stat*, 8> stats_of(SummaryRow& r) {
  return {&r.train_loss, &r.test_loss, &r.c_lower, &r.c_avg_norm,
          &r.c_upper,    &r.c_probe,   &r.param_dist, &r.grad_norm};
}

ordered_json number_or_null(double v) {
  return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr);
}

ordered_json size_json(double v) {
  if (v >= 0 && std::floor(v) == v && v < 9.0e15) return static_cast<std::uint64_t>(v);
  return v;
}

double parse_double(std::string_view s, std::size_t row) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw ParseError("cannot parse '" + std::string(s) + "' as a number", row);
  return v;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

std::string cell_stem(double size, std::uint64_t seed) {
  return "size-" + format_double(size) + "-seed-" + std::to_string(seed);
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ordered_json record_json(const SweepRecord& r) {
  ordered_json j;
  j["config_hash"] = r.config_hash;
  j["size"] = size_json(r.size);
  j["seed"] = r.seed;
  j["epoch"] = r.epoch;
  j["train_loss"] = number_or_null(r.train_loss);
  j["test_loss"] = number_or_null(r.test_loss);
  j["c_lower"] = r.c_lower;
  j["c_avg_norm"] = r.c_avg_norm;
  j["c_upper"] = r.c_upper;
  j["c_probe"] = r.c_probe ? ordered_json(*r.c_probe) : ordered_json(nullptr);
  j["param_dist"] = r.param_dist;
  j["grad_norm"] = r.grad_norm;
  j["eta"] = r.eta;
  return j;
}

SweepRecord record_from_json(const nlohmann::json& j) {
  auto num = [&](const char* key) {
    const auto& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  SweepRecord r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.size = j.at("size").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.epoch = j.at("epoch").get<std::size_t>();
  r.train_loss = num("train_loss");
  r.test_loss = num("test_loss");
  r.c_lower = num("c_lower");
  r.c_avg_norm = num("c_avg_norm");
  r.c_upper = num("c_upper");
  if (!j.at("c_probe").is_null()) r.c_probe = j.at("c_probe").get<double>();
  r.param_dist = num("param_dist");
  r.grad_norm = num("grad_norm");
  r.eta = num("eta");
  return r;
}

void write_records_jsonl(std::ostream& out, const std::vector<SweepRecord>& records) {
  for (const auto& r : records) out << record_json(r).dump() << '\n';
}

std::vector<SweepRecord> read_records_jsonl(std::istream& in) {
  std::vector<SweepRecord> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (strip_cr(line).empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad sweep record: ") + e.what(), row);
    }
  }
  return out;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "size,seeds,epochs_mean";
  for (const char* name : kStatNames) out << ',' << name << "_mean," << name << "_min," << name << "_max";
  out << ",c_lower_sup_of_mean\n";
  for (SummaryRow r : rows) {
    out << format_double(r.size) << ',' << r.seeds << ',' << format_double(r.epochs_mean);
    for (const Stat* s : stats_of(r))
      out << ',' << format_double(s->mean) << ',' << format_double(s->min) << ',' << format_double(s->max);
    out << ',' << format_double(r.c_lower_sup_of_mean) << '\n';
  }
}

std::vector<SummaryRow> read_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("summary CSV is empty");
  const std::size_t expected = 3 + 3 * std::size(kStatNames) + 1;
  if (split_line(strip_cr(line)).size() != expected)
    throw ParseError("summary CSV header has the wrong number of columns", 1);
  std::vector<SummaryRow> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_line(line);
    if (f.size() != expected)
      throw ParseError("expected " + std::to_string(expected) + " columns, found " + std::to_string(f.size()), row);
    SummaryRow r;
    r.size = parse_double(f[0], row);
    r.seeds = static_cast<std::size_t>(parse_double(f[1], row));
    r.epochs_mean = parse_double(f[2], row);
    std::size_t c = 3;
    for (Stat* s : stats_of(r)) {
      s->mean = parse_double(f[c++], row);
      s->min = parse_double(f[c++], row);
      s->max = parse_double(f[c++], row);
    }
    r.c_lower_sup_of_mean = parse_double(f[c], row);
    rows.push_back(r);
  }
  return rows;
}

void write_biasvar_csv(std::ostream& out, const BiasVarTable& table) {
  for (std::size_t i = 0; i < std::size(kBiasVarColumns); ++i)
    out << (i ? "," : "") << kBiasVarColumns[i];
  out << '\n';
  for (const auto& row : table.rows) {
    const BiasVarReport& r = row.report;
    out << format_double(row.width) << ',' << format_double(r.bias_sq) << ','
        << format_double(r.variance) << ',' << format_double(r.expected_test_loss) << ','
        << format_double(r.r_sq) << ',' << format_double(r.lower.c_bar) << ','
        << format_double(r.lower.c_bar_zeta) << ',' << format_double(r.bound_v1_lower) << ','
        << format_double(r.bound_v2_lower) << ',' << format_double(r.bound_v1_upper) << ','
        << format_double(r.bound_v2_upper) << ',' << r.xprime.label() << '\n';
  }
}

BiasVarTable read_biasvar_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("bias-variance CSV is empty");
  if (split_line(strip_cr(line)).size() != std::size(kBiasVarColumns))
    throw ParseError("bias-variance CSV header has the wrong number of columns", 1);
  BiasVarTable t;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_line(line);
    if (f.size() != std::size(kBiasVarColumns))
      throw ParseError("wrong number of columns", row);
    BiasVarRow b;
    b.width = parse_double(f[0], row);
    BiasVarReport& r = b.report;
    r.bias_sq = parse_double(f[1], row);
    r.variance = parse_double(f[2], row);
    r.expected_test_loss = parse_double(f[3], row);
    r.r_sq = parse_double(f[4], row);
    r.lower.c_bar = parse_double(f[5], row);
    r.lower.c_bar_zeta = parse_double(f[6], row);
    r.bound_v1_lower = parse_double(f[7], row);
    r.bound_v2_lower = parse_double(f[8], row);
    r.bound_v1_upper = parse_double(f[9], row);
    r.bound_v2_upper = parse_double(f[10], row);
    if (f[11] == "zero") {
      r.xprime = XPrime::zero();
    } else if (f[11].rfind("test:", 0) == 0) {
      r.xprime = XPrime::test_point(static_cast<std::size_t>(parse_double(f[11].substr(5), row)));
    } else {
      throw ParseError("unknown xprime_kind '" + f[11] + "'", row);
    }
    t.rows.push_back(b);
  }
  return t;
}

void emit_plot_data(std::ostream& out, const SweepTable& table, const std::string& kind) {
  if (kind == "bounds-vs-width") {
    if (table.summary.empty()) throw Error("emit_plot_data: no summary rows to plot");
    out << "size,c_lower,c_avg_norm,c_upper,c_probe,c_lower_sup_of_mean,train_loss,test_loss\n";
    for (const auto& r : table.summary) {
      out << format_double(r.size) << ',' << format_double(r.c_lower.mean) << ','
          << format_double(r.c_avg_norm.mean) << ',' << format_double(r.c_upper.mean) << ','
          << format_double(r.c_probe.mean) << ',' << format_double(r.c_lower_sup_of_mean) << ','
          << format_double(r.train_loss.mean) << ',' << format_double(r.test_loss.mean) << '\n';
    }
  } else if (kind == "param-dist-vs-width") {
    if (table.summary.empty()) throw Error("emit_plot_data: no summary rows to plot");
    out << "size,param_dist,param_dist_min,param_dist_max,train_loss,test_loss\n";
    for (const auto& r : table.summary) {
      out << format_double(r.size) << ',' << format_double(r.param_dist.mean) << ','
          << format_double(r.param_dist.min) << ',' << format_double(r.param_dist.max) << ','
          << format_double(r.train_loss.mean) << ',' << format_double(r.test_loss.mean) << '\n';
    }
  } else if (kind == "bounds-vs-epoch") {
    if (table.records.empty()) throw Error("emit_plot_data: no records to plot");
    // Seed average per (size, epoch); early-stopped seeds drop out of later epochs.
    struct Acc {
      std::size_t n = 0;
      double c_lower = 0, c_avg = 0, c_upper = 0, train = 0, test = 0, dist = 0;
    };
    std::vector<double> sizes;
    std::map<std::pair<double, std::size_t>, Acc> acc;
    for (const auto& r : table.records) {
      if (std::find(sizes.begin(), sizes.end(), r.size) == sizes.end()) sizes.push_back(r.size);
      Acc& a = acc[{r.size, r.epoch}];
      ++a.n;
      a.c_lower += r.c_lower;
      a.c_avg += r.c_avg_norm;
      a.c_upper += r.c_upper;
      a.train += r.train_loss;
      a.test += r.test_loss;
      a.dist += r.param_dist;
    }
    out << "size,epoch,seeds,c_lower,c_avg_norm,c_upper,train_loss,test_loss,param_dist\n";
    for (double size : sizes) {
      for (const auto& [key, a] : acc) {
        if (key.first != size) continue;
        const double n = static_cast<double>(a.n);
        out << format_double(size) << ',' << key.second << ',' << a.n << ','
            << format_double(a.c_lower / n) << ',' << format_double(a.c_avg / n) << ','
            << format_double(a.c_upper / n) << ',' << format_double(a.train / n) << ','
            << format_double(a.test / n) << ',' << format_double(a.dist / n) << '\n';
      }
    }
  } else if (kind == "variance-vs-width") {
    throw Error("emit_plot_data: variance-vs-width needs bias-variance results (run `biasvar`)");
  } else {
    throw Error("emit_plot_data: unknown plot kind '" + kind +
                "' (bounds-vs-width, bounds-vs-epoch, variance-vs-width, param-dist-vs-width)");
  }
}

void emit_plot_data(std::ostream& out, const BiasVarTable& table, const std::string& kind) {
  if (kind != "variance-vs-width") {
    throw Error("emit_plot_data: plot kind '" + kind +
                "' is not available from bias-variance results (use variance-vs-width)");
  }
  if (table.rows.empty()) throw Error("emit_plot_data: no bias-variance rows to plot");
  out << "width,xprime_kind,bias_sq,variance,test_loss,bound_v1_lower,bound_v2_lower,"
         "bound_v1_upper,bound_v2_upper\n";
  for (const auto& row : table.rows) {
    const BiasVarReport& r = row.report;
    out << format_double(row.width) << ',' << r.xprime.label() << ',' << format_double(r.bias_sq)
        << ',' << format_double(r.variance) << ',' << format_double(r.expected_test_loss) << ','
        << format_double(r.bound_v1_lower) << ',' << format_double(r.bound_v2_lower) << ','
        << format_double(r.bound_v1_upper) << ',' << format_double(r.bound_v2_upper) << '\n';
  }
}

std::filesystem::path prepare_run_dir(const std::filesystem::path& root, const ExperimentConfig& cfg) {
  const std::filesystem::path dir = root / cfg.hash();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create run directory " + dir.string() + ": " + ec.message());
  write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");
  write_text(dir / "VERSION", std::string(toolkit_version()) + "\n");
  return dir;
}

void write_sweep_outputs(const std::filesystem::path& dir, const SweepTable& table,
                         const std::vector<CellResult>& cells) {
  {
    std::ostringstream s;
    write_records_jsonl(s, table.records);
    write_text(dir / "records.jsonl", s.str());
  }
  {
    std::ostringstream s;
    write_summary_csv(s, table.summary);
    write_text(dir / "summary.csv", s.str());
  }
  {
    std::ostringstream s;
    for (const auto& f : table.failures) {
      ordered_json j;
      j["size"] = size_json(f.size);
      j["seed"] = f.seed;
      j["error"] = f.message;
      s << j.dump() << '\n';
    }
    write_text(dir / "failures.jsonl", s.str());
  }
  std::filesystem::create_directories(dir / "traces");
  for (const auto& c : cells) {
    std::ostringstream s;
    write_trace_jsonl(s, c.trace);
    write_text(dir / "traces" / (cell_stem(c.size, c.seed) + ".jsonl"), s.str());
    if (c.network) {
      std::filesystem::create_directories(dir / "checkpoints");
      const std::size_t epoch = c.trace.epochs.empty() ? 0 : c.trace.epochs.back().epoch;
      save_checkpoint(dir / "checkpoints" / (cell_stem(c.size, c.seed) + ".ckpt"),
                      Checkpoint::capture(*c.network, c.seed, epoch));
    }
  }
}

}  // namespace lipdd

#include "masktune/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "masktune/analysis.hpp"
#include "masktune/checkpoint.hpp"
#include "masktune/config.hpp"
#include "masktune/trainer.hpp"

#ifndef MASKTUNE_VERSION
#define MASKTUNE_VERSION "0.0.0-unknown"
#endif

namespace masktune {

namespace fs = std::filesystem;
using nlohmann::json;

const char* version_string() { return MASKTUNE_VERSION; }

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

constexpr const char* kUsage = R"(usage: masktune <command> [options] [--section.key value ...]

commands:
  train     [--config FILE] [--from-manifest FILE]   train every seed of the configured mode
  grid      [--config FILE] [--search alpha|learning_rate]   grid search, writes the table CSV
  eval      --checkpoint FILE [--config FILE] [--data FILE [--split NAME]]   accuracy per split as JSON
  analyze   LOG [--compare LOG2] [--sample N] [--seed S] [--json FILE] [--csv FILE]
  gen-data  [--config FILE]   export the synthetic splits to output.dir

Any config key can be overridden as --section.key value, or --key value when
the key name is unique. Precedence: flags > $MASKTUNE_OUT_DIR (output.dir) > file > defaults.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
)";

struct Args {
  std::vector<std::string> positional;
  std::vector<std::pair<std::string, std::string>> options;  // in command-line order

  std::optional<std::string> take(const std::string& name) {
    std::optional<std::string> v;
    for (auto it = options.begin(); it != options.end();) {
      if (it->first == name) {
        v = it->second;
        it = options.erase(it);
      } else {
        ++it;
      }
    }
    return v;
  }
};

Args parse_args(std::span<const std::string> args) {
  Args a;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& s = args[i];
    if (s.rfind("--", 0) != 0 || s.size() == 2) {
      a.positional.push_back(s);
      continue;
    }
    std::string name = s.substr(2);
    if (const auto eq = name.find('='); eq != std::string::npos) {
      a.options.emplace_back(name.substr(0, eq), name.substr(eq + 1));
      continue;
    }
    if (i + 1 >= args.size()) throw UsageError("option --" + name + " needs a value");
    a.options.emplace_back(std::move(name), args[++i]);
  }
  return a;
}

std::size_t parse_count(const std::string& flag, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw UsageError("--" + flag + ": expected a non-negative integer, got '" + v + "'");
  }
}

/// File, then environment, then the remaining flags.
KeyValues collect_config(Args& a, KeyValues base = {}) {
  KeyValues kv = std::move(base);
  if (auto path = a.take("config")) {
    for (auto& [k, v] : read_config_file(*path)) kv[k] = v;
  }
  if (const char* env = std::getenv(kOutDirEnv); env && *env) kv["output.dir"] = env;
  for (auto& [k, v] : a.options) apply_override(kv, k, v);
  a.options.clear();
  return kv;
}

void no_positional(const Args& a, const char* cmd) {
  if (!a.positional.empty()) {
    throw UsageError(std::string(cmd) + ": unexpected argument '" + a.positional.front() + "'");
  }
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json epoch_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"phase", r.phase},
          {"batches", r.batches},
          {"l_mlm", r.mean.l_mlm},
          {"l_ft", r.mean.l_ft},
          {"l_masktuning", r.mean.l_masktuning},
          {"alpha", r.mean.alpha},
          {"scenarios",
           {{"batches", r.scenarios.batches},
            {"mlm_small", r.scenarios.mlm_small},
            {"ft_small", r.scenarios.ft_small},
            {"both_small", r.scenarios.both_small}}},
          {"accuracy", r.accuracy}};
}

json metrics_json(const RunMetrics& m) {
  json seeds = json::array();
  for (const auto& s : m.seeds) {
    json epochs = json::array();
    for (const auto& e : s.epochs) epochs.push_back(epoch_json(e));
    seeds.push_back({{"seed", s.seed},
                     {"final_accuracy", s.final_accuracy},
                     {"passes", {{"train", s.passes.train}, {"inference", s.passes.inference}}},
                     {"train_set_size", s.train_set_size},
                     {"skipped_mask_examples", s.skipped_mask_examples},
                     {"epochs", epochs}});
  }
  json summary = json::object();
  for (const auto& [name, s] : m.summary) {
    summary[name] = {{"mean", s.mean}, {"stddev", s.stddev ? json(*s.stddev) : json(nullptr)}};
  }
  return {{"mode", to_string(m.mode)}, {"alpha", m.alpha}, {"seeds", seeds}, {"summary", summary}};
}

/// Streams metrics rows, perturbation logs and checkpoints to the run directory.
class ArtifactWriter : public RunObserver {
 public:
  ArtifactWriter(const RunConfig& rc, const KeyValues& kv, const Vocab& vocab, fs::path dir)
      : rc_(rc), kv_(kv), vocab_(vocab), dir_(std::move(dir)), metrics_(dir_ / "metrics.csv") {
    if (!metrics_) throw std::runtime_error("cannot write " + (dir_ / "metrics.csv").string());
    metrics_ << "mode,seed,epoch,step,alpha,l_mlm,l_ft,l_masktuning,split,accuracy\n";
    outputs_.push_back("metrics.csv");
  }

  void on_step(std::uint64_t seed, std::size_t epoch, const LossBreakdown& b) override {
    row(seed, epoch, std::to_string(steps_[seed]++), b, "step", "");
  }

  void on_epoch(std::uint64_t seed, const EpochRecord& r) override {
    row(seed, r.epoch, "", r.mean, r.phase, "");
    for (const auto& [split, acc] : r.accuracy) row(seed, r.epoch, "", r.mean, split, num(acc));
    metrics_.flush();
  }

  void on_prediction(std::uint64_t seed, const PredictionRecord& r) override {
    if (!rc_.output.perturbation_log) return;
    auto& w = logs_[seed];
    if (!w) {
      fs::create_directories(dir_ / "perturbations");
      const std::string rel = "perturbations/seed_" + std::to_string(seed) + ".jsonl";
      w = std::make_unique<PerturbationLogWriter>(dir_ / rel);
      outputs_.push_back(rel);
    }
    w->write(r);
  }

  void on_seed_end(std::uint64_t seed, const ModelParameters& params) override {
    logs_.erase(seed);
    if (!rc_.output.checkpoints) return;
    fs::create_directories(dir_ / "checkpoints");
    const std::string rel = "checkpoints/seed_" + std::to_string(seed) + ".json";
    save_checkpoint(dir_ / rel, params, vocab_,
                    {{"mode", to_string(rc_.train.mode)}, {"seed", seed}, {"config_kv", kv_}});
    outputs_.push_back(rel);
  }

  void close() {
    logs_.clear();
    metrics_.close();
  }

  const std::vector<std::string>& outputs() const { return outputs_; }

 private:
  void row(std::uint64_t seed, std::size_t epoch, const std::string& step, const LossBreakdown& b,
           const std::string& split, const std::string& acc) {
    metrics_ << to_string(rc_.train.mode) << ',' << seed << ',' << epoch << ',' << step << ','
             << num(b.alpha) << ',' << num(b.l_mlm) << ',' << num(b.l_ft) << ','
             << num(b.l_masktuning) << ',' << split << ',' << acc << '\n';
  }

  const RunConfig& rc_;
  const KeyValues& kv_;
  const Vocab& vocab_;
  fs::path dir_;
  std::ofstream metrics_;
  std::map<std::uint64_t, std::size_t> steps_;
  std::map<std::uint64_t, std::unique_ptr<PerturbationLogWriter>> logs_;
  std::vector<std::string> outputs_;
};

json manifest_base(const std::string& command, const RunConfig& rc, const KeyValues& kv) {
  json seeds = json::array();
  for (std::size_t i = 0; i < rc.train.seeds; ++i) seeds.push_back(rc.train.seed + i);
  json j = {{"command", command},
            {"version", version_string()},
            {"config", rc.to_json()},
            {"config_kv", kv},
            {"seeds", seeds},
            {"status", "running"},
            {"started_at", utc_now()},
            {"outputs", json::array()},
            {"timings", json::object()}};
  if (rc.data.kind == DataSource::Kind::synthetic) {
    j["config"]["data"]["resolved_seed"] = resolved_spec(rc.data, rc.train.seed).seed;
  }
  return j;
}

int cmd_train(Args& a, std::ostream& out) {
  KeyValues base;
  if (auto m = a.take("from-manifest")) {
    std::ifstream in(*m);
    if (!in) throw ConfigError("cannot read manifest " + *m);
    try {
      base = json::parse(in).at("config_kv").get<KeyValues>();
    } catch (const json::exception& e) {
      throw ConfigError("manifest " + *m + " has no usable config_kv: " + e.what());
    }
  }
  no_positional(a, "train");
  const KeyValues kv = collect_config(a, std::move(base));
  const RunConfig rc = build_config(kv);

  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = rc.output.dir;
  fs::create_directories(dir);
  json manifest = manifest_base("train", rc, kv);
  write_json(dir / "manifest.json", manifest);

  const Dataset ds = load_dataset(rc.data, rc.train.seed);
  const PreparedData data = prepare_data(ds, rc.train.min_count, rc.train.model.max_len);
  write_json(dir / "vocab.json", data.vocab.to_json());
  const double data_s = seconds_since(t0);

  ArtifactWriter writer(rc, kv, data.vocab, dir);
  const auto t1 = std::chrono::steady_clock::now();
  const RunMetrics m = run_mode(rc.train, data, &writer);
  const double train_s = seconds_since(t1);
  writer.close();
  write_json(dir / "summary.json", metrics_json(m));

  std::vector<std::string> outputs = {"manifest.json", "vocab.json", "summary.json"};
  outputs.insert(outputs.end(), writer.outputs().begin(), writer.outputs().end());
  manifest["outputs"] = outputs;
  manifest["status"] = "complete";
  manifest["timings"] = {{"data_s", data_s}, {"train_s", train_s}, {"total_s", seconds_since(t0)}};
  write_json(dir / "manifest.json", manifest);

  out << "mode " << to_string(m.mode) << ", " << m.seeds.size() << " seed(s), " << train_s
      << " s\n";
  for (const auto& [name, s] : m.summary) {
    out << "  " << name << ": " << num(s.mean);
    if (s.stddev) out << " +- " << num(*s.stddev);
    out << '\n';
  }
  out << "artifacts in " << dir.string() << '\n';
  return kExitOk;
}

int cmd_grid(Args& a, std::ostream& out) {
  const std::string search = a.take("search").value_or("alpha");
  if (search != "alpha" && search != "learning_rate") {
    throw UsageError("--search: expected alpha or learning_rate, got '" + search + "'");
  }
  no_positional(a, "grid");
  const KeyValues kv = collect_config(a);
  const RunConfig rc = build_config(kv);
  const auto& grid = search == "alpha" ? rc.train.alpha_grid : rc.train.learning_rate_grid;
  if (grid.empty()) throw ConfigError("train." + search + "_grid: empty grid");

  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = rc.output.dir;
  fs::create_directories(dir);
  json manifest = manifest_base("grid", rc, kv);
  write_json(dir / "manifest.json", manifest);

  const Dataset ds = load_dataset(rc.data, rc.train.seed);
  const PreparedData data = prepare_data(ds, rc.train.min_count, rc.train.model.max_len);
  const GridResult res = search == "alpha" ? alpha_grid_search(rc.train, data, grid)
                                           : learning_rate_search(rc.train, data, grid);

  const std::string csv_name = search + "_grid.csv";
  {
    std::ofstream csv(dir / csv_name);
    if (!csv) throw std::runtime_error("cannot write " + (dir / csv_name).string());
    csv << search << ",mean_dev,mean_test_indist,mean_ood,selected\n";
    for (const auto& r : res.rows) {
      csv << num(r.value) << ',' << num(r.mean_dev) << ',' << num(r.mean_test_indist) << ','
          << num(r.mean_ood) << ',' << (r.value == res.selected ? 1 : 0) << '\n';
      out << search << ' ' << num(r.value) << "  dev " << num(r.mean_dev) << "  test_indist "
          << num(r.mean_test_indist) << "  ood " << num(r.mean_ood) << '\n';
    }
  }
  out << "selected " << search << " = " << num(res.selected) << '\n';
  manifest["outputs"] = {"manifest.json", csv_name};
  manifest["selected"] = res.selected;
  manifest["status"] = "complete";
  manifest["timings"] = {{"total_s", seconds_since(t0)}};
  write_json(dir / "manifest.json", manifest);
  return kExitOk;
}

int cmd_eval(Args& a, std::ostream& out) {
  const auto ckpt_path = a.take("checkpoint");
  if (!ckpt_path) throw UsageError("eval: --checkpoint is required");
  const auto data_path = a.take("data");
  const auto split_name = a.take("split");
  no_positional(a, "eval");

  Checkpoint ckpt = load_checkpoint(*ckpt_path);
  KeyValues base;
  if (ckpt.metadata.contains("config_kv")) base = ckpt.metadata["config_kv"].get<KeyValues>();
  const KeyValues kv = collect_config(a, std::move(base));
  const RunConfig rc = build_config(kv);
  const std::size_t max_len = ckpt.params.config.max_len;

  json result = json::object();
  if (data_path) {
    RecordSchema schema = rc.data.schema;
    schema.label_map.clear();
    for (std::size_t i = 0; i < rc.data.label_names.size(); ++i) {
      schema.label_map[rc.data.label_names[i]] = static_cast<std::int32_t>(i);
      schema.label_map.emplace(std::to_string(i), static_cast<std::int32_t>(i));
    }
    const LoadReport rep = load_examples(*data_path, rc.data.format, schema, split_name.value_or(""));
    const auto split = tokenize_split(ckpt.vocab, rep.split, max_len);
    result[rep.split.name] = accuracy(ckpt.params, split, rc.train.eval_batch_size);
  } else {
    const Dataset ds = load_dataset(rc.data, rc.train.seed);
    for (const DatasetSplit* s : ds.eval_splits()) {
      if (s->examples.empty()) continue;
      const auto split = tokenize_split(ckpt.vocab, *s, max_len);
      result[s->name] = accuracy(ckpt.params, split, rc.train.eval_batch_size);
    }
  }
  out << result.dump(2) << '\n';
  return kExitOk;
}

int cmd_analyze(Args& a, std::ostream& out) {
  if (a.positional.size() != 1) throw UsageError("analyze: expected exactly one log path");
  const fs::path log = a.positional.front();
  const auto compare = a.take("compare");
  const std::size_t sample = parse_count("sample", a.take("sample").value_or("200"));
  const std::uint64_t seed = parse_count("seed", a.take("seed").value_or("0"));
  const auto json_path = a.take("json");
  const auto csv_path = a.take("csv");
  auto label_a = a.take("label").value_or(log.stem().string());
  auto label_b = a.take("compare-label").value_or(compare ? fs::path(*compare).stem().string() : "");
  if (!a.options.empty()) throw UsageError("analyze: unknown option --" + a.options.front().first);
  if (compare && label_a == label_b) {
    label_a += " (1)";
    label_b += " (2)";
  }

  const DiversityReport ra = diversity_report(log, sample, seed);
  std::optional<DiversityReport> rb;
  std::optional<BootstrapInterval> ci;
  std::vector<std::pair<std::string, const DiversityReport*>> cols = {{label_a, &ra}};
  if (compare) {
    rb = diversity_report(fs::path(*compare), sample, seed);
    cols.emplace_back(label_b, &*rb);
    ci = bootstrap_different_known_diff(ra, *rb, 0.95, 1000, seed);
  }
  out << render_table(cols, ci);

  if (json_path) {
    json j = {{label_a, ra.to_json()}};
    if (rb) {
      j[label_b] = rb->to_json();
      j["different_known_diff"] = {{"estimate", ci->estimate},
                                   {"lower", ci->lower},
                                   {"upper", ci->upper},
                                   {"level", 0.95},
                                   {"resamples", ci->resamples}};
    }
    j["sample_size"] = sample;
    j["seed"] = seed;
    write_json(*json_path, j);
  }
  if (csv_path) write_annotation_csv(*csv_path, ra);
  return kExitOk;
}

int cmd_gen_data(Args& a, std::ostream& out) {
  no_positional(a, "gen-data");
  const KeyValues kv = collect_config(a);
  const RunConfig rc = build_config(kv);
  if (rc.data.kind != DataSource::Kind::synthetic) throw ConfigError("data.source: gen-data needs synthetic");
  const Dataset ds = load_dataset(rc.data, rc.train.seed);
  const fs::path dir = rc.output.dir;
  fs::create_directories(dir);
  const std::string ext = rc.data.format == FileFormat::tsv ? ".tsv" : ".jsonl";
  std::vector<const DatasetSplit*> splits = {&ds.train};
  for (const DatasetSplit* s : ds.eval_splits()) splits.push_back(s);
  for (const DatasetSplit* s : splits) {
    write_examples(dir / (s->name + ext), rc.data.format, *s, ds.label_names, rc.data.schema);
    out << (dir / (s->name + ext)).string() << ": " << s->examples.size() << " examples\n";
  }
  write_json(dir / "spec.json", resolved_spec(rc.data, rc.train.seed).to_json());
  return kExitOk;
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << kUsage;
    return kExitUsage;
  }
  const std::string cmd = args.front();
  if (cmd == "-h" || cmd == "--help" || cmd == "help") {
    out << kUsage;
    return kExitOk;
  }
  if (cmd == "--version" || cmd == "version") {
    out << "masktune " << version_string() << '\n';
    return kExitOk;
  }
  try {
    Args a = parse_args(args.subspan(1));
    if (cmd == "train") return cmd_train(a, out);
    if (cmd == "grid") return cmd_grid(a, out);
    if (cmd == "eval") return cmd_eval(a, out);
    if (cmd == "analyze") return cmd_analyze(a, out);
    if (cmd == "gen-data") return cmd_gen_data(a, out);
    err << "unknown command '" << cmd << "'\n" << kUsage;
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingError& e) {
    err << "training failed: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace masktune

#include "masktune/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace masktune {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

// Strips a trailing comment that is not inside quotes.
std::string strip_comment(std::string_view line) {
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quote) {
      if (c == quote) quote = 0;
    } else if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '#') {
      return std::string(line.substr(0, i));
    }
  }
  return std::string(line);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& want, const std::string& got) {
  throw ConfigError(key + ": expected " + want + ", got '" + got + "'");
}

template <class T>
T parse_integer(const std::string& key, const std::string& raw) {
  T v{};
  const std::string s = unquote(trim(raw));
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    bad_value(key, "a non-negative integer", raw);
  }
  return v;
}

double parse_double(const std::string& key, const std::string& raw) {
  const std::string s = unquote(trim(raw));
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) bad_value(key, "a number", raw);
  return v;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = to_lower(unquote(trim(raw)));
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value(key, "a boolean", raw);
}

std::vector<std::string> parse_list(const std::string& raw) {
  std::string s = trim(raw);
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = unquote(trim(item));
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& raw) {
  std::vector<double> out;
  for (const auto& item : parse_list(raw)) out.push_back(parse_double(key, item));
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& raw)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  using K = const std::string&;
  using V = const std::string&;
  auto sz = [](auto member) {
    return [member](RunConfig& c, K k, V v) { member(c) = parse_integer<std::size_t>(k, v); };
  };
  auto dbl = [](auto member) {
    return [member](RunConfig& c, K k, V v) { member(c) = parse_double(k, v); };
  };
  auto str = [](auto member) {
    return [member](RunConfig& c, K, V v) { member(c) = unquote(trim(v)); };
  };
  auto flag = [](auto member) {
    return [member](RunConfig& c, K k, V v) { member(c) = parse_bool(k, v); };
  };
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"data.source",
       [](RunConfig& c, K k, V v) {
         const std::string s = unquote(trim(v));
         if (s == "synthetic") {
           c.data.kind = DataSource::Kind::synthetic;
         } else if (s == "files") {
           c.data.kind = DataSource::Kind::files;
         } else {
           bad_value(k, "synthetic or files", v);
         }
       }},
      {"data.data_seed",
       [](RunConfig& c, K k, V v) {
         c.data.spec.seed = parse_integer<std::uint64_t>(k, v);
         c.data.spec_seed_explicit = true;
       }},
      {"data.n_signal_tokens", sz([](RunConfig& c) -> auto& { return c.data.spec.n_signal_tokens; })},
      {"data.shortcut_token", str([](RunConfig& c) -> auto& { return c.data.spec.shortcut_token; })},
      {"data.rho_train", dbl([](RunConfig& c) -> auto& { return c.data.spec.rho_train; })},
      {"data.rho_ood", dbl([](RunConfig& c) -> auto& { return c.data.spec.rho_ood; })},
      {"data.min_length", sz([](RunConfig& c) -> auto& { return c.data.spec.min_length; })},
      {"data.max_length", sz([](RunConfig& c) -> auto& { return c.data.spec.max_length; })},
      {"data.signal_tokens_per_sentence",
       sz([](RunConfig& c) -> auto& { return c.data.spec.signal_tokens_per_sentence; })},
      {"data.filler_vocab_size", sz([](RunConfig& c) -> auto& { return c.data.spec.filler_vocab_size; })},
      {"data.n_train", sz([](RunConfig& c) -> auto& { return c.data.spec.n_train; })},
      {"data.n_dev", sz([](RunConfig& c) -> auto& { return c.data.spec.n_dev; })},
      {"data.n_test_indist", sz([](RunConfig& c) -> auto& { return c.data.spec.n_test_indist; })},
      {"data.n_test_ood", sz([](RunConfig& c) -> auto& { return c.data.spec.n_test_ood; })},
      {"data.format",
       [](RunConfig& c, K k, V v) {
         try {
           c.data.format = parse_file_format(unquote(trim(v)));
         } catch (const std::invalid_argument&) {
           bad_value(k, "tsv or jsonl", v);
         }
       }},
      {"data.text_field", str([](RunConfig& c) -> auto& { return c.data.schema.text_field; })},
      {"data.text2_field", str([](RunConfig& c) -> auto& { return c.data.schema.text2_field; })},
      {"data.label_field", str([](RunConfig& c) -> auto& { return c.data.schema.label_field; })},
      {"data.labels",
       [](RunConfig& c, K k, V v) {
         auto names = parse_list(v);
         if (names.size() < 2) bad_value(k, "at least two label names", v);
         c.data.label_names = std::move(names);
       }},
      {"data.train", str([](RunConfig& c) -> auto& { return c.data.train; })},
      {"data.dev", str([](RunConfig& c) -> auto& { return c.data.dev; })},
      {"data.test_indist", str([](RunConfig& c) -> auto& { return c.data.test_indist; })},
      {"data.ood",
       [](RunConfig& c, K k, V v) {
         c.data.ood.clear();
         for (const auto& item : parse_list(v)) {
           const auto eq = item.find('=');
           if (eq == std::string::npos || eq == 0 || eq + 1 == item.size()) {
             bad_value(k, "a list of name=path entries", v);
           }
           c.data.ood.emplace_back(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
         }
       }},
      {"data.validation_fraction", dbl([](RunConfig& c) -> auto& { return c.data.validation_fraction; })},

      {"model.d_model", sz([](RunConfig& c) -> auto& { return c.train.model.d_model; })},
      {"model.n_layers", sz([](RunConfig& c) -> auto& { return c.train.model.n_layers; })},
      {"model.n_heads", sz([](RunConfig& c) -> auto& { return c.train.model.n_heads; })},
      {"model.d_ff", sz([](RunConfig& c) -> auto& { return c.train.model.d_ff; })},
      {"model.max_len", sz([](RunConfig& c) -> auto& { return c.train.model.max_len; })},
      {"model.dropout_rate", dbl([](RunConfig& c) -> auto& { return c.train.model.dropout_rate; })},

      {"masking.mask_rate", dbl([](RunConfig& c) -> auto& { return c.train.mask.mask_rate; })},
      {"masking.min_masks_per_example",
       sz([](RunConfig& c) -> auto& { return c.train.mask.min_masks_per_example; })},
      {"masking.temperature", dbl([](RunConfig& c) -> auto& { return c.train.mask.temperature; })},

      {"train.mode",
       [](RunConfig& c, K, V v) {
         try {
           c.train.mode = parse_mode(unquote(trim(v)));
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       }},
      {"train.alpha", dbl([](RunConfig& c) -> auto& { return c.train.alpha; })},
      {"train.alpha_grid",
       [](RunConfig& c, K k, V v) { c.train.alpha_grid = parse_double_list(k, v); }},
      {"train.epochs", sz([](RunConfig& c) -> auto& { return c.train.epochs; })},
      {"train.batch_size", sz([](RunConfig& c) -> auto& { return c.train.batch_size; })},
      {"train.eval_batch_size", sz([](RunConfig& c) -> auto& { return c.train.eval_batch_size; })},
      {"train.learning_rate", dbl([](RunConfig& c) -> auto& { return c.train.learning_rate; })},
      {"train.learning_rate_grid",
       [](RunConfig& c, K k, V v) { c.train.learning_rate_grid = parse_double_list(k, v); }},
      {"train.seeds", sz([](RunConfig& c) -> auto& { return c.train.seeds; })},
      {"train.seed",
       [](RunConfig& c, K k, V v) { c.train.seed = parse_integer<std::uint64_t>(k, v); }},
      {"train.weight_decay", dbl([](RunConfig& c) -> auto& { return c.train.weight_decay; })},
      {"train.beta1", dbl([](RunConfig& c) -> auto& { return c.train.beta1; })},
      {"train.beta2", dbl([](RunConfig& c) -> auto& { return c.train.beta2; })},
      {"train.adam_eps", dbl([](RunConfig& c) -> auto& { return c.train.adam_eps; })},
      {"train.linear_decay", flag([](RunConfig& c) -> auto& { return c.train.linear_decay; })},
      {"train.min_count", sz([](RunConfig& c) -> auto& { return c.train.min_count; })},

      {"output.dir",
       [](RunConfig& c, K k, V v) {
         const std::string s = unquote(trim(v));
         if (s.empty()) bad_value(k, "a directory path", v);
         c.output.dir = s;
       }},
      {"output.checkpoints", flag([](RunConfig& c) -> auto& { return c.output.checkpoints; })},
      {"output.perturbation_log", flag([](RunConfig& c) -> auto& { return c.output.perturbation_log; })},
  };
  return table;
}

}  // namespace

KeyValues parse_config_text(std::string_view text, std::string_view source) {
  static const std::vector<std::string> sections = {"data", "model", "masking", "train", "output"};
  KeyValues kv;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw ConfigError(std::string(source) + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail("unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (std::find(sections.begin(), sections.end(), section) == sections.end()) {
        fail("unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) fail("empty key");
    if (section.empty()) fail("key '" + key + "' outside any section");
    const std::string full = section + "." + key;
    const auto& keys = known_keys();
    if (std::find(keys.begin(), keys.end(), full) == keys.end()) fail("unknown key " + full);
    if (kv.contains(full)) fail("duplicate key " + full);
    kv[full] = trim(s.substr(eq + 1));
  }
  return kv;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, setter] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

void apply_override(KeyValues& kv, std::string_view key, std::string value) {
  const auto& keys = known_keys();
  const std::string k(key);
  if (std::find(keys.begin(), keys.end(), k) != keys.end()) {
    kv[k] = std::move(value);
    return;
  }
  std::vector<std::string> matches;
  for (const auto& full : keys) {
    if (full.substr(full.find('.') + 1) == k) matches.push_back(full);
  }
  if (matches.empty()) throw ConfigError("unknown option --" + k);
  if (matches.size() > 1) {
    std::string all;
    for (const auto& m : matches) all += (all.empty() ? "" : ", ") + m;
    throw ConfigError("ambiguous option --" + k + " (use one of " + all + ")");
  }
  kv[matches.front()] = std::move(value);
}

RunConfig build_config(const KeyValues& kv) {
  RunConfig c;
  for (const auto& [key, setter] : setters()) {
    if (auto it = kv.find(key); it != kv.end()) setter(c, key, it->second);
  }
  for (const auto& [key, value] : kv) {
    const auto& keys = known_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError("unknown key " + key);
  }
  c.train.model.num_classes = c.data.kind == DataSource::Kind::synthetic
                                  ? kBinaryLabelNames.size()
                                  : c.data.label_names.size();
  try {
    c.train.validate();
    if (c.data.kind == DataSource::Kind::synthetic) {
      c.data.spec.validate();
      const std::size_t longest = c.data.spec.max_length + 2;
      if (longest > c.train.model.max_len) {
        throw std::invalid_argument("model.max_len: " + std::to_string(c.train.model.max_len) +
                                    " is shorter than the longest generated sequence (" +
                                    std::to_string(longest) + ")");
      }
    } else {
      if (c.data.train.empty()) throw std::invalid_argument("data.train: required when source = files");
      if (c.data.test_indist.empty() && c.data.ood.empty()) {
        throw std::invalid_argument("data.test_indist: give a test_indist path or at least one ood entry");
      }
      if (c.data.dev.empty() && !(c.data.validation_fraction > 0.0 && c.data.validation_fraction < 1.0)) {
        throw std::invalid_argument("data.validation_fraction: must lie in (0, 1) when no dev file is given");
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

SpuriousTaskSpec resolved_spec(const DataSource& source, std::uint64_t root_seed) {
  SpuriousTaskSpec s = source.spec;
  if (!source.spec_seed_explicit) s.seed = derive_seed(root_seed, "data");
  return s;
}

Dataset load_dataset(const DataSource& source, std::uint64_t root_seed) {
  if (source.kind == DataSource::Kind::synthetic) return gen_spurious_task(resolved_spec(source, root_seed));

  RecordSchema schema = source.schema;
  schema.label_map.clear();
  for (std::size_t i = 0; i < source.label_names.size(); ++i) {
    schema.label_map[source.label_names[i]] = static_cast<std::int32_t>(i);
    schema.label_map.emplace(std::to_string(i), static_cast<std::int32_t>(i));
  }
  auto load = [&](const std::filesystem::path& p, const std::string& name) {
    return load_examples(p, source.format, schema, name).split;
  };
  Dataset d;
  d.label_names = source.label_names;
  d.train = load(source.train, "train");
  if (source.dev.empty()) {
    std::tie(d.train, d.dev) = split_validation(d.train, source.validation_fraction, root_seed);
  } else {
    d.dev = load(source.dev, "dev");
  }
  if (!source.test_indist.empty()) d.test_indist = load(source.test_indist, "test_indist");
  d.test_indist.name = "test_indist";
  for (const auto& [name, path] : source.ood) d.ood.push_back(load(path, name));
  return d;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  if (data.kind == DataSource::Kind::synthetic) {
    j["data"] = {{"source", "synthetic"}, {"spec", data.spec.to_json()},
                 {"data_seed_explicit", data.spec_seed_explicit}};
  } else {
    nlohmann::json ood = nlohmann::json::object();
    for (const auto& [name, path] : data.ood) ood[name] = path.string();
    j["data"] = {{"source", "files"},
                 {"format", data.format == FileFormat::tsv ? "tsv" : "jsonl"},
                 {"text_field", data.schema.text_field},
                 {"text2_field", data.schema.text2_field},
                 {"label_field", data.schema.label_field},
                 {"labels", data.label_names},
                 {"train", data.train.string()},
                 {"dev", data.dev.string()},
                 {"test_indist", data.test_indist.string()},
                 {"ood", ood},
                 {"validation_fraction", data.validation_fraction}};
  }
  j["train"] = train.to_json();
  j["output"] = {{"dir", output.dir.string()},
                 {"checkpoints", output.checkpoints},
                 {"perturbation_log", output.perturbation_log}};
  return j;
}

}  // namespace masktune

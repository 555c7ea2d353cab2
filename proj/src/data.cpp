#include "masktune/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "masktune/rng.hpp"

namespace masktune {

std::vector<const DatasetSplit*> Dataset::eval_splits() const {
  std::vector<const DatasetSplit*> out{&dev, &test_indist};
  for (const auto& s : ood) out.push_back(&s);
  return out;
}

void SpuriousTaskSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("data." + field + ": " + why);
  };
  if (n_signal_tokens == 0) fail("n_signal_tokens", "must be positive");
  if (signal_tokens_per_sentence == 0) fail("signal_tokens_per_sentence", "must be >= 1");
  if (signal_tokens_per_sentence % 2 == 0) {
    fail("signal_tokens_per_sentence", "must be odd so the majority label is never tied");
  }
  if (!(rho_train >= 0.0 && rho_train <= 1.0)) fail("rho_train", "must lie in [0, 1]");
  if (!(rho_ood >= 0.0 && rho_ood <= 1.0)) fail("rho_ood", "must lie in [0, 1]");
  if (min_length > max_length) fail("min_length", "must not exceed max_length");
  if (min_length < signal_tokens_per_sentence + 1) {
    fail("min_length", "must leave room for the signal tokens and the shortcut");
  }
  if (filler_vocab_size == 0 && min_length > signal_tokens_per_sentence + 1) {
    fail("filler_vocab_size", "must be positive when sentences need fillers");
  }
  if (shortcut_token.empty() || split_tokens(shortcut_token).size() != 1) {
    fail("shortcut_token", "must be a single whitespace-free token");
  }
  for (auto [n, name] : {std::pair{n_train, "n_train"}, {n_dev, "n_dev"},
                         {n_test_indist, "n_test_indist"}, {n_test_ood, "n_test_ood"}}) {
    if (n == 0 || n % 2 != 0) fail(name, "must be a positive even number (exact class balance)");
  }
}

nlohmann::json SpuriousTaskSpec::to_json() const {
  return {{"n_signal_tokens", n_signal_tokens},
          {"shortcut_token", shortcut_token},
          {"rho_train", rho_train},
          {"rho_ood", rho_ood},
          {"min_length", min_length},
          {"max_length", max_length},
          {"signal_tokens_per_sentence", signal_tokens_per_sentence},
          {"filler_vocab_size", filler_vocab_size},
          {"n_train", n_train},
          {"n_dev", n_dev},
          {"n_test_indist", n_test_indist},
          {"n_test_ood", n_test_ood},
          {"seed", seed}};
}

std::string SpuriousTaskSpec::signal_token(std::int32_t label, std::size_t i) const {
  return (label == 1 ? "pos" : "neg") + std::to_string(i);
}

std::string SpuriousTaskSpec::filler_token(std::size_t i) const { return "w" + std::to_string(i); }

namespace {

DatasetSplit gen_split(const SpuriousTaskSpec& spec, const std::string& name, std::size_t n,
                       double rho, Rng& rng, std::size_t& next_id,
                       std::unordered_set<std::string>& seen) {
  const std::size_t half = n / 2;
  std::vector<std::int32_t> labels(n);
  std::fill(labels.begin(), labels.begin() + half, 0);
  std::fill(labels.begin() + half, labels.end(), 1);
  std::shuffle(labels.begin(), labels.end(), rng);

  // Exact shortcut allocation per class.
  const auto with_cue_pos = static_cast<std::size_t>(std::llround(rho * static_cast<double>(half)));
  const auto with_cue_neg =
      static_cast<std::size_t>(std::llround((1.0 - rho) * static_cast<double>(half)));
  std::vector<std::uint8_t> cue_pos(half, 0), cue_neg(half, 0);
  std::fill_n(cue_pos.begin(), with_cue_pos, 1);
  std::fill_n(cue_neg.begin(), with_cue_neg, 1);
  std::shuffle(cue_pos.begin(), cue_pos.end(), rng);
  std::shuffle(cue_neg.begin(), cue_neg.end(), rng);

  const std::size_t k = spec.signal_tokens_per_sentence;
  std::uniform_int_distribution<std::size_t> majority(k / 2 + 1, k);
  std::uniform_int_distribution<std::size_t> signal_pick(0, spec.n_signal_tokens - 1);
  std::uniform_int_distribution<std::size_t> length_pick(spec.min_length, spec.max_length);
  std::uniform_int_distribution<std::size_t> filler_pick(
      0, std::max<std::size_t>(spec.filler_vocab_size, 1) - 1);

  DatasetSplit split{name, {}};
  split.examples.reserve(n);
  std::size_t pos_seen = 0, neg_seen = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t y = labels[i];
    const bool cue = y == 1 ? cue_pos[pos_seen++] : cue_neg[neg_seen++];
    std::string text;
    for (;;) {
      const std::size_t agree = majority(rng);
      std::vector<std::string> words;
      for (std::size_t s = 0; s < k; ++s) {
        words.push_back(spec.signal_token(s < agree ? y : 1 - y, signal_pick(rng)));
      }
      if (cue) words.push_back(spec.shortcut_token);
      const std::size_t len = length_pick(rng);
      while (words.size() < len) words.push_back(spec.filler_token(filler_pick(rng)));
      std::shuffle(words.begin(), words.end(), rng);
      std::ostringstream os;
      for (std::size_t w = 0; w < words.size(); ++w) os << (w ? " " : "") << words[w];
      text = os.str();
      if (seen.insert(text).second) break;
    }
    split.examples.push_back({next_id++, std::move(text), std::nullopt, y});
  }
  return split;
}

}  // namespace

Dataset gen_spurious_task(const SpuriousTaskSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "data"));
  std::size_t next_id = 0;
  std::unordered_set<std::string> seen;
  Dataset d;
  d.label_names = kBinaryLabelNames;
  d.train = gen_split(spec, "train", spec.n_train, spec.rho_train, rng, next_id, seen);
  d.dev = gen_split(spec, "dev", spec.n_dev, spec.rho_train, rng, next_id, seen);
  d.test_indist = gen_split(spec, "test_indist", spec.n_test_indist, spec.rho_train, rng, next_id, seen);
  d.ood.push_back(gen_split(spec, "test_ood", spec.n_test_ood, spec.rho_ood, rng, next_id, seen));
  return d;
}

FileFormat parse_file_format(std::string_view s) {
  if (s == "tsv") return FileFormat::tsv;
  if (s == "jsonl") return FileFormat::jsonl;
  throw std::invalid_argument("unknown file format '" + std::string(s) + "' (expected tsv or jsonl)");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

std::string label_map_str(const std::map<std::string, std::int32_t>& m) {
  std::string s;
  for (const auto& [k, v] : m) s += (s.empty() ? "" : ", ") + k + "=" + std::to_string(v);
  return "{" + s + "}";
}

std::int32_t map_label(const std::string& raw, const RecordSchema& schema,
                       const std::filesystem::path& path, std::size_t lineno) {
  auto it = schema.label_map.find(raw);
  if (it == schema.label_map.end()) {
    throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": unknown label '" +
                             raw + "'; label map is " + label_map_str(schema.label_map));
  }
  return it->second;
}

std::string clean_field(std::string s) {
  std::replace_if(s.begin(), s.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
  return s;
}

}  // namespace

LoadReport load_examples(const std::filesystem::path& path, FileFormat format,
                         const RecordSchema& schema, std::string split_name) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  LoadReport rep;
  rep.split.name = split_name.empty() ? path.stem().string() : std::move(split_name);
  const bool pair = !schema.text2_field.empty();
  auto skip = [&](std::size_t lineno, const std::string& why) {
    ++rep.malformed;
    rep.problems.push_back(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };

  std::string line;
  std::size_t lineno = 0;
  if (format == FileFormat::tsv) {
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
    ++lineno;
    const auto header = split_tabs(line);
    auto col = [&](const std::string& name) -> std::optional<std::size_t> {
      auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) return std::nullopt;
      return static_cast<std::size_t>(it - header.begin());
    };
    const auto text_col = col(schema.text_field);
    const auto label_col = col(schema.label_field);
    const auto text2_col = pair ? col(schema.text2_field) : std::nullopt;
    if (!text_col || !label_col || (pair && !text2_col)) {
      throw std::runtime_error(path.string() + ": header lacks schema columns");
    }
    const std::size_t tc = *text_col, lc = *label_col, t2c = pair ? *text2_col : 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line == "\r") continue;
      const auto cells = split_tabs(line);
      const std::size_t need = std::max({tc, lc, t2c}) + 1;
      if (cells.size() < need) {
        skip(lineno, "expected " + std::to_string(need) + " columns, got " + std::to_string(cells.size()));
        continue;
      }
      if (cells[lc].empty()) {
        skip(lineno, "empty label");
        continue;
      }
      Example ex;
      ex.id = rep.split.examples.size();
      ex.text = cells[tc];
      if (pair) ex.text2 = cells[t2c];
      ex.label = map_label(cells[lc], schema, path, lineno);
      rep.split.examples.push_back(std::move(ex));
    }
  } else {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        skip(lineno, "not valid JSON");
        continue;
      }
      if (!j.is_object() || !j.contains(schema.text_field) || !j[schema.text_field].is_string()) {
        skip(lineno, "missing text field '" + schema.text_field + "'");
        continue;
      }
      if (!j.contains(schema.label_field)) {
        skip(lineno, "missing label field '" + schema.label_field + "'");
        continue;
      }
      if (pair && (!j.contains(schema.text2_field) || !j[schema.text2_field].is_string())) {
        skip(lineno, "missing text field '" + schema.text2_field + "'");
        continue;
      }
      const auto& lab = j[schema.label_field];
      const std::string raw = lab.is_string() ? lab.get<std::string>() : lab.dump();
      Example ex;
      ex.id = rep.split.examples.size();
      ex.text = j[schema.text_field].get<std::string>();
      if (pair) ex.text2 = j[schema.text2_field].get<std::string>();
      ex.label = map_label(raw, schema, path, lineno);
      rep.split.examples.push_back(std::move(ex));
    }
  }
  if (rep.split.examples.empty()) {
    throw std::runtime_error(path.string() + ": no valid records (" + std::to_string(rep.malformed) +
                             " malformed)");
  }
  return rep;
}

void write_examples(const std::filesystem::path& path, FileFormat format,
                    const DatasetSplit& split, std::span<const std::string> label_names,
                    const RecordSchema& schema) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const bool pair = std::any_of(split.examples.begin(), split.examples.end(),
                                [](const Example& e) { return e.text2.has_value(); });
  const std::string text2_field = schema.text2_field.empty() ? "text2" : schema.text2_field;
  auto label_str = [&](std::int32_t y) -> std::string {
    if (y < 0 || static_cast<std::size_t>(y) >= label_names.size()) {
      throw std::out_of_range("label " + std::to_string(y) + " has no name");
    }
    return label_names[y];
  };
  if (format == FileFormat::tsv) {
    out << schema.text_field << '\t';
    if (pair) out << text2_field << '\t';
    out << schema.label_field << '\n';
    for (const auto& e : split.examples) {
      out << clean_field(e.text) << '\t';
      if (pair) out << clean_field(e.text2.value_or("")) << '\t';
      out << label_str(e.label) << '\n';
    }
  } else {
    for (const auto& e : split.examples) {
      nlohmann::json j;
      j[schema.text_field] = e.text;
      if (e.text2) j[text2_field] = *e.text2;
      j[schema.label_field] = label_str(e.label);
      out << j.dump() << '\n';
    }
  }
}

std::pair<DatasetSplit, DatasetSplit> split_validation(const DatasetSplit& train, double fraction,
                                                       std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("validation fraction must lie in (0,1)");
  std::map<std::int32_t, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < train.examples.size(); ++i) by_label[train.examples[i].label].push_back(i);
  Rng rng(derive_seed(seed, "validation"));
  std::vector<std::uint8_t> to_dev(train.examples.size(), 0);
  for (auto& [label, idx] : by_label) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < take; ++i) to_dev[idx[i]] = 1;
  }
  DatasetSplit rest{train.name, {}}, dev{"dev", {}};
  for (std::size_t i = 0; i < train.examples.size(); ++i) {
    (to_dev[i] ? dev : rest).examples.push_back(train.examples[i]);
  }
  return {rest, dev};
}

std::vector<TokenizedExample> tokenize_split(const Vocab& vocab, const DatasetSplit& split,
                                             std::size_t max_len) {
  std::vector<TokenizedExample> out;
  out.reserve(split.examples.size());
  for (const auto& e : split.examples) {
    std::optional<std::string_view> t2;
    if (e.text2) t2 = *e.text2;
    out.push_back({encode(vocab, e.text, t2, max_len), e.label, e.id});
  }
  return out;
}

std::vector<std::int32_t> predict(ModelParameters& params, std::span<const TokenizedExample> split,
                                  std::size_t batch_size) {
  std::vector<std::int32_t> out;
  out.reserve(split.size());
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    const std::size_t end = std::min(split.size(), start + batch_size);
    std::vector<std::vector<TokenId>> seqs;
    for (std::size_t i = start; i < end; ++i) seqs.push_back(split[i].token_ids);
    Graph g(false);
    Var h = encode(g, params, make_batch(seqs), nullptr);
    auto preds = argmax_rows(g.value(cls_logits(g, params, h)));
    out.insert(out.end(), preds.begin(), preds.end());
  }
  return out;
}

double accuracy(ModelParameters& params, std::span<const TokenizedExample> split,
                std::size_t batch_size) {
  if (split.empty()) throw std::invalid_argument("accuracy on an empty split");
  const auto preds = predict(params, split, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.size(); ++i) correct += preds[i] == split[i].label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

}  // namespace masktune

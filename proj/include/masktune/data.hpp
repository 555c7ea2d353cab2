#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "masktune/model.hpp"
#include "masktune/tokenizer.hpp"

namespace masktune {

struct Example {
  std::size_t id = 0;
  std::string text;
  std::optional<std::string> text2;
  std::int32_t label = 0;

  bool operator==(const Example&) const = default;
};

struct DatasetSplit {
  std::string name;
  std::vector<Example> examples;
};

/// Train, dev and in-distribution test share one distribution; each entry
/// of `ood` is a separately registered out-of-distribution test set.
struct Dataset {
  DatasetSplit train;
  DatasetSplit dev;
  DatasetSplit test_indist;
  std::vector<DatasetSplit> ood;
  std::vector<std::string> label_names;  // index == class id

  /// Splits in evaluation order: dev, test_indist, then every OOD set.
  std::vector<const DatasetSplit*> eval_splits() const;
};

/// Binary task whose label is the majority class of k signal tokens, plus a
/// shortcut token whose presence agrees with the label at rate rho.
///
/// Within a split of rate rho, exactly round(rho * n1) label-1 examples and
/// round((1 - rho) * n0) label-0 examples carry the shortcut, so the
/// shortcut-only rule "predict 1 iff present" scores rho up to rounding.
struct SpuriousTaskSpec {
  std::size_t n_signal_tokens = 20;  // per class
  std::string shortcut_token = "zcue";
  double rho_train = 0.95;
  double rho_ood = 0.05;
  std::size_t min_length = 8;
  std::size_t max_length = 14;
  std::size_t signal_tokens_per_sentence = 3;  // k, must be odd
  std::size_t filler_vocab_size = 1950;
  std::size_t n_train = 8000;
  std::size_t n_dev = 1000;
  std::size_t n_test_indist = 1000;
  std::size_t n_test_ood = 1000;
  std::uint64_t seed = 2024;

  void validate() const;
  nlohmann::json to_json() const;

  std::string signal_token(std::int32_t label, std::size_t i) const;
  std::string filler_token(std::size_t i) const;
};

inline const std::vector<std::string> kBinaryLabelNames = {"negative", "positive"};

Dataset gen_spurious_task(const SpuriousTaskSpec& spec);

enum class FileFormat { tsv, jsonl };
FileFormat parse_file_format(std::string_view s);

struct RecordSchema {
  std::string text_field = "text";
  std::string text2_field;  // empty: single-sentence
  std::string label_field = "label";
  /// label string -> class id
  std::map<std::string, std::int32_t> label_map = {{"negative", 0}, {"positive", 1}};
};

struct LoadReport {
  DatasetSplit split;
  std::size_t malformed = 0;
  std::vector<std::string> problems;  // one line per skipped record
};

/// Reads one example per record. Malformed records are skipped and reported;
/// zero valid records or an unknown label string throw std::runtime_error.
LoadReport load_examples(const std::filesystem::path& path, FileFormat format,
                         const RecordSchema& schema, std::string split_name = "");

/// Writes a split with string labels. TSV gets a header row.
void write_examples(const std::filesystem::path& path, FileFormat format,
                    const DatasetSplit& split, std::span<const std::string> label_names,
                    const RecordSchema& schema = {});

/// Stratified carve-out of `fraction` of `train` into a validation split.
std::pair<DatasetSplit, DatasetSplit> split_validation(const DatasetSplit& train, double fraction,
                                                       std::uint64_t seed);

std::vector<TokenizedExample> tokenize_split(const Vocab& vocab, const DatasetSplit& split,
                                             std::size_t max_len);

/// Argmax class per example, dropout disabled.
std::vector<std::int32_t> predict(ModelParameters& params, std::span<const TokenizedExample> split,
                                  std::size_t batch_size = 64);

/// Fraction of examples whose predicted class equals the label.
double accuracy(ModelParameters& params, std::span<const TokenizedExample> split,
                std::size_t batch_size = 64);

}  // namespace masktune

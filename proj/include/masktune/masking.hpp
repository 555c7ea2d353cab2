#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "masktune/model.hpp"
#include "masktune/rng.hpp"
#include "masktune/tokenizer.hpp"

namespace masktune {

struct MaskPolicy {
  double mask_rate = 0.05;
  std::uint64_t rng_seed = 0;
  std::size_t min_masks_per_example = 1;
  /// 0 selects the argmax prediction; > 0 samples from softmax(logits / T).
  double temperature = 0.0;

  void validate() const;
};

/// [CLS], [SEP] and [PAD] are never masked.
bool is_maskable(TokenId id);

struct MaskedBatch {
  std::vector<std::vector<TokenId>> input_ids;     // [MASK] substituted
  std::vector<std::vector<TokenId>> original_ids;
  std::vector<std::vector<std::size_t>> mask_positions;
  std::vector<std::int32_t> labels;
  std::vector<std::size_t> example_ids;
  /// Examples that had no eligible token and so contribute no MLM term.
  std::size_t skipped = 0;

  std::size_t size() const { return input_ids.size(); }
  std::size_t total_masks() const;
  /// Positions in example-major order; matches flat_targets().
  std::vector<TokenPosition> flat_positions() const;
  std::vector<TokenId> flat_targets() const;
};

/// RNG for one batch: a pure function of (policy seed, epoch, batch index).
Rng mask_rng(const MaskPolicy& policy, std::uint64_t epoch, std::uint64_t batch_index);

/// Masks each eligible token independently with probability mask_rate, then
/// tops up to min_masks_per_example by masking uniformly chosen unmasked
/// eligible tokens.
MaskedBatch select_and_mask(std::span<const TokenizedExample> batch, const MaskPolicy& policy,
                            Rng& rng);

struct PerturbedExample {
  std::vector<TokenId> token_ids;
  std::int32_t label = 0;
  std::size_t example_id = 0;
};

/// Substitutes predictions (one per mask, in flat_positions() order) into the
/// original sequences. Labels are copied from the originals.
std::vector<PerturbedExample> build_perturbed(const MaskedBatch& masked,
                                              std::span<const TokenId> predictions);

/// One token per row of MLM logits. [PAD], [CLS], [SEP] and [MASK] are never
/// predicted; [UNK] may be. rng is required when temperature > 0.
std::vector<TokenId> predict_tokens(const Tensor& logits, double temperature, Rng* rng);

/// One line of the perturbation log.
struct PredictionRecord {
  std::size_t epoch = 0;
  std::size_t example_id = 0;
  std::size_t position = 0;
  std::string original_token;
  std::string predicted_token;

  bool operator==(const PredictionRecord&) const = default;
};

nlohmann::json to_json(const PredictionRecord& r);
PredictionRecord prediction_record_from_json(const nlohmann::json& j);

/// Appends records as JSONL.
class PerturbationLogWriter {
 public:
  explicit PerturbationLogWriter(const std::filesystem::path& path);
  void write(const PredictionRecord& r);
  std::size_t written() const { return written_; }

 private:
  std::ofstream out_;
  std::size_t written_ = 0;
};

/// Throws std::runtime_error if the file cannot be read or a line is not a
/// valid record.
std::vector<PredictionRecord> read_perturbation_log(const std::filesystem::path& path);

}  // namespace masktune

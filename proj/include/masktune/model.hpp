#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "masktune/graph.hpp"
#include "masktune/tokenizer.hpp"

namespace masktune {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_len = 32;
  std::size_t num_classes = 2;
  double dropout_rate = 0.1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

/// All trainable weights. The MLM head has no projection of its own: its
/// logits are hidden * token_embedding^T + mlm_bias.
struct ModelParameters {
  ModelConfig config;
  Tensor token_embedding;     // [vocab, d]
  Tensor position_embedding;  // [max_len, d]
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;  // [d]
  Tensor mlm_bias;                // [vocab]
  Tensor cls_weight;              // [d, classes]
  Tensor cls_bias;                // [classes]

  /// Stable name -> tensor listing, used by the optimizer and checkpoints.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  /// Expected shape for every name in named(), derived from config.
  static std::vector<std::pair<std::string, Shape>> expected_shapes(const ModelConfig& cfg);

  void zero_grad();
  bool all_finite() const;
  std::size_t parameter_count() const;
};

/// Normal(0, 0.02) weights, zero biases, unit layer-norm gains. Gradients are
/// enabled on every tensor.
ModelParameters init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Right-padded batch of token sequences.
struct EncoderBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> ids;          // [batch * seq], [PAD]-filled
  std::vector<std::uint8_t> valid;   // 1 for real tokens
  std::vector<std::size_t> lengths;
};

EncoderBatch make_batch(std::span<const std::vector<TokenId>> sequences);

/// Location of one masked token.
struct TokenPosition {
  std::size_t example = 0;
  std::size_t index = 0;
  bool operator==(const TokenPosition&) const = default;
};

/// Pre-LN transformer encoder. Returns hidden states [batch, seq, d].
/// Dropout (after attention and after the feed-forward block) is applied
/// only when dropout_rng is non-null.
Var encode(Graph& g, ModelParameters& params, const EncoderBatch& batch, Rng* dropout_rng);

/// Tied-embedding MLM logits at the given positions -> [positions, vocab].
Var mlm_logits(Graph& g, ModelParameters& params, Var hidden,
               std::span<const TokenPosition> positions);

/// Linear classifier over the position-0 ([CLS]) hidden state -> [batch, classes].
Var cls_logits(Graph& g, ModelParameters& params, Var hidden);

/// Index of the largest entry of each row; first index wins ties.
std::vector<std::int32_t> argmax_rows(const Tensor& logits);

}  // namespace masktune

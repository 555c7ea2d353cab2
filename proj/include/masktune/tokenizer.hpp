#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace masktune {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr std::size_t kCount = 5;
}  // namespace special

std::string to_lower(std::string_view s);
/// Lowercased whitespace-separated tokens.
std::vector<std::string> split_tokens(std::string_view text);

/// Token <-> id map. Ids 0..4 are [PAD], [UNK], [CLS], [SEP], [MASK].
/// Immutable once built.
class Vocab {
 public:
  /// Counts lowercased whitespace tokens and keeps those with count >= min_count,
  /// ordered by frequency (descending) then lexicographically. Throws on an
  /// empty corpus.
  static Vocab build(std::span<const std::string> corpus, std::size_t min_count = 1);
  /// Inverse of to_json(). Validates reserved ids and that ids are 0..n-1.
  static Vocab from_json(const nlohmann::json& j);

  nlohmann::json to_json() const;

  std::size_t size() const { return tokens_.size(); }
  /// [UNK] for unknown tokens. Bracketed reserved names map to their ids.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  /// Throws std::out_of_range for ids outside the vocabulary.
  const std::string& token(TokenId id) const;
  static bool is_reserved(TokenId id) { return id >= 0 && id < static_cast<TokenId>(special::kCount); }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  explicit Vocab(std::vector<std::string> tokens);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TokenizedExample {
  std::vector<TokenId> token_ids;
  std::int32_t label = 0;
  std::size_t example_id = 0;
};

/// [CLS] t1 t2 ... truncated to max_len (max_len >= 2).
std::vector<TokenId> encode(const Vocab& vocab, std::string_view text, std::size_t max_len);
/// [CLS] a1 a2 [SEP] b1 b2 truncated to max_len.
std::vector<TokenId> encode(const Vocab& vocab, std::string_view text,
                            std::optional<std::string_view> text2, std::size_t max_len);

/// Space-joined tokens. A leading [CLS] and trailing [PAD]s are framing and
/// are dropped; any other reserved id renders as its bracketed name.
std::string decode(const Vocab& vocab, std::span<const TokenId> ids);

}  // namespace masktune

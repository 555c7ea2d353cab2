#include "masktune/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <stdexcept>

namespace masktune {

namespace {
constexpr std::array<std::string_view, special::kCount> kReservedNames = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

std::optional<TokenId> reserved_id(std::string_view lowered) {
  for (std::size_t i = 0; i < kReservedNames.size(); ++i) {
    if (to_lower(kReservedNames[i]) == lowered) return static_cast<TokenId>(i);
  }
  return std::nullopt;
}
}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(to_lower(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

Vocab Vocab::build(std::span<const std::string> corpus, std::size_t min_count) {
  if (corpus.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : corpus) {
    for (auto& tok : split_tokens(line)) {
      if (reserved_id(tok)) continue;
      ++counts[tok];
    }
  }
  if (counts.empty()) throw std::invalid_argument("cannot build a vocabulary: corpus has no tokens");
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= std::max<std::size_t>(min_count, 1)) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens(kReservedNames.begin(), kReservedNames.end());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocab(std::move(tokens));
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("vocabulary JSON must be an object");
  std::vector<std::string> tokens(j.size());
  std::vector<bool> seen(j.size(), false);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto id = it.value().get<long long>();
    if (id < 0 || static_cast<std::size_t>(id) >= tokens.size() || seen[id]) {
      throw std::invalid_argument("vocabulary ids must be a permutation of 0..n-1");
    }
    seen[id] = true;
    tokens[id] = it.key();
  }
  if (tokens.size() < special::kCount) throw std::invalid_argument("vocabulary smaller than the reserved set");
  for (std::size_t i = 0; i < special::kCount; ++i) {
    if (tokens[i] != kReservedNames[i]) {
      throw std::invalid_argument("reserved id " + std::to_string(i) + " must be " +
                                  std::string(kReservedNames[i]));
    }
  }
  return Vocab(std::move(tokens));
}

nlohmann::json Vocab::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  return j;
}

TokenId Vocab::id(std::string_view token) const {
  const std::string lowered = to_lower(token);
  if (auto r = reserved_id(lowered)) return *r;
  auto it = index_.find(lowered);
  return it == index_.end() ? special::kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  const std::string lowered = to_lower(token);
  return reserved_id(lowered).has_value() || index_.count(lowered) > 0;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::vector<TokenId> encode(const Vocab& vocab, std::string_view text, std::size_t max_len) {
  return encode(vocab, text, std::nullopt, max_len);
}

std::vector<TokenId> encode(const Vocab& vocab, std::string_view text,
                            std::optional<std::string_view> text2, std::size_t max_len) {
  if (max_len < 2) throw std::invalid_argument("encode: max_len must be at least 2");
  std::vector<TokenId> ids{special::kCls};
  for (const auto& tok : split_tokens(text)) ids.push_back(vocab.id(tok));
  if (text2) {
    ids.push_back(special::kSep);
    for (const auto& tok : split_tokens(*text2)) ids.push_back(vocab.id(tok));
  }
  if (ids.size() > max_len) ids.resize(max_len);
  return ids;
}

std::string decode(const Vocab& vocab, std::span<const TokenId> ids) {
  std::size_t begin = 0, end = ids.size();
  if (begin < end && ids[begin] == special::kCls) ++begin;
  while (end > begin && ids[end - 1] == special::kPad) --end;
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

}  // namespace masktune

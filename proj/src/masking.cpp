#include "masktune/masking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace masktune {

void MaskPolicy::validate() const {
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
    throw std::invalid_argument("masking.mask_rate: must lie in (0, 1)");
  }
  if (temperature < 0.0) throw std::invalid_argument("masking.temperature: must be >= 0");
}

bool is_maskable(TokenId id) {
  return id != special::kCls && id != special::kSep && id != special::kPad;
}

std::size_t MaskedBatch::total_masks() const {
  std::size_t n = 0;
  for (const auto& p : mask_positions) n += p.size();
  return n;
}

std::vector<TokenPosition> MaskedBatch::flat_positions() const {
  std::vector<TokenPosition> out;
  for (std::size_t e = 0; e < mask_positions.size(); ++e) {
    for (auto idx : mask_positions[e]) out.push_back({e, idx});
  }
  return out;
}

std::vector<TokenId> MaskedBatch::flat_targets() const {
  std::vector<TokenId> out;
  for (std::size_t e = 0; e < mask_positions.size(); ++e) {
    for (auto idx : mask_positions[e]) out.push_back(original_ids[e][idx]);
  }
  return out;
}

Rng mask_rng(const MaskPolicy& policy, std::uint64_t epoch, std::uint64_t batch_index) {
  return Rng(derive_seed(policy.rng_seed, epoch, batch_index));
}

MaskedBatch select_and_mask(std::span<const TokenizedExample> batch, const MaskPolicy& policy,
                            Rng& rng) {
  policy.validate();
  if (batch.empty()) throw std::invalid_argument("select_and_mask: empty batch");
  MaskedBatch out;
  std::bernoulli_distribution coin(policy.mask_rate);
  for (const auto& ex : batch) {
    std::vector<TokenId> ids = ex.token_ids;
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (is_maskable(ids[i])) eligible.push_back(i);
    }
    std::vector<std::size_t> chosen;
    std::vector<std::size_t> rest;
    for (auto i : eligible) (coin(rng) ? chosen : rest).push_back(i);
    const std::size_t floor = std::min(policy.min_masks_per_example, eligible.size());
    while (chosen.size() < floor) {
      std::uniform_int_distribution<std::size_t> pick(0, rest.size() - 1);
      const std::size_t k = pick(rng);
      chosen.push_back(rest[k]);
      rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(k));
    }
    std::sort(chosen.begin(), chosen.end());
    if (eligible.empty()) ++out.skipped;

    out.original_ids.push_back(ids);
    for (auto i : chosen) ids[i] = special::kMask;
    out.input_ids.push_back(std::move(ids));
    out.mask_positions.push_back(std::move(chosen));
    out.labels.push_back(ex.label);
    out.example_ids.push_back(ex.example_id);
  }
  return out;
}

std::vector<PerturbedExample> build_perturbed(const MaskedBatch& masked,
                                              std::span<const TokenId> predictions) {
  if (predictions.size() != masked.total_masks()) {
    throw std::invalid_argument("build_perturbed: " + std::to_string(predictions.size()) +
                                " predictions for " + std::to_string(masked.total_masks()) +
                                " masked positions");
  }
  std::vector<PerturbedExample> out;
  out.reserve(masked.size());
  std::size_t k = 0;
  for (std::size_t e = 0; e < masked.size(); ++e) {
    PerturbedExample p{masked.original_ids[e], masked.labels[e], masked.example_ids[e]};
    for (auto idx : masked.mask_positions[e]) p.token_ids[idx] = predictions[k++];
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<TokenId> predict_tokens(const Tensor& logits, double temperature, Rng* rng) {
  const std::size_t V = logits.shape().back();
  const std::size_t rows = logits.size() / V;
  if (V <= special::kCount) throw std::invalid_argument("predict_tokens: vocabulary too small");
  auto allowed = [](std::size_t j) {
    return j == static_cast<std::size_t>(special::kUnk) || j >= special::kCount;
  };
  std::vector<TokenId> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = logits.data().data() + r * V;
    std::size_t best = special::kUnk;
    for (std::size_t j = special::kCount; j < V; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (temperature > 0.0) {
      if (!rng) throw std::invalid_argument("predict_tokens: sampling needs an rng");
      std::vector<double> w(V, 0.0);
      for (std::size_t j = 0; j < V; ++j) {
        if (allowed(j)) w[j] = std::exp((row[j] - row[best]) / temperature);
      }
      std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
      best = dist(*rng);
    }
    out[r] = static_cast<TokenId>(best);
  }
  return out;
}

nlohmann::json to_json(const PredictionRecord& r) {
  return {{"epoch", r.epoch},
          {"example_id", r.example_id},
          {"position", r.position},
          {"original_token", r.original_token},
          {"predicted_token", r.predicted_token}};
}

PredictionRecord prediction_record_from_json(const nlohmann::json& j) {
  PredictionRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.example_id = j.at("example_id").get<std::size_t>();
  r.position = j.at("position").get<std::size_t>();
  r.original_token = j.at("original_token").get<std::string>();
  r.predicted_token = j.at("predicted_token").get<std::string>();
  return r;
}

PerturbationLogWriter::PerturbationLogWriter(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw std::runtime_error("cannot open perturbation log " + path.string());
}

void PerturbationLogWriter::write(const PredictionRecord& r) {
  out_ << to_json(r).dump() << '\n';
  ++written_;
}

std::vector<PredictionRecord> read_perturbation_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read perturbation log " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(prediction_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": invalid record: " + e.what());
    }
  }
  return out;
}

}  // namespace masktune

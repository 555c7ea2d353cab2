#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "masktune/masking.hpp"
#include "support.hpp"

using namespace masktune;

namespace {

TokenizedExample sentence(std::size_t n_tokens, std::size_t id, bool with_pair = false) {
  TokenizedExample ex;
  ex.token_ids.push_back(special::kCls);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    if (with_pair && i == n_tokens / 2) ex.token_ids.push_back(special::kSep);
    ex.token_ids.push_back(static_cast<TokenId>(special::kCount + i % 7));
  }
  ex.label = static_cast<std::int32_t>(id % 2);
  ex.example_id = id;
  return ex;
}

MaskPolicy policy(double rate = 0.05, std::size_t floor = 1) {
  MaskPolicy p;
  p.mask_rate = rate;
  p.min_masks_per_example = floor;
  p.rng_seed = 17;
  return p;
}

TEST(Masking, ValidatesPolicy) {
  EXPECT_THROW(policy(0.0).validate(), std::invalid_argument);
  EXPECT_THROW(policy(1.0).validate(), std::invalid_argument);
  MaskPolicy p = policy();
  p.temperature = -1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Masking, NeverMasksFramingTokens) {
  std::vector<TokenizedExample> batch;
  for (std::size_t i = 0; i < 64; ++i) batch.push_back(sentence(3 + i % 5, i, true));
  Rng rng(1);
  const auto m = select_and_mask(batch, policy(0.9), rng);
  for (std::size_t e = 0; e < m.size(); ++e) {
    for (auto idx : m.mask_positions[e]) {
      EXPECT_TRUE(is_maskable(m.original_ids[e][idx]));
      EXPECT_EQ(m.input_ids[e][idx], special::kMask);
    }
    EXPECT_EQ(m.input_ids[e][0], special::kCls);
  }
}

TEST(Masking, FloorAppliesPerExample) {
  std::vector<TokenizedExample> batch;
  for (std::size_t i = 0; i < 200; ++i) batch.push_back(sentence(4, i));
  Rng rng(2);
  const auto m = select_and_mask(batch, policy(0.01, 2), rng);
  for (const auto& p : m.mask_positions) {
    EXPECT_GE(p.size(), 2u);
    EXPECT_TRUE(std::is_sorted(p.begin(), p.end()));
    EXPECT_EQ(std::adjacent_find(p.begin(), p.end()), p.end());
  }
  EXPECT_EQ(m.skipped, 0u);
}

TEST(Masking, ExampleWithoutEligibleTokensIsSkipped) {
  TokenizedExample only_cls;
  only_cls.token_ids = {special::kCls};
  std::vector<TokenizedExample> batch = {only_cls, sentence(5, 1)};
  Rng rng(3);
  const auto m = select_and_mask(batch, policy(), rng);
  EXPECT_EQ(m.skipped, 1u);
  EXPECT_TRUE(m.mask_positions[0].empty());
  EXPECT_EQ(m.mask_positions[1].size() >= 1, true);
}

TEST(Masking, DeterministicPerEpochAndBatch) {
  std::vector<TokenizedExample> batch;
  for (std::size_t i = 0; i < 32; ++i) batch.push_back(sentence(20, i));
  const MaskPolicy p = policy(0.2);
  Rng a = mask_rng(p, 1, 3), b = mask_rng(p, 1, 3), c = mask_rng(p, 2, 3);
  const auto ma = select_and_mask(batch, p, a);
  const auto mb = select_and_mask(batch, p, b);
  const auto mc = select_and_mask(batch, p, c);
  EXPECT_EQ(ma.mask_positions, mb.mask_positions);
  EXPECT_NE(ma.mask_positions, mc.mask_positions);
}

TEST(Masking, FlatOrderMatchesTargets) {
  std::vector<TokenizedExample> batch = {sentence(10, 0), sentence(12, 1)};
  Rng rng(4);
  const auto m = select_and_mask(batch, policy(0.3), rng);
  const auto pos = m.flat_positions();
  const auto tgt = m.flat_targets();
  ASSERT_EQ(pos.size(), m.total_masks());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    EXPECT_EQ(tgt[i], batch[pos[i].example].token_ids[pos[i].index]);
  }
}

TEST(Masking, BuildPerturbedSubstitutesAndKeepsLabel) {
  std::vector<TokenizedExample> batch = {sentence(10, 0), sentence(12, 7)};
  Rng rng(5);
  const auto m = select_and_mask(batch, policy(0.3), rng);
  std::vector<TokenId> preds(m.total_masks(), 42);
  const auto p = build_perturbed(m, preds);
  ASSERT_EQ(p.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) {
    EXPECT_EQ(p[e].label, batch[e].label);
    EXPECT_EQ(p[e].example_id, batch[e].example_id);
    for (std::size_t i = 0; i < p[e].token_ids.size(); ++i) {
      const bool masked = std::binary_search(m.mask_positions[e].begin(), m.mask_positions[e].end(), i);
      EXPECT_EQ(p[e].token_ids[i], masked ? 42 : batch[e].token_ids[i]);
    }
  }
  preds.push_back(1);
  EXPECT_THROW(build_perturbed(m, preds), std::invalid_argument);
}

TEST(PredictTokens, ArgmaxSkipsFramingTokens) {
  // Row 0: [MASK] has the largest logit, then token 6.
  // Row 1: [UNK] is the largest allowed logit.
  Tensor logits({2, 8}, {0, 0, 9, 9, 10, 1, 5, 2,  //
                         0, 7, 9, 9, 9, 1, 2, 3});
  EXPECT_EQ(predict_tokens(logits, 0.0, nullptr), (std::vector<TokenId>{6, special::kUnk}));
}

TEST(PredictTokens, SamplingStaysInAllowedSet) {
  Tensor logits = testutil::random_tensor({200, 9}, 3, 2.0);
  Rng rng(4);
  for (TokenId t : predict_tokens(logits, 1.0, &rng)) {
    EXPECT_TRUE(t == special::kUnk || t >= static_cast<TokenId>(special::kCount));
  }
  EXPECT_THROW(predict_tokens(logits, 1.0, nullptr), std::invalid_argument);
}

TEST(PerturbationLog, JsonlRoundTripAndErrors) {
  const auto dir = std::filesystem::path(MASKTUNE_TEST_TMP) / "masking";
  std::filesystem::create_directories(dir);
  const std::vector<PredictionRecord> recs = {{1, 3, 2, "thinly", "thinly"},
                                              {3, 4, 1, "roles", "actors"}};
  {
    PerturbationLogWriter w(dir / "log.jsonl");
    for (const auto& r : recs) w.write(r);
    EXPECT_EQ(w.written(), 2u);
  }
  EXPECT_EQ(read_perturbation_log(dir / "log.jsonl"), recs);
  EXPECT_THROW(read_perturbation_log(dir / "missing.jsonl"), std::runtime_error);
  std::ofstream(dir / "bad.jsonl") << "{\"epoch\": 1}\n";
  EXPECT_THROW(read_perturbation_log(dir / "bad.jsonl"), std::runtime_error);
}

}  // namespace

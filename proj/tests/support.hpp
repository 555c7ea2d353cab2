#pragma once

#include <random>
#include <string>
#include <vector>

#include "masktune/data.hpp"
#include "masktune/model.hpp"
#include "masktune/tensor.hpp"
#include "masktune/trainer.hpp"

namespace masktune::testutil {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  for (double& v : t.data()) v = d(rng);
  return t;
}

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  return random_tensor({n}, seed, scale).values();
}

inline ModelConfig tiny_model(std::size_t vocab_size, double dropout = 0.0) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_len = 24;
  c.num_classes = 2;
  c.dropout_rate = dropout;
  return c;
}

/// Small spurious task for fast end-to-end tests.
inline SpuriousTaskSpec tiny_spec(std::size_t n_train = 96) {
  SpuriousTaskSpec s;
  s.n_signal_tokens = 6;
  s.filler_vocab_size = 40;
  s.n_train = n_train;
  s.n_dev = 32;
  s.n_test_indist = 32;
  s.n_test_ood = 32;
  s.min_length = 6;
  s.max_length = 10;
  s.seed = 11;
  return s;
}

inline TrainConfig tiny_train(Mode mode, std::size_t seeds = 1) {
  TrainConfig c;
  c.mode = mode;
  c.seeds = seeds;
  c.epochs = 1;
  c.batch_size = 16;
  c.eval_batch_size = 32;
  c.model = tiny_model(0, 0.1);
  c.mask.mask_rate = 0.15;
  return c;
}

}  // namespace masktune::testutil

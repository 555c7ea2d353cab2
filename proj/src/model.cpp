#include "masktune/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace masktune {

namespace {
constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-12;

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw std::invalid_argument("model." + field + ": " + why);
}
}  // namespace

void ModelConfig::validate() const {
  require(vocab_size > special::kCount, "vocab_size", "must exceed the 5 reserved tokens");
  require(d_model > 0, "d_model", "must be positive");
  require(n_layers > 0, "n_layers", "must be positive");
  require(n_heads > 0, "n_heads", "must be positive");
  require(d_model % std::max<std::size_t>(n_heads, 1) == 0, "n_heads", "must divide d_model");
  require(d_ff > 0, "d_ff", "must be positive");
  require(max_len >= 2, "max_len", "must be at least 2");
  require(num_classes >= 2, "num_classes", "must be at least 2");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout_rate", "must lie in [0, 1)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model},   {"n_layers", n_layers},
          {"n_heads", n_heads},       {"d_ff", d_ff},         {"max_len", max_len},
          {"num_classes", num_classes}, {"dropout_rate", dropout_rate}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.validate();
  return c;
}

std::vector<std::pair<std::string, Shape>> ModelParameters::expected_shapes(const ModelConfig& c) {
  std::vector<std::pair<std::string, Shape>> out = {
      {"token_embedding", {c.vocab_size, c.d_model}},
      {"position_embedding", {c.max_len, c.d_model}},
  };
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    out.insert(out.end(), {
                              {p + "ln1_gain", {c.d_model}},
                              {p + "ln1_bias", {c.d_model}},
                              {p + "wq", {c.d_model, c.d_model}},
                              {p + "bq", {c.d_model}},
                              {p + "wk", {c.d_model, c.d_model}},
                              {p + "bk", {c.d_model}},
                              {p + "wv", {c.d_model, c.d_model}},
                              {p + "bv", {c.d_model}},
                              {p + "wo", {c.d_model, c.d_model}},
                              {p + "bo", {c.d_model}},
                              {p + "ln2_gain", {c.d_model}},
                              {p + "ln2_bias", {c.d_model}},
                              {p + "w1", {c.d_model, c.d_ff}},
                              {p + "b1", {c.d_ff}},
                              {p + "w2", {c.d_ff, c.d_model}},
                              {p + "b2", {c.d_model}},
                          });
  }
  out.insert(out.end(), {
                            {"final_gain", {c.d_model}},
                            {"final_bias", {c.d_model}},
                            {"mlm_bias", {c.vocab_size}},
                            {"cls_weight", {c.d_model, c.num_classes}},
                            {"cls_bias", {c.num_classes}},
                        });
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ModelParameters::named() {
  std::vector<std::pair<std::string, Tensor*>> out = {
      {"token_embedding", &token_embedding},
      {"position_embedding", &position_embedding},
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerParams& L = layers[l];
    out.insert(out.end(), {
                              {p + "ln1_gain", &L.ln1_gain},
                              {p + "ln1_bias", &L.ln1_bias},
                              {p + "wq", &L.wq},
                              {p + "bq", &L.bq},
                              {p + "wk", &L.wk},
                              {p + "bk", &L.bk},
                              {p + "wv", &L.wv},
                              {p + "bv", &L.bv},
                              {p + "wo", &L.wo},
                              {p + "bo", &L.bo},
                              {p + "ln2_gain", &L.ln2_gain},
                              {p + "ln2_bias", &L.ln2_bias},
                              {p + "w1", &L.w1},
                              {p + "b1", &L.b1},
                              {p + "w2", &L.w2},
                              {p + "b2", &L.b2},
                          });
  }
  out.insert(out.end(), {
                            {"final_gain", &final_gain},
                            {"final_bias", &final_bias},
                            {"mlm_bias", &mlm_bias},
                            {"cls_weight", &cls_weight},
                            {"cls_bias", &cls_bias},
                        });
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParameters::named() const {
  auto mut = const_cast<ModelParameters*>(this)->named();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [name, t] : mut) out.emplace_back(name, t);
  return out;
}

void ModelParameters::zero_grad() {
  for (auto& [name, t] : named()) t->zero_grad();
}

bool ModelParameters::all_finite() const {
  for (const auto& [name, t] : named()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

std::size_t ModelParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->size();
  return n;
}

ModelParameters init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParameters p;
  p.config = cfg;
  p.layers.resize(cfg.n_layers);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  const auto shapes = ModelParameters::expected_shapes(cfg);
  auto slots = p.named();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const std::string& name = slots[i].first;
    const Shape& shape = shapes[i].second;
    Tensor t(shape);
    const bool is_gain = name.ends_with("_gain");
    const bool is_matrix = shape.size() == 2;
    if (is_gain) {
      std::fill(t.data().begin(), t.data().end(), 1.0);
    } else if (is_matrix) {
      for (double& v : t.data()) v = normal(rng);
    }
    t.set_requires_grad(true);
    *slots[i].second = std::move(t);
  }
  return p;
}

EncoderBatch make_batch(std::span<const std::vector<TokenId>> sequences) {
  if (sequences.empty()) throw std::invalid_argument("make_batch: no sequences");
  EncoderBatch b;
  b.batch = sequences.size();
  for (const auto& s : sequences) {
    if (s.empty()) throw std::invalid_argument("make_batch: empty sequence");
    b.seq = std::max(b.seq, s.size());
  }
  b.ids.assign(b.batch * b.seq, special::kPad);
  b.valid.assign(b.batch * b.seq, 0);
  for (std::size_t i = 0; i < b.batch; ++i) {
    std::copy(sequences[i].begin(), sequences[i].end(), b.ids.begin() + i * b.seq);
    std::fill_n(b.valid.begin() + i * b.seq, sequences[i].size(), 1);
    b.lengths.push_back(sequences[i].size());
  }
  return b;
}

Var encode(Graph& g, ModelParameters& params, const EncoderBatch& batch, Rng* dropout_rng) {
  const ModelConfig& cfg = params.config;
  if (batch.seq > cfg.max_len) {
    throw std::invalid_argument("sequence length " + std::to_string(batch.seq) +
                                " exceeds max_len " + std::to_string(cfg.max_len));
  }
  const std::size_t B = batch.batch, S = batch.seq, D = cfg.d_model;
  std::vector<TokenId> pos_ids(B * S);
  for (std::size_t i = 0; i < B * S; ++i) pos_ids[i] = static_cast<TokenId>(i % S);

  Var tok = g.embedding(g.param(params.token_embedding), batch.ids);
  Var pos = g.embedding(g.param(params.position_embedding), pos_ids);
  Var x = g.reshape(g.add(tok, pos), {B, S, D});

  const double rate = dropout_rng ? cfg.dropout_rate : 0.0;
  auto drop = [&](Var v) { return dropout_rng ? g.dropout(v, rate, *dropout_rng) : v; };

  for (auto& L : params.layers) {
    Var h = g.layer_norm(x, g.param(L.ln1_gain), g.param(L.ln1_bias), kLayerNormEps);
    Var q = g.add_bias(g.linear(h, g.param(L.wq)), g.param(L.bq));
    Var k = g.add_bias(g.linear(h, g.param(L.wk)), g.param(L.bk));
    Var v = g.add_bias(g.linear(h, g.param(L.wv)), g.param(L.bv));
    Var ctx = g.attention(q, k, v, batch.valid, cfg.n_heads);
    Var attn_out = g.add_bias(g.linear(ctx, g.param(L.wo)), g.param(L.bo));
    x = g.add(x, drop(attn_out));

    Var h2 = g.layer_norm(x, g.param(L.ln2_gain), g.param(L.ln2_bias), kLayerNormEps);
    Var f = g.gelu(g.add_bias(g.linear(h2, g.param(L.w1)), g.param(L.b1)));
    Var ff_out = g.add_bias(g.linear(f, g.param(L.w2)), g.param(L.b2));
    x = g.add(x, drop(ff_out));
  }
  return g.layer_norm(x, g.param(params.final_gain), g.param(params.final_bias), kLayerNormEps);
}

Var mlm_logits(Graph& g, ModelParameters& params, Var hidden,
               std::span<const TokenPosition> positions) {
  const Tensor& H = g.value(hidden);
  if (H.rank() != 3) throw ShapeError("mlm_logits expects hidden [batch, seq, d]");
  const std::size_t B = H.dim(0), S = H.dim(1);
  std::vector<std::size_t> rows;
  rows.reserve(positions.size());
  for (const auto& p : positions) {
    if (p.example >= B || p.index >= S) {
      throw std::out_of_range("mask position (" + std::to_string(p.example) + "," +
                              std::to_string(p.index) + ") outside hidden " + shape_str(H.shape()));
    }
    rows.push_back(p.example * S + p.index);
  }
  Var picked = g.gather_rows(hidden, rows);
  Var logits = g.matmul_transposed(picked, g.param(params.token_embedding));
  return g.add_bias(logits, g.param(params.mlm_bias));
}

Var cls_logits(Graph& g, ModelParameters& params, Var hidden) {
  const Tensor& H = g.value(hidden);
  if (H.rank() != 3) throw ShapeError("cls_logits expects hidden [batch, seq, d]");
  const std::size_t B = H.dim(0), S = H.dim(1);
  std::vector<std::size_t> rows(B);
  for (std::size_t b = 0; b < B; ++b) rows[b] = b * S;
  Var pooled = g.gather_rows(hidden, rows);
  return g.add_bias(g.linear(pooled, g.param(params.cls_weight)), g.param(params.cls_bias));
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.shape().back();
  const std::size_t rows = logits.size() / n;
  std::vector<std::int32_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto begin = logits.data().begin() + r * n;
    out[r] = static_cast<std::int32_t>(std::max_element(begin, begin + n) - begin);
  }
  return out;
}

}  // namespace masktune

#include "masktune/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace masktune {

namespace {
// Mask streams for perturbation generation are kept apart from training epochs.
constexpr std::uint64_t kGenerationEpochBase = 1'000'000;

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw std::invalid_argument("train." + field + ": " + why);
}
}  // namespace

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::fine_tune: return "fine_tune";
    case Mode::mask_tuning: return "mask_tuning";
    case Mode::augmentation: return "augmentation";
    case Mode::no_integrated_loss: return "no_integrated_loss";
    case Mode::sequential: return "sequential";
  }
  return "unknown";
}

Mode parse_mode(std::string_view s) {
  for (Mode m : kAllModes) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("train.mode: unknown mode '" + std::string(s) +
                              "' (expected fine_tune, mask_tuning, augmentation, "
                              "no_integrated_loss or sequential)");
}

std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

std::vector<double> pretrained_learning_rate_grid() { return {2e-5, 3e-5, 4e-5, 5e-5}; }

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs", "must be >= 1");
  require(seeds >= 1, "seeds", "must be >= 1");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha", "must lie in [0, 1]");
  for (double a : alpha_grid) require(a >= 0.0 && a <= 1.0, "alpha_grid", "values must lie in [0, 1]");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate", "must be positive");
  for (double lr : learning_rate_grid) require(lr > 0.0, "learning_rate_grid", "values must be positive");
  require(eval_batch_size >= 1, "eval_batch_size", "must be >= 1");
  require(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1", "must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "beta2", "must lie in [0, 1)");
  require(adam_eps > 0.0, "adam_eps", "must be positive");
  require(min_count >= 1, "min_count", "must be >= 1");
  mask.validate();
  ModelConfig probe = model;
  probe.vocab_size = std::max<std::size_t>(probe.vocab_size, special::kCount + 1);
  probe.validate();
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json model_json = model.to_json();
  model_json.erase("vocab_size");
  return {{"mode", to_string(mode)},
          {"alpha", alpha},
          {"alpha_grid", alpha_grid},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"eval_batch_size", eval_batch_size},
          {"learning_rate", learning_rate},
          {"learning_rate_grid", learning_rate_grid},
          {"seeds", seeds},
          {"seed", seed},
          {"weight_decay", weight_decay},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"linear_decay", linear_decay},
          {"min_count", min_count},
          {"masking",
           {{"mask_rate", mask.mask_rate},
            {"min_masks_per_example", mask.min_masks_per_example},
            {"temperature", mask.temperature}}},
          {"model", model_json}};
}

const std::vector<TokenizedExample>& PreparedData::split(std::string_view name) const {
  if (name == "train") return train;
  for (const auto& [n, s] : eval) {
    if (n == name) return s;
  }
  throw std::out_of_range("no split named '" + std::string(name) + "'");
}

PreparedData prepare_data(const Dataset& data, std::size_t min_count, std::size_t max_len) {
  std::vector<std::string> corpus;
  bool pair = false;
  for (const auto& e : data.train.examples) {
    corpus.push_back(e.text);
    if (e.text2) {
      corpus.push_back(*e.text2);
      pair = true;
    }
  }
  PreparedData p{Vocab::build(corpus, min_count), {}, {}, pair};
  p.train = tokenize_split(p.vocab, data.train, max_len);
  for (const DatasetSplit* s : data.eval_splits()) {
    if (s->examples.empty()) continue;
    p.eval.emplace_back(s->name, tokenize_split(p.vocab, *s, max_len));
  }
  return p;
}

SplitSummary summarize(std::span<const double> values) {
  SplitSummary s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg, const PreparedData& data, std::uint64_t run_seed,
                 RunObserver* observer)
    : cfg_(&cfg), data_(&data), run_seed_(run_seed), observer_(observer) {
  ModelConfig mc = cfg.model;
  mc.vocab_size = data.vocab.size();
  params_ = init_params(mc, derive_seed(run_seed, "init"));
  policy_ = cfg.mask;
  policy_.rng_seed = derive_seed(run_seed, "mask");
  shuffle_seed_ = derive_seed(run_seed, "shuffle");
  dropout_seed_ = derive_seed(run_seed, "dropout");
  sample_seed_ = derive_seed(run_seed, "sample");
  batch_size_ = cfg.batch_size ? cfg.batch_size : (data.pair_inputs ? 32 : 16);
  reset_optimizer(0);
}

void Trainer::reset_optimizer(std::size_t total_steps) {
  AdamConfig ac;
  ac.learning_rate = cfg_->learning_rate;
  ac.beta1 = cfg_->beta1;
  ac.beta2 = cfg_->beta2;
  ac.eps = cfg_->adam_eps;
  ac.weight_decay = cfg_->weight_decay;
  ac.total_steps = cfg_->linear_decay ? total_steps : 0;
  optimizer_.emplace(params_, ac);
}

Rng Trainer::pass_rng(std::size_t pass) const { return Rng(derive_seed(dropout_seed_, step_, pass)); }

std::vector<std::size_t> Trainer::epoch_order(std::size_t n, std::size_t epoch) const {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(shuffle_seed_, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void Trainer::optimize(Graph& g, Var loss, const LossBreakdown& breakdown) {
  if (!breakdown.finite() || !std::isfinite(g.scalar(loss))) {
    std::ostringstream os;
    os << "non-finite loss at step " << step_ << ": l_mlm=" << breakdown.l_mlm
       << " l_ft=" << breakdown.l_ft << " l_masktuning=" << breakdown.l_masktuning
       << " alpha=" << breakdown.alpha;
    throw TrainingError(os.str());
  }
  g.backward(loss);
  for (const auto& [name, t] : params_.named()) {
    for (double v : t->grad()) {
      if (!std::isfinite(v)) {
        throw TrainingError("non-finite gradient in " + name + " at step " + std::to_string(step_));
      }
    }
  }
  optimizer_->step();
  if (!params_.all_finite()) {
    throw TrainingError("non-finite parameter after step " + std::to_string(step_));
  }
  ++step_;
}

LossBreakdown Trainer::train_step_masktuning(std::span<const TokenizedExample> batch,
                                             std::size_t epoch, std::size_t batch_index,
                                             double alpha, StepObjective objective) {
  params_.zero_grad();
  Rng mrng = mask_rng(policy_, epoch, batch_index);
  const MaskedBatch masked = select_and_mask(batch, policy_, mrng);
  skipped_ += masked.skipped;

  Graph g;
  Rng drop_mlm = pass_rng(0);
  Var hidden = encode(g, params_, make_batch(masked.input_ids), &drop_mlm);
  ++passes_.train;

  const auto positions = masked.flat_positions();
  const auto targets = masked.flat_targets();
  std::optional<Var> logits;
  if (!positions.empty()) logits = mlm_logits(g, params_, hidden, positions);
  Var l_mlm = mlm_loss(g, logits, targets);

  std::vector<TokenId> predictions;
  if (logits) {
    Rng srng(derive_seed(sample_seed_, step_));
    predictions = predict_tokens(g.value(*logits), policy_.temperature, &srng);
  }
  if (observer_) {
    for (std::size_t i = 0; i < positions.size(); ++i) {
      observer_->on_prediction(
          run_seed_, {epoch + 1, masked.example_ids[positions[i].example], positions[i].index,
                      data_->vocab.token(targets[i]), data_->vocab.token(predictions[i])});
    }
  }

  if (objective == StepObjective::mlm_only) {
    LossBreakdown b;
    b.l_mlm = g.scalar(l_mlm);
    b.alpha = 1.0;
    b.l_masktuning = combine_losses(b.l_mlm, b.l_ft, b.alpha);
    optimize(g, l_mlm, b);
    return b;
  }

  const auto perturbed = build_perturbed(masked, predictions);
  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(perturbed.size());
  for (const auto& p : perturbed) seqs.push_back(p.token_ids);
  Rng drop_cls = pass_rng(1);
  Var hidden_p = encode(g, params_, make_batch(seqs), &drop_cls);
  ++passes_.train;
  Var l_ft = ft_loss(g, cls_logits(g, params_, hidden_p), masked.labels);

  const IntegratedLoss il = integrated_loss(g, l_mlm, l_ft, alpha);
  optimize(g, objective == StepObjective::integrated ? il.total : l_ft, il.breakdown);
  return il.breakdown;
}

LossBreakdown Trainer::train_step_finetune(std::span<const TokenizedExample> batch) {
  params_.zero_grad();
  std::vector<std::vector<TokenId>> seqs;
  std::vector<std::int32_t> labels;
  for (const auto& ex : batch) {
    seqs.push_back(ex.token_ids);
    labels.push_back(ex.label);
  }
  Graph g;
  Rng drop = pass_rng(1);
  Var hidden = encode(g, params_, make_batch(seqs), &drop);
  ++passes_.train;
  Var l_ft = ft_loss(g, cls_logits(g, params_, hidden), labels);
  LossBreakdown b;
  b.l_ft = g.scalar(l_ft);
  b.alpha = 0.0;
  b.l_masktuning = combine_losses(b.l_mlm, b.l_ft, b.alpha);
  optimize(g, l_ft, b);
  return b;
}

std::vector<TokenizedExample> Trainer::generate_perturbed(std::span<const TokenizedExample> examples,
                                                          std::size_t epoch_tag) {
  std::vector<TokenizedExample> out;
  out.reserve(examples.size());
  for (std::size_t start = 0, bi = 0; start < examples.size(); start += batch_size_, ++bi) {
    auto chunk = examples.subspan(start, std::min(batch_size_, examples.size() - start));
    Rng mrng = mask_rng(policy_, kGenerationEpochBase + epoch_tag, bi);
    const MaskedBatch masked = select_and_mask(chunk, policy_, mrng);
    const auto positions = masked.flat_positions();
    std::vector<TokenId> predictions;
    if (!positions.empty()) {
      Graph g(false);
      Var hidden = encode(g, params_, make_batch(masked.input_ids), nullptr);
      ++passes_.inference;
      Rng srng(derive_seed(sample_seed_, kGenerationEpochBase + epoch_tag, bi));
      predictions = predict_tokens(g.value(mlm_logits(g, params_, hidden, positions)),
                                   policy_.temperature, &srng);
      if (observer_) {
        const auto targets = masked.flat_targets();
        for (std::size_t i = 0; i < positions.size(); ++i) {
          observer_->on_prediction(
              run_seed_, {epoch_tag, masked.example_ids[positions[i].example], positions[i].index,
                          data_->vocab.token(targets[i]), data_->vocab.token(predictions[i])});
        }
      }
    }
    for (auto& p : build_perturbed(masked, predictions)) {
      out.push_back({std::move(p.token_ids), p.label, p.example_id});
    }
  }
  return out;
}

std::map<std::string, double> Trainer::evaluate() {
  std::map<std::string, double> acc;
  for (const auto& [name, split] : data_->eval) {
    acc[name] = accuracy(params_, split, cfg_->eval_batch_size);
  }
  return acc;
}

// ---------------------------------------------------------------------------

namespace {

using StepFn = std::function<LossBreakdown(std::span<const TokenizedExample>, std::size_t epoch,
                                           std::size_t batch_index)>;

void train_epochs(Trainer& t, const std::vector<TokenizedExample>& set, std::size_t first_epoch,
                  std::size_t n_epochs, const std::string& phase, const StepFn& step,
                  SeedResult& result, RunObserver* observer) {
  const std::size_t B = t.batch_size();
  std::vector<TokenizedExample> batch;
  for (std::size_t e = 0; e < n_epochs; ++e) {
    const std::size_t epoch = first_epoch + e;
    const auto order = t.epoch_order(set.size(), epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.phase = phase;
    double sum_mlm = 0.0, sum_ft = 0.0, sum_mt = 0.0, alpha = 0.0;
    for (std::size_t start = 0, bi = 0; start < order.size(); start += B, ++bi) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + B); ++i) {
        batch.push_back(set[order[i]]);
      }
      const LossBreakdown b = step(batch, epoch, bi);
      sum_mlm += b.l_mlm;
      sum_ft += b.l_ft;
      sum_mt += b.l_masktuning;
      alpha = b.alpha;
      rec.scenarios.add(b);
      ++rec.batches;
      if (observer) observer->on_step(result.seed, rec.epoch, b);
    }
    const double n = static_cast<double>(std::max<std::size_t>(rec.batches, 1));
    rec.mean = {sum_mlm / n, sum_ft / n, sum_mt / n, alpha};
    rec.accuracy = t.evaluate();
    result.epochs.push_back(rec);
    if (observer) observer->on_epoch(result.seed, rec);
  }
}

std::size_t batches_per_epoch(std::size_t n, std::size_t b) { return (n + b - 1) / b; }

SeedResult run_seed(const TrainConfig& cfg, const PreparedData& data, std::uint64_t seed,
                    RunObserver* observer) {
  Trainer t(cfg, data, seed, observer);
  SeedResult r;
  r.seed = seed;
  const std::size_t E = cfg.epochs;
  const std::size_t nb = batches_per_epoch(data.train.size(), t.batch_size());
  auto finetune = [&t](std::span<const TokenizedExample> b, std::size_t, std::size_t) {
    return t.train_step_finetune(b);
  };
  auto pipeline = [&t](double alpha, StepObjective obj) {
    return [&t, alpha, obj](std::span<const TokenizedExample> b, std::size_t e, std::size_t bi) {
      return t.train_step_masktuning(b, e, bi, alpha, obj);
    };
  };

  switch (cfg.mode) {
    case Mode::fine_tune:
      t.reset_optimizer(E * nb);
      r.train_set_size = data.train.size();
      train_epochs(t, data.train, 0, E, "train", finetune, r, observer);
      break;
    case Mode::mask_tuning:
      t.reset_optimizer(E * nb);
      r.train_set_size = data.train.size();
      train_epochs(t, data.train, 0, E, "train", pipeline(cfg.alpha, StepObjective::integrated), r,
                   observer);
      break;
    case Mode::no_integrated_loss:
      t.reset_optimizer(E * nb);
      r.train_set_size = data.train.size();
      train_epochs(t, data.train, 0, E, "train", pipeline(0.0, StepObjective::fine_tune_only), r,
                   observer);
      break;
    case Mode::augmentation: {
      std::vector<TokenizedExample> set = data.train;
      auto perturbed = t.generate_perturbed(data.train, 0);
      set.insert(set.end(), perturbed.begin(), perturbed.end());
      r.train_set_size = set.size();
      t.reset_optimizer(E * batches_per_epoch(set.size(), t.batch_size()));
      train_epochs(t, set, 0, E, "train", finetune, r, observer);
      break;
    }
    case Mode::sequential: {
      t.reset_optimizer(E * nb);
      train_epochs(t, data.train, 0, E, "mlm", pipeline(1.0, StepObjective::mlm_only), r, observer);
      auto perturbed = t.generate_perturbed(data.train, E + 1);
      r.train_set_size = perturbed.size();
      t.reset_optimizer(E * batches_per_epoch(perturbed.size(), t.batch_size()));
      train_epochs(t, perturbed, E, E, "train", finetune, r, observer);
      break;
    }
  }
  r.final_accuracy = r.epochs.back().accuracy;
  r.passes = t.passes();
  r.skipped_mask_examples = t.skipped_mask_examples();
  if (observer) observer->on_seed_end(seed, t.params());
  return r;
}

}  // namespace

RunMetrics run_mode(const TrainConfig& cfg, const PreparedData& data, RunObserver* observer) {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("run_mode: empty training split");
  RunMetrics m;
  m.mode = cfg.mode;
  m.alpha = cfg.mode == Mode::mask_tuning ? cfg.alpha : (cfg.mode == Mode::sequential ? 1.0 : 0.0);
  for (std::size_t i = 0; i < cfg.seeds; ++i) {
    m.seeds.push_back(run_seed(cfg, data, cfg.seed + i, observer));
  }
  std::map<std::string, std::vector<double>> per_split;
  for (const auto& s : m.seeds) {
    for (const auto& [name, acc] : s.final_accuracy) per_split[name].push_back(acc);
  }
  for (const auto& [name, values] : per_split) m.summary[name] = summarize(values);
  return m;
}

double select_best(std::span<const GridRow> rows) {
  if (rows.empty()) throw std::invalid_argument("grid search over an empty grid");
  const GridRow* best = &rows[0];
  for (const auto& r : rows) {
    if (r.mean_dev > best->mean_dev || (r.mean_dev == best->mean_dev && r.value > best->value)) {
      best = &r;
    }
  }
  return best->value;
}

namespace {

GridRow grid_row(double value, const RunMetrics& m) {
  GridRow row;
  row.value = value;
  double ood_sum = 0.0;
  std::size_t ood_n = 0;
  for (const auto& [name, s] : m.summary) {
    if (name == "dev") {
      row.mean_dev = s.mean;
    } else if (name == "test_indist") {
      row.mean_test_indist = s.mean;
    } else {
      ood_sum += s.mean;
      ++ood_n;
    }
  }
  row.mean_ood = ood_n ? ood_sum / static_cast<double>(ood_n) : 0.0;
  return row;
}

}  // namespace

GridResult alpha_grid_search(const TrainConfig& cfg, const PreparedData& data,
                             std::span<const double> grid, RunObserver* observer) {
  if (grid.empty()) throw std::invalid_argument("train.alpha_grid: empty grid");
  GridResult res{"alpha", {}, 0.0};
  for (double a : grid) {
    TrainConfig c = cfg;
    c.alpha = a;
    res.rows.push_back(grid_row(a, run_mode(c, data, observer)));
  }
  res.selected = select_best(res.rows);
  return res;
}

GridResult learning_rate_search(const TrainConfig& cfg, const PreparedData& data,
                                std::span<const double> grid, RunObserver* observer) {
  if (grid.empty()) throw std::invalid_argument("train.learning_rate_grid: empty grid");
  GridResult res{"learning_rate", {}, 0.0};
  for (double lr : grid) {
    TrainConfig c = cfg;
    c.learning_rate = lr;
    res.rows.push_back(grid_row(lr, run_mode(c, data, observer)));
  }
  res.selected = select_best(res.rows);
  return res;
}

}  // namespace masktune

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "masktune/data.hpp"
#include "masktune/masking.hpp"
#include "masktune/model.hpp"
#include "masktune/objectives.hpp"
#include "masktune/optimizer.hpp"

namespace masktune {

/// Training regimes. Every mode other than mask_tuning is a baseline for it.
enum class Mode { fine_tune, mask_tuning, augmentation, no_integrated_loss, sequential };

std::string_view to_string(Mode m);
/// Throws std::invalid_argument listing the valid names.
Mode parse_mode(std::string_view s);
inline constexpr Mode kAllModes[] = {Mode::fine_tune, Mode::mask_tuning, Mode::augmentation,
                                     Mode::no_integrated_loss, Mode::sequential};

std::vector<double> default_alpha_grid();
/// Learning rates used with pretrained base-size encoders; kept as a preset.
std::vector<double> pretrained_learning_rate_grid();

struct TrainConfig {
  Mode mode = Mode::mask_tuning;
  double alpha = 0.2;  // dev-selected on the default task
  std::vector<double> alpha_grid = default_alpha_grid();
  std::size_t epochs = 3;
  /// 0 selects 16 for single-sentence data and 32 for sentence pairs.
  std::size_t batch_size = 0;
  std::size_t eval_batch_size = 64;
  double learning_rate = 3e-4;
  std::vector<double> learning_rate_grid = pretrained_learning_rate_grid();
  std::size_t seeds = 5;
  std::uint64_t seed = 1;  // run seeds are seed, seed+1, ...
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool linear_decay = true;
  MaskPolicy mask;  // rng_seed is derived per run seed
  ModelConfig model;  // vocab_size is filled from the data
  std::size_t min_count = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Vocabulary plus tokenized splits, shared read-only by every run.
struct PreparedData {
  Vocab vocab;
  std::vector<TokenizedExample> train;
  std::vector<std::pair<std::string, std::vector<TokenizedExample>>> eval;  // dev first
  bool pair_inputs = false;

  const std::vector<TokenizedExample>& split(std::string_view name) const;
};

/// Builds the vocabulary from the train split and tokenizes every split.
PreparedData prepare_data(const Dataset& data, std::size_t min_count, std::size_t max_len);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Encoder forward passes. `train` passes record a gradient graph;
/// `inference` passes only generate perturbations.
struct PassCounts {
  std::size_t train = 0;
  std::size_t inference = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::string phase;      // "mlm" for sequential phase 1, else "train"
  LossBreakdown mean;
  std::size_t batches = 0;
  ScenarioCounts scenarios;
  std::map<std::string, double> accuracy;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::map<std::string, double> final_accuracy;
  PassCounts passes;
  std::size_t train_set_size = 0;
  std::size_t skipped_mask_examples = 0;
};

struct SplitSummary {
  double mean = 0.0;
  std::optional<double> stddev;  // sample std over >= 2 seeds
};

struct RunMetrics {
  Mode mode = Mode::mask_tuning;
  double alpha = 0.0;
  std::vector<SeedResult> seeds;
  std::map<std::string, SplitSummary> summary;
};

/// Sample mean and standard deviation (n - 1); stddev absent for n < 2.
SplitSummary summarize(std::span<const double> values);

/// Hooks for streaming artifacts out of a run.
class RunObserver {
 public:
  virtual ~RunObserver() = default;
  virtual void on_step(std::uint64_t /*seed*/, std::size_t /*epoch*/,
                       const LossBreakdown& /*loss*/) {}
  virtual void on_epoch(std::uint64_t /*seed*/, const EpochRecord& /*epoch*/) {}
  virtual void on_prediction(std::uint64_t /*seed*/, const PredictionRecord& /*record*/) {}
  virtual void on_seed_end(std::uint64_t /*seed*/, const ModelParameters& /*params*/) {}
};

/// Which loss a pipeline step optimizes.
enum class StepObjective { integrated, fine_tune_only, mlm_only };

/// Single-run training state: parameters, optimizer and the per-purpose RNG
/// seeds derived from one run seed. Strictly sequential.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const PreparedData& data, std::uint64_t run_seed,
          RunObserver* observer = nullptr);

  ModelParameters& params() { return params_; }
  const PassCounts& passes() const { return passes_; }
  std::size_t step_index() const { return step_; }
  std::size_t skipped_mask_examples() const { return skipped_; }

  /// Sets up the optimizer with a linear decay horizon of `total_steps`.
  void reset_optimizer(std::size_t total_steps);

  /// Mask -> MLM loss -> perturb -> classify against the original labels ->
  /// aggregate -> one optimizer step. With mlm_only the classification pass
  /// is skipped entirely.
  LossBreakdown train_step_masktuning(std::span<const TokenizedExample> batch, std::size_t epoch,
                                      std::size_t batch_index, double alpha,
                                      StepObjective objective = StepObjective::integrated);
  /// Classification loss on unmodified examples, one optimizer step.
  LossBreakdown train_step_finetune(std::span<const TokenizedExample> batch);

  /// One MLM inference pass per batch; returns perturbed copies of `examples`.
  std::vector<TokenizedExample> generate_perturbed(std::span<const TokenizedExample> examples,
                                                   std::size_t epoch_tag);

  /// Epoch order: a permutation of [0, n) drawn from the run seed.
  std::vector<std::size_t> epoch_order(std::size_t n, std::size_t epoch) const;

  std::map<std::string, double> evaluate();

  std::size_t batch_size() const { return batch_size_; }

 private:
  void optimize(Graph& g, Var loss, const LossBreakdown& breakdown);
  Rng pass_rng(std::size_t pass) const;

  const TrainConfig* cfg_;
  const PreparedData* data_;
  std::uint64_t run_seed_;
  RunObserver* observer_;
  ModelParameters params_;
  std::optional<AdamW> optimizer_;
  MaskPolicy policy_;
  std::uint64_t shuffle_seed_;
  std::uint64_t dropout_seed_;
  std::uint64_t sample_seed_;
  std::size_t batch_size_;
  std::size_t step_ = 0;
  std::size_t skipped_ = 0;
  PassCounts passes_;
};

/// Trains one mode over every seed and evaluates on dev, test_indist and
/// every OOD split after each epoch. Throws std::invalid_argument on an
/// invalid config before any computation.
RunMetrics run_mode(const TrainConfig& cfg, const PreparedData& data,
                    RunObserver* observer = nullptr);

struct GridRow {
  double value = 0.0;
  double mean_dev = 0.0;
  double mean_test_indist = 0.0;
  double mean_ood = 0.0;  // mean over seeds and OOD splits
};

struct GridResult {
  std::string key;
  std::vector<GridRow> rows;
  double selected = 0.0;
};

/// Highest mean_dev wins; exact ties go to the larger value.
double select_best(std::span<const GridRow> rows);

/// Runs the configured mode once per alpha in the grid.
GridResult alpha_grid_search(const TrainConfig& cfg, const PreparedData& data,
                             std::span<const double> grid, RunObserver* observer = nullptr);
/// Same selection over learning rates.
GridResult learning_rate_search(const TrainConfig& cfg, const PreparedData& data,
                                std::span<const double> grid, RunObserver* observer = nullptr);

}  // namespace masktune

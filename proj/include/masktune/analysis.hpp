#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "masktune/masking.hpp"

namespace masktune {

enum class Category { identical, different_known, unk };
inline constexpr Category kAllCategories[] = {Category::identical, Category::different_known,
                                              Category::unk};

std::string_view to_string(Category c);

/// identical iff predicted == original, unk iff predicted is "[UNK]",
/// different_known otherwise. Identity wins when both tokens are "[UNK]".
Category categorize(const PredictionRecord& r);

struct CategoryCounts {
  std::size_t identical = 0;
  std::size_t different_known = 0;
  std::size_t unk = 0;

  void add(Category c);
  std::size_t count(Category c) const;
  std::size_t total() const { return identical + different_known + unk; }
  /// 0 for every category when empty.
  double fraction(Category c) const;
};

struct DiversityReport {
  std::size_t population = 0;            // distinct example ids in the log
  std::vector<std::size_t> sampled_ids;  // ascending
  std::map<std::size_t, CategoryCounts> per_epoch;
  CategoryCounts pooled;
  std::vector<PredictionRecord> records;  // records of sampled examples, log order

  nlohmann::json to_json() const;
};

/// Samples `sample_size` distinct example ids uniformly without replacement
/// (all of them when sample_size is 0 or >= the population) and tallies
/// their records. Throws std::invalid_argument on an empty log.
DiversityReport diversity_report(std::span<const PredictionRecord> log, std::size_t sample_size,
                                 std::uint64_t seed);
/// Reads a JSONL log first; unreadable or malformed logs throw std::runtime_error.
DiversityReport diversity_report(const std::filesystem::path& log, std::size_t sample_size,
                                 std::uint64_t seed);

struct BootstrapInterval {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t resamples = 0;
};

/// Percentile interval for different_known(a) - different_known(b), each
/// side resampled over its records with replacement.
BootstrapInterval bootstrap_different_known_diff(const DiversityReport& a,
                                                 const DiversityReport& b, double level = 0.95,
                                                 std::size_t resamples = 1000,
                                                 std::uint64_t seed = 0);

/// Published category percentages for the two regimes, printed as annotations.
struct ReferencePercentages {
  std::string label;
  double identical;
  double plausible;
  double implausible;
  double unk;
};
const std::vector<ReferencePercentages>& reference_percentages();

/// Aligned table with one column per labelled report, followed by
/// per-epoch fractions. With two reports the reference rows and, if given,
/// the bootstrap interval are appended.
std::string render_table(std::span<const std::pair<std::string, const DiversityReport*>> reports,
                         const std::optional<BootstrapInterval>& ci = std::nullopt);

/// different_known records with an empty annotation column for manual
/// plausibility labels.
void write_annotation_csv(const std::filesystem::path& path, const DiversityReport& report);

}  // namespace masktune

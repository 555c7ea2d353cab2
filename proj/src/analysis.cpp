#include "masktune/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "masktune/rng.hpp"

namespace masktune {

namespace {
constexpr std::string_view kUnkToken = "[UNK]";

std::string pct(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * f);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double dk_fraction(std::span<const Category> cats, std::span<const std::size_t> picks) {
  std::size_t dk = 0;
  for (std::size_t i : picks) dk += cats[i] == Category::different_known;
  return static_cast<double>(dk) / static_cast<double>(picks.size());
}
}  // namespace

std::string_view to_string(Category c) {
  switch (c) {
    case Category::identical: return "identical";
    case Category::different_known: return "different_known";
    case Category::unk: return "unk";
  }
  return "unknown";
}

Category categorize(const PredictionRecord& r) {
  if (r.predicted_token == r.original_token) return Category::identical;
  if (r.predicted_token == kUnkToken) return Category::unk;
  return Category::different_known;
}

void CategoryCounts::add(Category c) {
  switch (c) {
    case Category::identical: ++identical; break;
    case Category::different_known: ++different_known; break;
    case Category::unk: ++unk; break;
  }
}

std::size_t CategoryCounts::count(Category c) const {
  switch (c) {
    case Category::identical: return identical;
    case Category::different_known: return different_known;
    case Category::unk: return unk;
  }
  return 0;
}

double CategoryCounts::fraction(Category c) const {
  const std::size_t n = total();
  return n ? static_cast<double>(count(c)) / static_cast<double>(n) : 0.0;
}

namespace {
nlohmann::json counts_json(const CategoryCounts& c) {
  nlohmann::json j;
  j["total"] = c.total();
  for (Category k : kAllCategories) {
    j["counts"][std::string(to_string(k))] = c.count(k);
    j["fractions"][std::string(to_string(k))] = c.fraction(k);
  }
  return j;
}
}  // namespace

nlohmann::json DiversityReport::to_json() const {
  nlohmann::json j;
  j["population"] = population;
  j["sample_size"] = sampled_ids.size();
  j["records"] = records.size();
  j["pooled"] = counts_json(pooled);
  j["per_epoch"] = nlohmann::json::object();
  for (const auto& [epoch, c] : per_epoch) j["per_epoch"][std::to_string(epoch)] = counts_json(c);
  return j;
}

DiversityReport diversity_report(std::span<const PredictionRecord> log, std::size_t sample_size,
                                 std::uint64_t seed) {
  if (log.empty()) throw std::invalid_argument("diversity_report: empty perturbation log");
  std::set<std::size_t> ids;
  for (const auto& r : log) ids.insert(r.example_id);

  DiversityReport rep;
  rep.population = ids.size();
  std::vector<std::size_t> pool(ids.begin(), ids.end());
  if (sample_size != 0 && sample_size < pool.size()) {
    Rng rng(seed);
    // Partial Fisher-Yates: the first sample_size slots are a uniform draw.
    for (std::size_t i = 0; i < sample_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(sample_size);
    std::sort(pool.begin(), pool.end());
  }
  rep.sampled_ids = pool;

  const std::set<std::size_t> chosen(pool.begin(), pool.end());
  for (const auto& r : log) {
    if (!chosen.contains(r.example_id)) continue;
    const Category c = categorize(r);
    rep.pooled.add(c);
    rep.per_epoch[r.epoch].add(c);
    rep.records.push_back(r);
  }
  return rep;
}

DiversityReport diversity_report(const std::filesystem::path& log, std::size_t sample_size,
                                 std::uint64_t seed) {
  const auto records = read_perturbation_log(log);
  if (records.empty()) throw std::runtime_error("perturbation log " + log.string() + " is empty");
  return diversity_report(records, sample_size, seed);
}

BootstrapInterval bootstrap_different_known_diff(const DiversityReport& a,
                                                 const DiversityReport& b, double level,
                                                 std::size_t resamples, std::uint64_t seed) {
  if (a.records.empty() || b.records.empty()) {
    throw std::invalid_argument("bootstrap: both reports need records");
  }
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap: level must lie in (0, 1)");
  if (resamples == 0) throw std::invalid_argument("bootstrap: resamples must be positive");

  std::vector<Category> ca, cb;
  for (const auto& r : a.records) ca.push_back(categorize(r));
  for (const auto& r : b.records) cb.push_back(categorize(r));

  BootstrapInterval ci;
  ci.resamples = resamples;
  ci.estimate = a.pooled.fraction(Category::different_known) -
                b.pooled.fraction(Category::different_known);

  Rng rng(derive_seed(seed, "bootstrap"));
  std::uniform_int_distribution<std::size_t> pick_a(0, ca.size() - 1), pick_b(0, cb.size() - 1);
  std::vector<std::size_t> ia(ca.size()), ib(cb.size());
  std::vector<double> diffs(resamples);
  for (std::size_t r = 0; r < resamples; ++r) {
    for (auto& i : ia) i = pick_a(rng);
    for (auto& i : ib) i = pick_b(rng);
    diffs[r] = dk_fraction(ca, ia) - dk_fraction(cb, ib);
  }
  std::sort(diffs.begin(), diffs.end());
  const double tail = (1.0 - level) / 2.0;
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(resamples - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, resamples - 1);
    return diffs[lo] + (pos - static_cast<double>(lo)) * (diffs[hi] - diffs[lo]);
  };
  ci.lower = quantile(tail);
  ci.upper = quantile(1.0 - tail);
  return ci;
}

const std::vector<ReferencePercentages>& reference_percentages() {
  static const std::vector<ReferencePercentages> refs = {
      {"mlm", 76.0, 18.0, 5.0, 1.0},
      {"mask_tuning", 37.0, 60.0, 2.0, 1.0},
  };
  return refs;
}

std::string render_table(std::span<const std::pair<std::string, const DiversityReport*>> reports,
                         const std::optional<BootstrapInterval>& ci) {
  constexpr int kLabel = 26;
  constexpr int kCol = 16;
  std::ostringstream os;
  auto cell = [&](const std::string& s, int w) {
    os << s;
    for (int i = static_cast<int>(s.size()); i < w; ++i) os << ' ';
  };

  cell("category", kLabel);
  for (const auto& [name, rep] : reports) cell(name, kCol);
  os << '\n';
  for (Category c : kAllCategories) {
    cell(std::string(to_string(c)), kLabel);
    for (const auto& [name, rep] : reports) cell(pct(rep->pooled.fraction(c)), kCol);
    os << '\n';
  }
  cell("records", kLabel);
  for (const auto& [name, rep] : reports) cell(std::to_string(rep->pooled.total()), kCol);
  os << '\n';
  cell("examples sampled", kLabel);
  for (const auto& [name, rep] : reports) {
    cell(std::to_string(rep->sampled_ids.size()) + "/" + std::to_string(rep->population), kCol);
  }
  os << '\n';

  for (const auto& [name, rep] : reports) {
    os << "\nper epoch: " << name << '\n';
    cell("epoch", kLabel);
    for (Category c : kAllCategories) cell(std::string(to_string(c)), kCol);
    cell("records", kCol);
    os << '\n';
    for (const auto& [epoch, counts] : rep->per_epoch) {
      cell(std::to_string(epoch), kLabel);
      for (Category c : kAllCategories) cell(pct(counts.fraction(c)), kCol);
      cell(std::to_string(counts.total()), kCol);
      os << '\n';
    }
  }

  if (reports.size() == 2) {
    os << "\nreference percentages (annotation only, different_known = plausible + implausible)\n";
    cell("regime", kLabel);
    for (const char* h : {"identical", "different_known", "unk"}) cell(h, kCol);
    os << '\n';
    for (const auto& r : reference_percentages()) {
      char buf[3][32];
      std::snprintf(buf[0], sizeof buf[0], "%.0f%%", r.identical);
      std::snprintf(buf[1], sizeof buf[1], "%.0f%%", r.plausible + r.implausible);
      std::snprintf(buf[2], sizeof buf[2], "%.0f%%", r.unk);
      cell(r.label, kLabel);
      for (const char* b : buf) cell(b, kCol);
      os << '\n';
    }
    if (ci) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "\ndifferent_known %s - %s: %+.4f  95%% bootstrap CI [%+.4f, %+.4f] (%zu resamples)\n",
                    reports[0].first.c_str(), reports[1].first.c_str(), ci->estimate, ci->lower,
                    ci->upper, ci->resamples);
      os << buf;
    }
  }
  return os.str();
}

void write_annotation_csv(const std::filesystem::path& path, const DiversityReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,example_id,position,original_token,predicted_token,annotation\n";
  for (const auto& r : report.records) {
    if (categorize(r) != Category::different_known) continue;
    out << r.epoch << ',' << r.example_id << ',' << r.position << ',' << csv_field(r.original_token)
        << ',' << csv_field(r.predicted_token) << ",\n";
  }
}

}  // namespace masktune

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "masktune/data.hpp"
#include "support.hpp"

using namespace masktune;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
  const auto d = fs::path(MASKTUNE_TEST_TMP) / "data" / name;
  fs::create_directories(d);
  return d;
}

std::size_t count_token(const std::string& text, const std::string& tok) {
  std::size_t n = 0;
  for (const auto& t : split_tokens(text)) n += t == tok;
  return n;
}

TEST(SpuriousTask, SizesBalanceAndUniqueTexts) {
  const SpuriousTaskSpec spec = testutil::tiny_spec(200);
  const Dataset d = gen_spurious_task(spec);
  EXPECT_EQ(d.train.examples.size(), 200u);
  ASSERT_EQ(d.ood.size(), 1u);
  EXPECT_EQ(d.ood[0].name, "test_ood");
  std::set<std::string> texts;
  std::set<std::size_t> ids;
  std::size_t total = 0;
  std::vector<const DatasetSplit*> all = {&d.train};
  for (const DatasetSplit* s : d.eval_splits()) all.push_back(s);
  for (const DatasetSplit* s : all) {
    std::size_t pos = 0;
    for (const auto& e : s->examples) {
      texts.insert(e.text);
      ids.insert(e.id);
      pos += e.label == 1;
      const auto n = split_tokens(e.text).size();
      EXPECT_GE(n, spec.min_length);
      EXPECT_LE(n, std::max(spec.max_length, spec.signal_tokens_per_sentence + 1));
    }
    EXPECT_EQ(pos * 2, s->examples.size()) << s->name;
    total += s->examples.size();
  }
  EXPECT_EQ(texts.size(), total);
  EXPECT_EQ(ids.size(), total);
}

TEST(SpuriousTask, SignalMajorityDeterminesLabel) {
  const SpuriousTaskSpec spec = testutil::tiny_spec(200);
  const Dataset d = gen_spurious_task(spec);
  for (const auto& e : d.train.examples) {
    std::size_t pos = 0, neg = 0;
    for (const auto& t : split_tokens(e.text)) {
      pos += t.rfind("pos", 0) == 0;
      neg += t.rfind("neg", 0) == 0;
    }
    EXPECT_EQ(pos + neg, spec.signal_tokens_per_sentence);
    EXPECT_EQ(pos > neg ? 1 : 0, e.label) << e.text;
  }
}

TEST(SpuriousTask, ShortcutAllocationIsExact) {
  SpuriousTaskSpec spec = testutil::tiny_spec(400);
  spec.rho_train = 0.9;
  spec.rho_ood = 0.2;
  spec.n_test_ood = 100;
  const Dataset d = gen_spurious_task(spec);
  auto check = [&](const DatasetSplit& s, double rho) {
    std::size_t cue_pos = 0, cue_neg = 0;
    for (const auto& e : s.examples) {
      const auto c = count_token(e.text, spec.shortcut_token);
      EXPECT_LE(c, 1u);
      (e.label == 1 ? cue_pos : cue_neg) += c;
    }
    const double half = s.examples.size() / 2.0;
    EXPECT_EQ(cue_pos, static_cast<std::size_t>(std::llround(rho * half))) << s.name;
    EXPECT_EQ(cue_neg, static_cast<std::size_t>(std::llround((1 - rho) * half))) << s.name;
  };
  check(d.train, 0.9);
  check(d.test_indist, 0.9);
  check(d.ood[0], 0.2);
}

TEST(SpuriousTask, DeterministicUnderSeed) {
  const auto a = gen_spurious_task(testutil::tiny_spec());
  const auto b = gen_spurious_task(testutil::tiny_spec());
  EXPECT_EQ(a.train.examples, b.train.examples);
  SpuriousTaskSpec other = testutil::tiny_spec();
  other.seed = 12;
  EXPECT_NE(gen_spurious_task(other).train.examples, a.train.examples);
}

TEST(SpuriousTask, ValidationErrors) {
  SpuriousTaskSpec s = testutil::tiny_spec();
  s.signal_tokens_per_sentence = 2;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = testutil::tiny_spec();
  s.n_train = 7;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = testutil::tiny_spec();
  s.rho_train = 1.2;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = testutil::tiny_spec();
  s.min_length = 12;
  s.max_length = 8;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Files, TsvAndJsonlRoundTrip) {
  const auto dir = tmp_dir("roundtrip");
  const Dataset d = gen_spurious_task(testutil::tiny_spec());
  for (FileFormat f : {FileFormat::tsv, FileFormat::jsonl}) {
    const auto path = dir / (f == FileFormat::tsv ? "ood.tsv" : "ood.jsonl");
    write_examples(path, f, d.ood[0], d.label_names);
    const LoadReport rep = load_examples(path, f, RecordSchema{}, "test_ood");
    EXPECT_EQ(rep.malformed, 0u);
    ASSERT_EQ(rep.split.examples.size(), d.ood[0].examples.size());
    for (std::size_t i = 0; i < rep.split.examples.size(); ++i) {
      EXPECT_EQ(rep.split.examples[i].text, d.ood[0].examples[i].text);
      EXPECT_EQ(rep.split.examples[i].label, d.ood[0].examples[i].label);
    }
  }
}

TEST(Files, PairInputsRoundTrip) {
  const auto dir = tmp_dir("pairs");
  DatasetSplit s{"pairs", {{0, "a b", std::string("c d"), 1}, {1, "e", std::string("f g"), 0}}};
  RecordSchema schema;
  schema.text2_field = "text2";
  for (FileFormat f : {FileFormat::tsv, FileFormat::jsonl}) {
    const auto path = dir / (f == FileFormat::tsv ? "p.tsv" : "p.jsonl");
    write_examples(path, f, s, kBinaryLabelNames, schema);
    const auto rep = load_examples(path, f, schema);
    ASSERT_EQ(rep.split.examples.size(), 2u);
    EXPECT_EQ(rep.split.examples[0].text2, std::optional<std::string>("c d"));
  }
}

TEST(Files, MalformedRowsAreSkippedAndCounted) {
  const auto dir = tmp_dir("malformed");
  {
    std::ofstream out(dir / "bad.tsv");
    out << "text\tlabel\n"
        << "good one\tpositive\n"
        << "missing label column\n"
        << "empty label\t\n"
        << "another\tnegative\n";
  }
  const auto rep = load_examples(dir / "bad.tsv", FileFormat::tsv, RecordSchema{});
  EXPECT_EQ(rep.split.examples.size(), 2u);
  EXPECT_EQ(rep.malformed, 2u);
  EXPECT_EQ(rep.problems.size(), 2u);

  {
    std::ofstream out(dir / "bad.jsonl");
    out << "{\"text\": \"ok\", \"label\": \"negative\"}\n"
        << "not json\n"
        << "{\"label\": \"positive\"}\n";
  }
  const auto rj = load_examples(dir / "bad.jsonl", FileFormat::jsonl, RecordSchema{});
  EXPECT_EQ(rj.split.examples.size(), 1u);
  EXPECT_EQ(rj.malformed, 2u);
}

TEST(Files, UnknownLabelAndEmptyFilesThrow) {
  const auto dir = tmp_dir("errors");
  std::ofstream(dir / "label.tsv") << "text\tlabel\nhello\tneutral\n";
  try {
    load_examples(dir / "label.tsv", FileFormat::tsv, RecordSchema{});
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("neutral"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("positive=1"), std::string::npos);
  }
  std::ofstream(dir / "none.tsv") << "text\tlabel\nonly one column\n";
  EXPECT_THROW(load_examples(dir / "none.tsv", FileFormat::tsv, RecordSchema{}), std::runtime_error);
  EXPECT_THROW(load_examples(dir / "missing.tsv", FileFormat::tsv, RecordSchema{}), std::runtime_error);
  EXPECT_THROW(parse_file_format("csv"), std::invalid_argument);
}

TEST(SplitValidation, StratifiedAndDisjoint) {
  const Dataset d = gen_spurious_task(testutil::tiny_spec(200));
  const auto [rest, dev] = split_validation(d.train, 0.1, 3);
  EXPECT_EQ(dev.examples.size(), 20u);
  EXPECT_EQ(rest.examples.size(), 180u);
  std::size_t pos = 0;
  for (const auto& e : dev.examples) pos += e.label;
  EXPECT_EQ(pos, 10u);
  std::set<std::size_t> ids;
  for (const auto& e : rest.examples) ids.insert(e.id);
  for (const auto& e : dev.examples) EXPECT_FALSE(ids.contains(e.id));
  EXPECT_THROW(split_validation(d.train, 1.0, 3), std::invalid_argument);
}

TEST(Accuracy, MatchesPredictions) {
  const Dataset d = gen_spurious_task(testutil::tiny_spec());
  std::vector<std::string> corpus;
  for (const auto& e : d.train.examples) corpus.push_back(e.text);
  const Vocab v = Vocab::build(corpus);
  const auto split = tokenize_split(v, d.dev, 24);
  ModelParameters p = init_params(testutil::tiny_model(v.size()), 2);
  const auto preds = predict(p, split, 7);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < split.size(); ++i) hits += preds[i] == split[i].label;
  EXPECT_DOUBLE_EQ(accuracy(p, split, 5), static_cast<double>(hits) / split.size());
  // Batching does not change predictions.
  EXPECT_EQ(predict(p, split, 1), predict(p, split, 64));
}

}  // namespace

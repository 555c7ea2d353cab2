#include "masktune/checkpoint.hpp"

#include <fstream>

namespace masktune {

namespace {
constexpr const char* kFormat = "masktune-checkpoint";
constexpr int kVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params,
                     const Vocab& vocab, const nlohmann::json& metadata) {
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["model"] = params.config.to_json();
  j["vocab"] = vocab.to_json();
  j["metadata"] = metadata;
  nlohmann::json& tensors = j["params"];
  tensors = nlohmann::json::object();
  for (const auto& [name, t] : params.named()) tensors[name] = t->values();
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  if (!out) throw CheckpointError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    if (j.at("format") != kFormat) throw CheckpointError("not a masktune checkpoint");
    if (j.at("version") != kVersion) {
      throw CheckpointError("unsupported checkpoint version " + j.at("version").dump());
    }
    const ModelConfig cfg = ModelConfig::from_json(j.at("model"));
    Vocab vocab = Vocab::from_json(j.at("vocab"));
    if (vocab.size() != cfg.vocab_size) {
      throw CheckpointError("vocab has " + std::to_string(vocab.size()) +
                            " tokens but model.vocab_size is " + std::to_string(cfg.vocab_size));
    }
    ModelParameters params = init_params(cfg, 0);
    const auto& tensors = j.at("params");
    const auto shapes = ModelParameters::expected_shapes(cfg);
    auto slots = params.named();
    if (tensors.size() != slots.size()) {
      throw CheckpointError("checkpoint has " + std::to_string(tensors.size()) +
                            " tensors, config expects " + std::to_string(slots.size()));
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const auto& [name, t] = slots[i];
      if (!tensors.contains(name)) throw CheckpointError("checkpoint is missing tensor " + name);
      const auto values = tensors.at(name).get<std::vector<double>>();
      if (values.size() != t->size()) {
        throw CheckpointError("tensor " + name + " has " + std::to_string(values.size()) +
                              " values, expected shape " + shape_str(shapes[i].second));
      }
      std::copy(values.begin(), values.end(), t->data().begin());
    }
    return {std::move(params), std::move(vocab), j.value("metadata", nlohmann::json::object())};
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError("invalid checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace masktune

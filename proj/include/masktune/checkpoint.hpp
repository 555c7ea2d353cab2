#pragma once

#include <filesystem>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "masktune/model.hpp"
#include "masktune/tokenizer.hpp"

namespace masktune {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelParameters params;
  Vocab vocab;
  nlohmann::json metadata;  // free-form: run config, seed, mode
};

/// JSON document {format, version, model, vocab, metadata, params}. Values
/// are written with round-trip precision.
void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params,
                     const Vocab& vocab, const nlohmann::json& metadata = nlohmann::json::object());

/// Throws CheckpointError on unreadable or truncated files, a vocab/config
/// mismatch, or a tensor whose size disagrees with the config (the message
/// names the tensor).
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace masktune

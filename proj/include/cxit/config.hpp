#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cxit/model.hpp"
#include "cxit/states.hpp"
#include "cxit/train.hpp"

namespace cxit {

// One declarative document holding every knob of a run. Sections mirror the
// modules; `--set section.key=value` flags override file values.
struct RunConfig {
  std::uint64_t seed = 0;

  struct Encoder {
    std::size_t num_layers = 4;
    std::size_t hidden_dim = 32;
  } encoder;

  struct Task {
    std::size_t seq_len = 128;
    std::size_t vocab_size = 64;
    std::size_t num_pairs = 4;
    std::size_t count = 1000;  // tasks written by `gen`
  } task;

  struct Depth {
    std::size_t gate_dim = 256;
    std::size_t anchor_dim = 32;
    double tau = 1.0;
    bool shared_layer_projection = false;
  } depth;

  struct Width {
    std::size_t utility_dim = 256;
    double epsilon = 0.05;
    std::size_t segment_len = 128;
    std::size_t sinkhorn_iters = 30;
    std::size_t ratio = 4;
    std::string allocation = "transport";  // or "window"
  } width;

  struct Slots {
    std::size_t mlp_hidden = 256;
    std::size_t decoder_dim = 32;
  } slots;

  TrainConfig train;

  struct Eval {
    std::size_t heldout_tasks = 500;
    std::size_t spectrum_sequences = 50;  // held-out sequences used for plan statistics
  } eval;

  // Inputs and outputs; empty means "not given".
  struct Io {
    std::string out = "out";
    std::string tasks;
    std::string states;
    std::string checkpoint;
    std::string resume;
    std::size_t task_index = 0;  // which task `encode` turns into hidden states
  } io;

  ModelConfig model() const;
  TaskConfig tasks() const;
  Allocation allocation() const;
  void validate() const;
};

// Resolved document with every default filled in.
nlohmann::ordered_json to_json(const RunConfig& cfg);

// Throws ConfigError naming the first unknown or ill-typed key.
RunConfig config_from_json(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

// Applies "section.key=value" (or "seed=value"); value parsed as JSON, else taken as a string.
void apply_override(RunConfig& cfg, const std::string& assignment);

// 16 hex digits of FNV-1a over the canonical JSON dump.
std::string config_hash(const RunConfig& cfg);

nlohmann::ordered_json model_to_json(const ModelConfig& m);
ModelConfig model_from_json(const nlohmann::json& j);

std::string allocation_name(Allocation a);
Allocation parse_allocation(const std::string& name);

}  // namespace cxit

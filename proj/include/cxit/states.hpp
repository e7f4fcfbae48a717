#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cxit/numerics.hpp"

namespace cxit {

// Frozen per-layer token representations, indexed [layer][token][dim].
class HiddenStates {
 public:
  HiddenStates(std::size_t num_layers, std::size_t seq_len, std::size_t hidden_dim);
  explicit HiddenStates(std::vector<Matrix> layers);

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t seq_len() const noexcept { return static_cast<std::size_t>(layers_.front().rows()); }
  std::size_t hidden_dim() const noexcept { return static_cast<std::size_t>(layers_.front().cols()); }

  // N x d slice of one layer (zero-based).
  const Matrix& layer(std::size_t l) const { return layers_.at(l); }
  Matrix& layer(std::size_t l) { return layers_.at(l); }
  const std::vector<Matrix>& layers() const noexcept { return layers_; }

  double at(std::size_t l, std::size_t t, std::size_t i) const {
    return layers_[l](static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i));
  }

  bool operator==(const HiddenStates&) const = default;

 private:
  std::vector<Matrix> layers_;
};

// .hst: "CXITHST1", one JSON header line, then L*N*d little-endian f32.
void save_states(const HiddenStates& h, const std::filesystem::path& path);
HiddenStates load_states(const std::filesystem::path& path);

// Stand-in for the frozen backbone. Layer 1 blends each token embedding with
// the causal running mean of embeddings; every further layer adds
// tanh(A * window_mean + b), where window_mean averages the previous layer
// over the last kWindow positions (causal).
class SyntheticEncoder {
 public:
  static constexpr std::size_t kWindow = 8;
  static constexpr double kRunningMix = 0.5;

  SyntheticEncoder(std::size_t vocab_size, std::size_t num_layers, std::size_t hidden_dim,
                   std::uint64_t seed);

  std::size_t vocab_size() const noexcept { return static_cast<std::size_t>(embedding_.rows()); }
  std::size_t num_layers() const noexcept { return mix_weights_.size() + 1; }
  std::size_t hidden_dim() const noexcept { return static_cast<std::size_t>(embedding_.cols()); }
  std::size_t parameter_count() const noexcept;

  const Matrix& embedding() const noexcept { return embedding_; }

  HiddenStates encode(const std::vector<std::uint32_t>& tokens) const;

 private:
  Matrix embedding_;
  std::vector<Matrix> mix_weights_;
  std::vector<Vector> mix_bias_;
};

struct RetrievalTask {
  std::vector<std::uint32_t> tokens;
  std::uint32_t query_key = 0;
  std::uint32_t answer_value = 0;
  std::vector<std::size_t> pair_positions;

  bool operator==(const RetrievalTask&) const = default;
};

struct TaskConfig {
  std::size_t seq_len = 128;
  std::size_t vocab_size = 64;
  std::size_t num_pairs = 4;
};

// Id layout: keys in [0, R), values in [R, 2R), filler in [2R, vocab),
// where R = max(num_pairs, vocab / 4) clipped so at least two filler ids remain.
struct VocabLayout {
  std::uint32_t key_begin, key_end, value_begin, value_end, filler_begin, filler_end;
};
VocabLayout vocab_layout(const TaskConfig& cfg);

RetrievalTask gen_retrieval_task(Rng& rng, const TaskConfig& cfg);
std::vector<RetrievalTask> gen_retrieval_batch(Rng& rng, const TaskConfig& cfg, std::size_t count);

// Throws InvalidArgument if the planted-pair invariants do not hold.
void validate_task(const RetrievalTask& task);

// JSON-lines task files.
std::string task_to_json(const RetrievalTask& task);
RetrievalTask task_from_json(const std::string& line);
void save_tasks(const std::vector<RetrievalTask>& tasks, const std::filesystem::path& path);
std::vector<RetrievalTask> load_tasks(const std::filesystem::path& path);

}  // namespace cxit

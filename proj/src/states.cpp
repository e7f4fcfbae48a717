#include "cxit/states.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "cxit/error.hpp"

namespace cxit {

namespace {

constexpr char kStatesMagic[] = "CXITHST1";
constexpr std::size_t kMagicLen = 8;

static_assert(std::endian::native == std::endian::little,
              "payload serialization assumes a little-endian host");

}  // namespace

HiddenStates::HiddenStates(std::size_t num_layers, std::size_t seq_len, std::size_t hidden_dim) {
  if (num_layers == 0 || seq_len == 0 || hidden_dim == 0)
    throw InvalidArgument("HiddenStates: L, N and d must be at least 1");
  layers_.assign(num_layers, Matrix::Zero(static_cast<Eigen::Index>(seq_len),
                                          static_cast<Eigen::Index>(hidden_dim)));
}

HiddenStates::HiddenStates(std::vector<Matrix> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidArgument("HiddenStates: need at least one layer");
  const auto rows = layers_.front().rows();
  const auto cols = layers_.front().cols();
  if (rows == 0 || cols == 0) throw InvalidArgument("HiddenStates: N and d must be at least 1");
  for (const auto& m : layers_) {
    if (m.rows() != rows || m.cols() != cols)
      throw InvalidArgument("HiddenStates: layers disagree in shape");
    if (!m.allFinite()) throw InvalidArgument("HiddenStates: non-finite entry");
  }
}

void save_states(const HiddenStates& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  nlohmann::ordered_json header;
  header["version"] = 1;
  header["L"] = h.num_layers();
  header["N"] = h.seq_len();
  header["d"] = h.hidden_dim();
  header["dtype"] = "f32";
  header["layout"] = "layer_token_dim";
  out.write(kStatesMagic, kMagicLen);
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  std::vector<float> payload;
  payload.reserve(h.num_layers() * h.seq_len() * h.hidden_dim());
  for (const auto& layer : h.layers())
    for (Eigen::Index t = 0; t < layer.rows(); ++t)
      for (Eigen::Index i = 0; i < layer.cols(); ++i)
        payload.push_back(static_cast<float>(layer(t, i)));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw IoError(path.string(), "write failed");
}

HiddenStates load_states(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen) || std::memcmp(magic, kStatesMagic, kMagicLen) != 0)
    throw ParseError("magic", "expected CXITHST1");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("header", "missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("header", e.what());
  }
  auto field = [&](const char* key) -> const nlohmann::json& {
    if (!header.contains(key)) throw ParseError(key, "missing");
    return header[key];
  };
  if (!field("version").is_number_integer() || field("version").get<int>() != 1)
    throw ParseError("version", "unsupported version " + field("version").dump());
  if (field("dtype") != "f32") throw ParseError("dtype", "unsupported dtype " + field("dtype").dump());
  if (field("layout") != "layer_token_dim")
    throw ParseError("layout", "unsupported layout " + field("layout").dump());
  auto dim = [&](const char* key) {
    const auto& v = field(key);
    if (!v.is_number_integer() || v.get<long long>() < 1) throw ParseError(key, "must be a positive integer");
    return v.get<std::size_t>();
  };
  const std::size_t L = dim("L"), N = dim("N"), d = dim("d");
  const std::size_t count = L * N * d;
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < count * sizeof(float))
    throw ParseError("payload", "truncated: expected " + std::to_string(count * sizeof(float)) +
                                    " bytes, found " + std::to_string(bytes.size()));
  if (bytes.size() > count * sizeof(float))
    throw ParseError("payload", "length " + std::to_string(bytes.size()) +
                                    " inconsistent with L*N*d = " + std::to_string(count));
  std::vector<Matrix> layers(L, Matrix(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d)));
  const char* cursor = bytes.data();
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t t = 0; t < N; ++t)
      for (std::size_t i = 0; i < d; ++i) {
        float v;
        std::memcpy(&v, cursor, sizeof(float));
        cursor += sizeof(float);
        if (!std::isfinite(v)) throw ParseError("payload", "non-finite value");
        layers[l](static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = v;
      }
  return HiddenStates(std::move(layers));
}

SyntheticEncoder::SyntheticEncoder(std::size_t vocab_size, std::size_t num_layers,
                                   std::size_t hidden_dim, std::uint64_t seed) {
  if (vocab_size == 0 || num_layers == 0 || hidden_dim == 0)
    throw InvalidArgument("SyntheticEncoder: vocab, L and d must be at least 1");
  Rng root(seed);
  Rng emb = root.substream("encoder.embedding");
  embedding_ = gaussian_matrix(emb, static_cast<Eigen::Index>(vocab_size),
                               static_cast<Eigen::Index>(hidden_dim), 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (std::size_t l = 1; l < num_layers; ++l) {
    Rng layer_rng = root.substream("encoder.layer").substream(l);
    mix_weights_.push_back(gaussian_matrix(layer_rng, static_cast<Eigen::Index>(hidden_dim),
                                           static_cast<Eigen::Index>(hidden_dim), 2.0 * scale));
    mix_bias_.push_back(gaussian_matrix(layer_rng, static_cast<Eigen::Index>(hidden_dim), 1, 0.1));
  }
}

std::size_t SyntheticEncoder::parameter_count() const noexcept {
  std::size_t n = static_cast<std::size_t>(embedding_.size());
  for (std::size_t l = 0; l < mix_weights_.size(); ++l)
    n += static_cast<std::size_t>(mix_weights_[l].size() + mix_bias_[l].size());
  return n;
}

HiddenStates SyntheticEncoder::encode(const std::vector<std::uint32_t>& tokens) const {
  if (tokens.empty()) throw InvalidArgument("synth_encode: empty token sequence");
  for (std::size_t t = 0; t < tokens.size(); ++t)
    if (tokens[t] >= vocab_size())
      throw InvalidArgument("synth_encode: token id " + std::to_string(tokens[t]) +
                            " out of range at position " + std::to_string(t));
  const auto N = static_cast<Eigen::Index>(tokens.size());
  const auto d = embedding_.cols();
  std::vector<Matrix> layers;
  layers.reserve(num_layers());

  Matrix first(N, d);
  Eigen::RowVectorXd running = Eigen::RowVectorXd::Zero(d);
  for (Eigen::Index t = 0; t < N; ++t) {
    const auto e = embedding_.row(tokens[static_cast<std::size_t>(t)]);
    running += e;
    first.row(t) = (1.0 - kRunningMix) * e + kRunningMix * running / static_cast<double>(t + 1);
  }
  layers.push_back(std::move(first));

  for (std::size_t l = 0; l < mix_weights_.size(); ++l) {
    const Matrix& prev = layers.back();
    Matrix window_mean(N, d);
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(d);
    for (Eigen::Index t = 0; t < N; ++t) {
      acc += prev.row(t);
      const Eigen::Index drop = t - static_cast<Eigen::Index>(kWindow);
      if (drop >= 0) acc -= prev.row(drop);
      window_mean.row(t) = acc / static_cast<double>(std::min<Eigen::Index>(t + 1, kWindow));
    }
    Matrix pre = window_mean * mix_weights_[l];
    pre.rowwise() += mix_bias_[l].transpose();
    layers.push_back(prev + pre.array().tanh().matrix());
  }
  return HiddenStates(std::move(layers));
}

VocabLayout vocab_layout(const TaskConfig& cfg) {
  if (cfg.num_pairs == 0) throw InvalidArgument("retrieval task: num_pairs must be at least 1");
  if (cfg.vocab_size < 2 * cfg.num_pairs + 2)
    throw InvalidArgument("retrieval task: vocab_size must be at least 2*num_pairs+2");
  if (cfg.seq_len < 2 * cfg.num_pairs)
    throw InvalidArgument("retrieval task: seq_len must be at least 2*num_pairs");
  // A quarter of the vocabulary each for keys and values, the rest filler.
  const std::size_t range = std::min(std::max(cfg.num_pairs, cfg.vocab_size / 4), (cfg.vocab_size - 2) / 2);
  const auto r = static_cast<std::uint32_t>(range);
  return {0, r, r, 2 * r, 2 * r, static_cast<std::uint32_t>(cfg.vocab_size)};
}

RetrievalTask gen_retrieval_task(Rng& rng, const TaskConfig& cfg) {
  const VocabLayout ids = vocab_layout(cfg);
  const std::size_t N = cfg.seq_len;
  const std::size_t P = cfg.num_pairs;
  RetrievalTask task;
  task.tokens.resize(N);
  for (auto& tok : task.tokens)
    tok = ids.filler_begin + static_cast<std::uint32_t>(rng.below(ids.filler_end - ids.filler_begin));

  // Choose P disjoint adjacent slots: pick P gap lengths summing to N - 2P
  // by sampling sorted offsets in the compressed line of N - P positions.
  std::vector<std::size_t> picks;
  const std::size_t line = N - P;
  while (picks.size() < P) {
    const std::size_t c = rng.below(line);
    if (std::find(picks.begin(), picks.end(), c) == picks.end()) picks.push_back(c);
  }
  std::sort(picks.begin(), picks.end());
  for (std::size_t i = 0; i < P; ++i) task.pair_positions.push_back(picks[i] + i);

  std::vector<std::uint32_t> keys;
  const std::uint32_t key_range = ids.key_end - ids.key_begin;
  while (keys.size() < P) {
    const auto k = ids.key_begin + static_cast<std::uint32_t>(rng.below(key_range));
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  const std::uint32_t value_range = ids.value_end - ids.value_begin;
  std::vector<std::uint32_t> values;
  for (std::size_t i = 0; i < P; ++i)
    values.push_back(ids.value_begin + static_cast<std::uint32_t>(rng.below(value_range)));
  for (std::size_t i = 0; i < P; ++i) {
    task.tokens[task.pair_positions[i]] = keys[i];
    task.tokens[task.pair_positions[i] + 1] = values[i];
  }
  const std::size_t chosen = rng.below(P);
  task.query_key = keys[chosen];
  task.answer_value = values[chosen];
  validate_task(task);
  return task;
}

std::vector<RetrievalTask> gen_retrieval_batch(Rng& rng, const TaskConfig& cfg, std::size_t count) {
  std::vector<RetrievalTask> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_retrieval_task(rng, cfg));
  return out;
}

void validate_task(const RetrievalTask& task) {
  std::size_t matches = 0;
  for (std::size_t pos : task.pair_positions) {
    if (pos + 1 >= task.tokens.size()) throw InvalidArgument("task: pair position out of range");
    if (task.tokens[pos] == task.query_key) {
      ++matches;
      if (task.tokens[pos + 1] != task.answer_value)
        throw InvalidArgument("task: answer does not follow the query key");
    }
  }
  if (matches != 1)
    throw InvalidArgument("task: expected exactly one pair matching the query, found " +
                          std::to_string(matches));
}

std::string task_to_json(const RetrievalTask& task) {
  nlohmann::ordered_json j;
  j["tokens"] = task.tokens;
  j["query_key"] = task.query_key;
  j["answer_value"] = task.answer_value;
  j["pair_positions"] = task.pair_positions;
  return j.dump();
}

RetrievalTask task_from_json(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("task", e.what());
  }
  RetrievalTask task;
  for (const char* key : {"tokens", "query_key", "answer_value", "pair_positions"})
    if (!j.contains(key)) throw ParseError(key, "missing");
  try {
    task.tokens = j["tokens"].get<std::vector<std::uint32_t>>();
    task.query_key = j["query_key"].get<std::uint32_t>();
    task.answer_value = j["answer_value"].get<std::uint32_t>();
    task.pair_positions = j["pair_positions"].get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("task", e.what());
  }
  return task;
}

void save_tasks(const std::vector<RetrievalTask>& tasks, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  for (const auto& t : tasks) out << task_to_json(t) << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

std::vector<RetrievalTask> load_tasks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::vector<RetrievalTask> tasks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    tasks.push_back(task_from_json(line));
  }
  return tasks;
}

}  // namespace cxit

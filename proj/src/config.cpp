#include "cxit/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cxit/error.hpp"

namespace cxit {

namespace {

using Json = nlohmann::json;
using Setter = std::function<void(const Json&)>;

template <class T>
Setter make_setter(T& target, const std::string& key) {
  return [&target, key](const Json& v) {
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(key, "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0))
          throw ConfigError(key, "expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(key, "expected a number");
      } else {
        if (!v.is_string()) throw ConfigError(key, "expected a string");
      }
      target = v.get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(key, e.what());
    }
  };
}

// "section.key" -> setter; the table is the single source of truth for accepted keys.
std::map<std::string, Setter> setters(RunConfig& c) {
  std::map<std::string, Setter> s;
  auto add = [&](const std::string& key, auto& target) { s.emplace(key, make_setter(target, key)); };
  add("seed", c.seed);
  add("encoder.num_layers", c.encoder.num_layers);
  add("encoder.hidden_dim", c.encoder.hidden_dim);
  add("task.seq_len", c.task.seq_len);
  add("task.vocab_size", c.task.vocab_size);
  add("task.num_pairs", c.task.num_pairs);
  add("task.count", c.task.count);
  add("depth.gate_dim", c.depth.gate_dim);
  add("depth.anchor_dim", c.depth.anchor_dim);
  add("depth.tau", c.depth.tau);
  add("depth.shared_layer_projection", c.depth.shared_layer_projection);
  add("width.utility_dim", c.width.utility_dim);
  add("width.epsilon", c.width.epsilon);
  add("width.segment_len", c.width.segment_len);
  add("width.sinkhorn_iters", c.width.sinkhorn_iters);
  add("width.ratio", c.width.ratio);
  add("width.allocation", c.width.allocation);
  add("slots.mlp_hidden", c.slots.mlp_hidden);
  add("slots.decoder_dim", c.slots.decoder_dim);
  add("train.learning_rate", c.train.learning_rate);
  add("train.grad_clip_norm", c.train.grad_clip_norm);
  add("train.steps", c.train.steps);
  add("train.batch_size", c.train.batch_size);
  add("train.beta1", c.train.beta1);
  add("train.beta2", c.train.beta2);
  add("train.adam_eps", c.train.adam_eps);
  add("eval.heldout_tasks", c.eval.heldout_tasks);
  add("eval.spectrum_sequences", c.eval.spectrum_sequences);
  add("io.out", c.io.out);
  add("io.tasks", c.io.tasks);
  add("io.states", c.io.states);
  add("io.checkpoint", c.io.checkpoint);
  add("io.resume", c.io.resume);
  add("io.task_index", c.io.task_index);
  return s;
}

}  // namespace

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.num_layers = encoder.num_layers;
  m.hidden_dim = encoder.hidden_dim;
  m.gate_dim = depth.gate_dim;
  m.anchor_dim = depth.anchor_dim;
  m.utility_dim = width.utility_dim;
  m.mlp_hidden = slots.mlp_hidden;
  m.decoder_dim = slots.decoder_dim;
  m.vocab_size = task.vocab_size;
  m.tau = depth.tau;
  m.epsilon = width.epsilon;
  m.segment_len = width.segment_len;
  m.sinkhorn_iters = width.sinkhorn_iters;
  m.ratio = width.ratio;
  m.shared_layer_projection = depth.shared_layer_projection;
  m.allocation = allocation();
  return m;
}

TaskConfig RunConfig::tasks() const { return {task.seq_len, task.vocab_size, task.num_pairs}; }

Allocation RunConfig::allocation() const { return parse_allocation(width.allocation); }

void RunConfig::validate() const {
  auto wrap = [](const char* key, auto&& fn) {
    try {
      fn();
    } catch (const InvalidArgument& e) {
      throw ConfigError(key, e.what());
    }
  };
  wrap("width.allocation", [&] { allocation(); });
  wrap("model", [&] { model().validate(); });
  wrap("task", [&] { vocab_layout(tasks()); });
  wrap("train", [&] { train.validate(); });
  if (task.seq_len < width.ratio) throw ConfigError("task.seq_len", "must be at least width.ratio");
  if (eval.heldout_tasks == 0) throw ConfigError("eval.heldout_tasks", "must be at least 1");
  if (eval.spectrum_sequences == 0 || eval.spectrum_sequences > eval.heldout_tasks)
    throw ConfigError("eval.spectrum_sequences", "must lie in [1, eval.heldout_tasks]");
  if (io.out.empty()) throw ConfigError("io.out", "must not be empty");
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["encoder"] = {{"num_layers", c.encoder.num_layers}, {"hidden_dim", c.encoder.hidden_dim}};
  j["task"] = {{"seq_len", c.task.seq_len},
               {"vocab_size", c.task.vocab_size},
               {"num_pairs", c.task.num_pairs},
               {"count", c.task.count}};
  j["depth"] = {{"gate_dim", c.depth.gate_dim},
                {"anchor_dim", c.depth.anchor_dim},
                {"tau", c.depth.tau},
                {"shared_layer_projection", c.depth.shared_layer_projection}};
  j["width"] = {{"utility_dim", c.width.utility_dim},
                {"epsilon", c.width.epsilon},
                {"segment_len", c.width.segment_len},
                {"sinkhorn_iters", c.width.sinkhorn_iters},
                {"ratio", c.width.ratio},
                {"allocation", c.width.allocation}};
  j["slots"] = {{"mlp_hidden", c.slots.mlp_hidden}, {"decoder_dim", c.slots.decoder_dim}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"grad_clip_norm", c.train.grad_clip_norm},
                {"steps", c.train.steps},
                {"batch_size", c.train.batch_size},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"adam_eps", c.train.adam_eps}};
  j["eval"] = {{"heldout_tasks", c.eval.heldout_tasks}, {"spectrum_sequences", c.eval.spectrum_sequences}};
  j["io"] = {{"out", c.io.out},
             {"tasks", c.io.tasks},
             {"states", c.io.states},
             {"checkpoint", c.io.checkpoint},
             {"resume", c.io.resume},
             {"task_index", c.io.task_index}};
  return j;
}

RunConfig config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  RunConfig cfg;
  const auto table = setters(cfg);
  for (const auto& [section, body] : doc.items()) {
    if (!body.is_object()) {
      const auto it = table.find(section);
      if (it == table.end()) throw ConfigError(section, "unknown key");
      it->second(body);
      continue;
    }
    for (const auto& [key, value] : body.items()) {
      const std::string full = section + "." + key;
      const auto it = table.find(full);
      if (it == table.end()) throw ConfigError(full, "unknown key");
      it->second(value);
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open config");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  return config_from_json(doc);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like section.key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  const auto table = setters(cfg);
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError(key, "unknown key");
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  it->second(value);
  cfg.validate();
}

std::string config_hash(const RunConfig& cfg) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << fnv1a64(to_json(cfg).dump());
  return out.str();
}

nlohmann::ordered_json model_to_json(const ModelConfig& m) {
  return {{"num_layers", m.num_layers},
          {"hidden_dim", m.hidden_dim},
          {"gate_dim", m.gate_dim},
          {"anchor_dim", m.anchor_dim},
          {"utility_dim", m.utility_dim},
          {"mlp_hidden", m.mlp_hidden},
          {"decoder_dim", m.decoder_dim},
          {"vocab_size", m.vocab_size},
          {"tau", m.tau},
          {"epsilon", m.epsilon},
          {"segment_len", m.segment_len},
          {"sinkhorn_iters", m.sinkhorn_iters},
          {"ratio", m.ratio},
          {"shared_layer_projection", m.shared_layer_projection},
          {"allocation", allocation_name(m.allocation)}};
}

ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig m;
  try {
    m.num_layers = j.at("num_layers").get<std::size_t>();
    m.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    m.gate_dim = j.at("gate_dim").get<std::size_t>();
    m.anchor_dim = j.at("anchor_dim").get<std::size_t>();
    m.utility_dim = j.at("utility_dim").get<std::size_t>();
    m.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    m.decoder_dim = j.at("decoder_dim").get<std::size_t>();
    m.vocab_size = j.at("vocab_size").get<std::size_t>();
    m.tau = j.at("tau").get<double>();
    m.epsilon = j.at("epsilon").get<double>();
    m.segment_len = j.at("segment_len").get<std::size_t>();
    m.sinkhorn_iters = j.at("sinkhorn_iters").get<std::size_t>();
    m.ratio = j.at("ratio").get<std::size_t>();
    m.shared_layer_projection = j.at("shared_layer_projection").get<bool>();
    m.allocation = parse_allocation(j.at("allocation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("model", e.what());
  }
  return m;
}

std::string allocation_name(Allocation a) {
  return a == Allocation::Transport ? "transport" : "window";
}

Allocation parse_allocation(const std::string& name) {
  if (name == "transport") return Allocation::Transport;
  if (name == "window") return Allocation::WindowAttention;
  throw InvalidArgument("allocation must be \"transport\" or \"window\", got \"" + name + "\"");
}

}  // namespace cxit

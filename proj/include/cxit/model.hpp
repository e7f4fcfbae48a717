#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cxit/slots.hpp"
#include "cxit/states.hpp"

namespace cxit {

// Every dimension and solver knob of the compressor plus retrieval head.
struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t hidden_dim = 32;
  std::size_t gate_dim = 256;
  std::size_t anchor_dim = 32;
  std::size_t utility_dim = 256;
  std::size_t mlp_hidden = 256;
  std::size_t decoder_dim = 32;
  std::size_t vocab_size = 64;
  double tau = 1.0;
  double epsilon = 0.05;
  std::size_t segment_len = 128;
  std::size_t sinkhorn_iters = 30;
  std::size_t ratio = 4;
  bool shared_layer_projection = false;
  Allocation allocation = Allocation::Transport;

  void validate() const;
};

// Query-attention readout over aligned slots followed by a vocabulary projection.
struct HeadParams {
  Matrix query_embedding;  // vocab x d_dec
  Matrix output_proj;      // d_dec x vocab
};

struct ModuleParams {
  DepthParams depth;
  WidthParams width;
  SlotParams slot;
  HeadParams head;

  CompressionParams compression() const { return {depth, width, slot}; }
};

ModuleParams init_module_params(const ModelConfig& cfg, std::uint64_t seed);

// Same shapes as `params`, all trainable entries zero; non-trainable knobs copied.
ModuleParams zeros_like(const ModuleParams& params);

// Visits trainable tensors in canonical order as (group name, data, size).
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(std::string("depth.w_logits"), p.depth.w_logits.data(), p.depth.w_logits.size());
  fn(std::string("depth.W_c"), p.depth.W_c.data(), p.depth.W_c.size());
  for (std::size_t l = 0; l < p.depth.W_layer.size(); ++l)
    fn("depth.W_layer." + std::to_string(l), p.depth.W_layer[l].data(), p.depth.W_layer[l].size());
  for (std::size_t l = 0; l < p.depth.e_layer.size(); ++l)
    fn("depth.e_layer." + std::to_string(l), p.depth.e_layer[l].data(), p.depth.e_layer[l].size());
  fn(std::string("depth.W_a"), p.depth.W_a.data(), p.depth.W_a.size());
  fn(std::string("width.W_u"), p.width.W_u.data(), p.width.W_u.size());
  fn(std::string("width.w_rho"), p.width.w_rho.data(), p.width.w_rho.size());
  fn(std::string("slot.W_g"), p.slot.W_g.data(), p.slot.W_g.size());
  fn(std::string("slot.mlp_W1"), p.slot.mlp_W1.data(), p.slot.mlp_W1.size());
  fn(std::string("slot.mlp_b1"), p.slot.mlp_b1.data(), p.slot.mlp_b1.size());
  fn(std::string("slot.mlp_W2"), p.slot.mlp_W2.data(), p.slot.mlp_W2.size());
  fn(std::string("slot.mlp_b2"), p.slot.mlp_b2.data(), p.slot.mlp_b2.size());
  fn(std::string("head.query_embedding"), p.head.query_embedding.data(), p.head.query_embedding.size());
  fn(std::string("head.output_proj"), p.head.output_proj.data(), p.head.output_proj.size());
}

struct ParamGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::vector<std::size_t> shape;
};

std::vector<ParamGroup> param_groups(const ModuleParams& params);
std::size_t param_count(const ModuleParams& params);

Vector flatten(const ModuleParams& params);
void unflatten(const Vector& flat, ModuleParams& params);

struct RetrievalOutput {
  double loss = 0.0;
  Vector probs;      // over vocab
  Vector attention;  // over slots
};

// Cross-entropy of the answer token after the query attends over the slots.
RetrievalOutput retrieval_loss(const CompressedSlots& slots, const RetrievalTask& task,
                               const ModuleParams& params);

struct ForwardPass {
  DepthTrace depth;
  WidthTrace width;
  SlotTrace slot;
  Vector pooled;
  RetrievalOutput head;
};

ForwardPass forward(const HiddenStates& h, const RetrievalTask& task, const ModuleParams& params,
                    Allocation mode);

// Reverse-mode gradient of loss_weight * retrieval loss, shaped like `params`.
ModuleParams backward(const HiddenStates& h, const RetrievalTask& task, const ModuleParams& params,
                      const ForwardPass& fwd, Allocation mode, double loss_weight = 1.0);

struct LossAndGrad {
  double loss = 0.0;
  bool correct = false;
  ModuleParams grad;
};

LossAndGrad loss_and_grad(const HiddenStates& h, const RetrievalTask& task, const ModuleParams& params,
                          Allocation mode, double loss_weight = 1.0);

}  // namespace cxit

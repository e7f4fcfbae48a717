#include "cxit/model.hpp"

#include <cmath>

#include "cxit/error.hpp"

namespace cxit {

void ModelConfig::validate() const {
  if (num_layers == 0 || hidden_dim == 0 || gate_dim == 0 || anchor_dim == 0 || utility_dim == 0 ||
      mlp_hidden == 0 || decoder_dim == 0)
    throw InvalidArgument("model: all dimensions must be at least 1");
  if (vocab_size < 2) throw InvalidArgument("model: vocab_size must be at least 2");
  if (!(tau > 0.0)) throw InvalidArgument("model: tau must be positive");
  WidthParams knobs;
  knobs.epsilon = epsilon;
  knobs.segment_len = segment_len;
  knobs.sinkhorn_iters = sinkhorn_iters;
  knobs.ratio = ratio;
  knobs.validate();
}

ModuleParams init_module_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Rng root(seed);
  ModuleParams p;
  Rng depth_rng = root.substream("params.depth");
  p.depth = init_depth_params({cfg.num_layers, cfg.hidden_dim, cfg.gate_dim, cfg.anchor_dim,
                               cfg.shared_layer_projection, cfg.tau},
                              depth_rng);
  Rng width_rng = root.substream("params.width");
  p.width = init_width_params({cfg.anchor_dim, cfg.utility_dim, cfg.epsilon, cfg.segment_len,
                               cfg.sinkhorn_iters, cfg.ratio},
                              width_rng);
  Rng slot_rng = root.substream("params.slot");
  p.slot = init_slot_params({cfg.anchor_dim, cfg.mlp_hidden, cfg.decoder_dim}, slot_rng);
  Rng head_rng = root.substream("params.head");
  const auto V = static_cast<Eigen::Index>(cfg.vocab_size);
  const auto dd = static_cast<Eigen::Index>(cfg.decoder_dim);
  p.head.query_embedding = gaussian_matrix(head_rng, V, dd, 1.0);
  p.head.output_proj = gaussian_matrix(head_rng, dd, V, 1.0 / std::sqrt(static_cast<double>(cfg.decoder_dim)));
  return p;
}

ModuleParams zeros_like(const ModuleParams& params) {
  ModuleParams z = params;
  for_each_tensor(z, [](const std::string&, double* data, Eigen::Index n) {
    std::fill(data, data + n, 0.0);
  });
  return z;
}

std::vector<ParamGroup> param_groups(const ModuleParams& params) {
  std::vector<ParamGroup> groups;
  std::size_t offset = 0;
  auto shape_of = [](const auto& m) {
    return std::vector<std::size_t>{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  };
  // Shapes listed in the same order for_each_tensor visits.
  std::vector<std::vector<std::size_t>> shapes;
  shapes.push_back({static_cast<std::size_t>(params.depth.w_logits.size())});
  shapes.push_back(shape_of(params.depth.W_c));
  for (const auto& w : params.depth.W_layer) shapes.push_back(shape_of(w));
  for (const auto& e : params.depth.e_layer) shapes.push_back({static_cast<std::size_t>(e.size())});
  shapes.push_back(shape_of(params.depth.W_a));
  shapes.push_back(shape_of(params.width.W_u));
  shapes.push_back({static_cast<std::size_t>(params.width.w_rho.size())});
  shapes.push_back(shape_of(params.slot.W_g));
  shapes.push_back(shape_of(params.slot.mlp_W1));
  shapes.push_back({static_cast<std::size_t>(params.slot.mlp_b1.size())});
  shapes.push_back(shape_of(params.slot.mlp_W2));
  shapes.push_back({static_cast<std::size_t>(params.slot.mlp_b2.size())});
  shapes.push_back(shape_of(params.head.query_embedding));
  shapes.push_back(shape_of(params.head.output_proj));
  std::size_t i = 0;
  for_each_tensor(params, [&](const std::string& name, const double*, Eigen::Index n) {
    groups.push_back({name, offset, static_cast<std::size_t>(n), shapes[i++]});
    offset += static_cast<std::size_t>(n);
  });
  return groups;
}

std::size_t param_count(const ModuleParams& params) {
  std::size_t n = 0;
  for_each_tensor(params, [&](const std::string&, const double*, Eigen::Index size) {
    n += static_cast<std::size_t>(size);
  });
  return n;
}

Vector flatten(const ModuleParams& params) {
  Vector flat(static_cast<Eigen::Index>(param_count(params)));
  Eigen::Index offset = 0;
  for_each_tensor(params, [&](const std::string&, const double* data, Eigen::Index n) {
    flat.segment(offset, n) = Eigen::Map<const Vector>(data, n);
    offset += n;
  });
  return flat;
}

void unflatten(const Vector& flat, ModuleParams& params) {
  if (static_cast<std::size_t>(flat.size()) != param_count(params))
    throw InvalidArgument("unflatten: vector length does not match parameter count");
  Eigen::Index offset = 0;
  for_each_tensor(params, [&](const std::string&, double* data, Eigen::Index n) {
    Eigen::Map<Vector>(data, n) = flat.segment(offset, n);
    offset += n;
  });
}

namespace {

struct HeadForward {
  Vector query;
  Vector pooled;
  RetrievalOutput out;
};

HeadForward head_forward(const Matrix& aligned, const RetrievalTask& task, const HeadParams& head) {
  const auto V = head.query_embedding.rows();
  if (task.query_key >= V || task.answer_value >= V)
    throw InvalidArgument("retrieval_loss: query or answer id outside the vocabulary");
  if (aligned.cols() != head.query_embedding.cols() || head.output_proj.rows() != aligned.cols())
    throw InvalidArgument("retrieval_loss: head width does not match slot width");
  HeadForward hf;
  hf.query = head.query_embedding.row(task.query_key).transpose();
  const double scale = 1.0 / std::sqrt(static_cast<double>(aligned.cols()));
  hf.out.attention = softmax(aligned * hf.query * scale);
  hf.pooled = aligned.transpose() * hf.out.attention;
  const Vector logits = head.output_proj.transpose() * hf.pooled;
  hf.out.probs = softmax(logits);
  const double peak = logits.maxCoeff();
  const double lse = peak + std::log((logits.array() - peak).exp().sum());
  hf.out.loss = lse - logits[task.answer_value];
  if (!std::isfinite(hf.out.loss)) throw DivergenceError("retrieval_loss: non-finite loss");
  return hf;
}

}  // namespace

RetrievalOutput retrieval_loss(const CompressedSlots& slots, const RetrievalTask& task,
                               const ModuleParams& params) {
  return head_forward(slots.aligned, task, params.head).out;
}

ForwardPass forward(const HiddenStates& h, const RetrievalTask& task, const ModuleParams& params,
                    Allocation mode) {
  ForwardPass f;
  f.depth = depth_forward(h, params.depth);
  if (!f.depth.out.anchors.allFinite()) throw DivergenceError("forward: non-finite anchors");
  f.width = width_forward(f.depth.out.anchors, params.width, mode);
  if (!f.width.plan.plan.allFinite()) throw DivergenceError("forward: non-finite plan");
  f.slot = slot_forward(f.depth.out.anchors, f.width.plan.plan, params.slot);
  if (!f.slot.out.aligned.allFinite()) throw DivergenceError("forward: non-finite slots");
  HeadForward hf = head_forward(f.slot.out.aligned, task, params.head);
  f.pooled = std::move(hf.pooled);
  f.head = std::move(hf.out);
  return f;
}

ModuleParams backward(const HiddenStates& h, const RetrievalTask& task, const ModuleParams& params,
                      const ForwardPass& f, Allocation mode, double loss_weight) {
  ModuleParams grad = zeros_like(params);
  const Matrix& aligned = f.slot.out.aligned;
  const double scale = 1.0 / std::sqrt(static_cast<double>(aligned.cols()));

  // Cross-entropy through the vocabulary projection.
  Vector d_logits = f.head.probs * loss_weight;
  d_logits[task.answer_value] -= loss_weight;
  grad.head.output_proj.noalias() += f.pooled * d_logits.transpose();
  const Vector d_pooled = params.head.output_proj * d_logits;

  // pooled = aligned^T attention, attention = softmax(aligned q / sqrt(d)).
  const Vector& attn = f.head.attention;
  const Vector d_attn = aligned * d_pooled;
  const Vector d_scores = attn.cwiseProduct((d_attn.array() - attn.dot(d_attn)).matrix()) * scale;
  const Vector query = params.head.query_embedding.row(task.query_key).transpose();
  Matrix d_aligned = attn * d_pooled.transpose();
  d_aligned.noalias() += d_scores * query.transpose();
  grad.head.query_embedding.row(task.query_key) += (aligned.transpose() * d_scores).transpose();

  const SlotBackward sb =
      slot_backward(f.depth.out.anchors, f.width.plan.plan, params.slot, f.slot, d_aligned, grad.slot);
  Matrix d_anchors = sb.d_anchors;
  if (mode != f.width.mode) throw InvalidArgument("backward: allocation mode differs from forward pass");
  d_anchors += width_backward(f.depth.out.anchors, params.width, f.width, sb.d_plan, grad.width);
  depth_backward(h, params.depth, f.depth, d_anchors, grad.depth);

  for_each_tensor(grad, [](const std::string& name, const double* data, Eigen::Index n) {
    if (!Eigen::Map<const Vector>(data, n).allFinite())
      throw DivergenceError("backward: non-finite gradient in " + name);
  });
  return grad;
}

LossAndGrad loss_and_grad(const HiddenStates& h, const RetrievalTask& task, const ModuleParams& params,
                          Allocation mode, double loss_weight) {
  const ForwardPass f = forward(h, task, params, mode);
  LossAndGrad out;
  out.loss = f.head.loss;
  Eigen::Index best = 0;
  f.head.probs.maxCoeff(&best);
  out.correct = static_cast<std::uint32_t>(best) == task.answer_value;
  out.grad = backward(h, task, params, f, mode, loss_weight);
  return out;
}

}  // namespace cxit

#include "cxit/train.hpp"

#include <cmath>

#include "cxit/error.hpp"

namespace cxit {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw InvalidArgument("train: learning_rate must be non-negative");
  if (!(grad_clip_norm > 0.0)) throw InvalidArgument("train: grad_clip_norm must be positive");
  if (batch_size == 0) throw InvalidArgument("train: batch_size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw InvalidArgument("train: Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw InvalidArgument("train: adam_eps must be positive");
}

TrainState fresh_state(ModuleParams params) {
  const auto n = static_cast<Eigen::Index>(param_count(params));
  return {std::move(params), {Vector::Zero(n), Vector::Zero(n), 0}};
}

std::vector<Sample> encode_tasks(const SyntheticEncoder& encoder, const std::vector<RetrievalTask>& tasks) {
  std::vector<Sample> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back({encoder.encode(t.tokens), t});
  return out;
}

TaskStream synthetic_stream(const SyntheticEncoder& encoder, const TaskConfig& tasks, std::uint64_t seed,
                            std::size_t batch_size) {
  vocab_layout(tasks);
  const Rng root = Rng(seed).substream("train.tasks");
  return [&encoder, tasks, root, batch_size](std::size_t step) {
    Rng rng = root.substream(static_cast<std::uint64_t>(step));
    return encode_tasks(encoder, gen_retrieval_batch(rng, tasks, batch_size));
  };
}

TaskStream file_stream(const SyntheticEncoder& encoder, std::vector<RetrievalTask> tasks,
                       std::size_t batch_size) {
  if (tasks.empty()) throw InvalidArgument("file_stream: no tasks");
  return [&encoder, tasks = std::move(tasks), batch_size](std::size_t step) {
    std::vector<RetrievalTask> batch;
    for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(tasks[(step * batch_size + i) % tasks.size()]);
    return encode_tasks(encoder, batch);
  };
}

double clip_by_global_norm(Vector& g, double max_norm) {
  const double norm = g.norm();
  if (norm > max_norm) g *= max_norm / norm;
  return norm;
}

void adam_update(Vector& params, const Vector& grad, AdamState& s, const TrainConfig& cfg) {
  ++s.step;
  s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * grad;
  s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  const double step_size = cfg.learning_rate / bc1;
  params.array() -= step_size * s.m.array() / ((s.v.array() / bc2).sqrt() + cfg.adam_eps);
}

BatchResult batch_loss_and_grad(const std::vector<Sample>& batch, const ModuleParams& params, Allocation mode) {
  if (batch.empty()) throw InvalidArgument("batch_loss_and_grad: empty batch");
  BatchResult out;
  out.grad = Vector::Zero(static_cast<Eigen::Index>(param_count(params)));
  // Fixed index-order reduction keeps the sum bit-reproducible.
  for (const Sample& s : batch) {
    LossAndGrad lg = loss_and_grad(s.states, s.task, params, mode);
    out.loss += lg.loss;
    out.accuracy += lg.correct ? 1.0 : 0.0;
    out.grad += flatten(lg.grad);
  }
  const double n = static_cast<double>(batch.size());
  out.loss /= n;
  out.accuracy /= n;
  out.grad /= n;
  return out;
}

TrainResult train(const TrainConfig& cfg, const TaskStream& stream, TrainState state, Allocation mode,
                  const StepCallback& on_step) {
  cfg.validate();
  TrainResult result;
  Vector flat = flatten(state.params);
  const std::size_t first = state.adam.step;
  for (std::size_t step = first; step < first + cfg.steps; ++step) {
    try {
      BatchResult br = batch_loss_and_grad(stream(step), state.params, mode);
      if (!std::isfinite(br.loss) || !br.grad.allFinite())
        throw DivergenceError("non-finite loss or gradient");
      const double norm = clip_by_global_norm(br.grad, cfg.grad_clip_norm);
      Vector next = flat;
      AdamState next_adam = state.adam;
      adam_update(next, br.grad, next_adam, cfg);
      if (!next.allFinite()) throw DivergenceError("non-finite parameters after update");
      flat = std::move(next);
      state.adam = std::move(next_adam);
      unflatten(flat, state.params);
      const StepRecord rec{step, br.loss, norm};
      result.history.push_back(rec);
      if (on_step) on_step(rec);
    } catch (const DivergenceError& e) {
      result.diverged = true;
      result.error = "step " + std::to_string(step) + ": " + e.what();
      break;
    }
  }
  result.state = std::move(state);
  return result;
}

EvalResult evaluate(const std::vector<Sample>& samples, const ModuleParams& params, Allocation mode) {
  if (samples.empty()) throw InvalidArgument("evaluate: no samples");
  EvalResult out;
  for (const Sample& s : samples) {
    const ForwardPass f = forward(s.states, s.task, params, mode);
    out.loss += f.head.loss;
    Eigen::Index best = 0;
    f.head.probs.maxCoeff(&best);
    out.accuracy += static_cast<std::uint32_t>(best) == s.task.answer_value ? 1.0 : 0.0;
  }
  out.loss /= static_cast<double>(samples.size());
  out.accuracy /= static_cast<double>(samples.size());
  return out;
}

ModelConfig small_model_config() {
  ModelConfig c;
  c.num_layers = 3;
  c.hidden_dim = 8;
  c.gate_dim = 8;
  c.anchor_dim = 8;
  c.utility_dim = 8;
  c.mlp_hidden = 8;
  c.decoder_dim = 8;
  c.vocab_size = 10;
  c.segment_len = 16;
  c.ratio = 4;
  return c;
}

TaskConfig small_task_config() { return {16, 10, 2}; }

std::vector<GroupCheck> gradient_check(const HiddenStates& h, const RetrievalTask& task, const ModuleParams& params,
                                       Allocation mode, double step) {
  const Vector analytic = flatten(loss_and_grad(h, task, params, mode).grad);
  ModuleParams probe = params;
  const auto f = [&](const Vector& x) {
    unflatten(x, probe);
    return forward(h, task, probe, mode).head.loss;
  };
  const Vector numeric = finite_diff_gradient(f, flatten(params), step);
  std::vector<GroupCheck> out;
  for (const auto& g : param_groups(params)) {
    const auto off = static_cast<Eigen::Index>(g.offset);
    const auto n = static_cast<Eigen::Index>(g.size);
    GroupCheck c{g.name, 0.0, 0.0, 0.0};
    if (n > 0) {
      c.max_abs_error = (analytic.segment(off, n) - numeric.segment(off, n)).cwiseAbs().maxCoeff();
      c.scale = numeric.segment(off, n).cwiseAbs().maxCoeff();
    }
    c.relative_error = c.scale > 0.0 ? c.max_abs_error / c.scale : (c.max_abs_error > 0.0 ? 1.0 : 0.0);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace cxit

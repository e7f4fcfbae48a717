#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cxit/model.hpp"

namespace cxit {

struct TrainConfig {
  double learning_rate = 1e-4;
  double grad_clip_norm = 20.0;
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct AdamState {
  Vector m;
  Vector v;
  std::size_t step = 0;
};

// Everything needed to resume a run bit-exactly.
struct TrainState {
  ModuleParams params;
  AdamState adam;
};

TrainState fresh_state(ModuleParams params);

struct Sample {
  HiddenStates states;
  RetrievalTask task;
};

// Produces the batch for a given global step; must be a pure function of the step.
using TaskStream = std::function<std::vector<Sample>(std::size_t step)>;

// Fresh synthetic tasks per step, drawn from a per-step substream of `seed`.
TaskStream synthetic_stream(const SyntheticEncoder& encoder, const TaskConfig& tasks, std::uint64_t seed,
                            std::size_t batch_size);
// Cycles through a fixed task list in order.
TaskStream file_stream(const SyntheticEncoder& encoder, std::vector<RetrievalTask> tasks,
                       std::size_t batch_size);

std::vector<Sample> encode_tasks(const SyntheticEncoder& encoder, const std::vector<RetrievalTask>& tasks);

// Scales g in place so its norm is at most max_norm; returns the norm before clipping.
double clip_by_global_norm(Vector& g, double max_norm);

// One Adam update of `params` (flat) from an already-clipped gradient.
void adam_update(Vector& params, const Vector& grad, AdamState& state, const TrainConfig& cfg);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct BatchResult {
  double loss = 0.0;
  double accuracy = 0.0;
  Vector grad;  // mean over the batch, canonical order
};

BatchResult batch_loss_and_grad(const std::vector<Sample>& batch, const ModuleParams& params, Allocation mode);

struct TrainResult {
  TrainState state;  // last good state
  std::vector<StepRecord> history;
  bool diverged = false;
  std::string error;
};

using StepCallback = std::function<void(const StepRecord&)>;

// Runs cfg.steps steps starting at state.adam.step, clipping the batch
// gradient to grad_clip_norm before each Adam update.
TrainResult train(const TrainConfig& cfg, const TaskStream& stream, TrainState state, Allocation mode,
                  const StepCallback& on_step = {});

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate(const std::vector<Sample>& samples, const ModuleParams& params, Allocation mode);

// Dimensions used for finite-difference checks: L=3, N=16, d=8, d_a=d_u=p=m=8,
// T=16, r=4, vocab=10.
ModelConfig small_model_config();
TaskConfig small_task_config();

struct GroupCheck {
  std::string name;
  double max_abs_error = 0.0;
  double scale = 0.0;           // max |finite-difference gradient| in the group
  double relative_error = 0.0;  // max_abs_error / scale (0 when both vanish)
};

// Compares analytic gradients against central differences with step h.
std::vector<GroupCheck> gradient_check(const HiddenStates& h, const RetrievalTask& task, const ModuleParams& params,
                                       Allocation mode, double step = 1e-4);

}  // namespace cxit

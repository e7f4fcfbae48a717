#pragma once

#include <vector>

#include "cxit/config.hpp"
#include "cxit/train.hpp"

namespace cxit {

// Frozen encoder and held-out set shared by every variant of a run. All draws
// come from cfg.seed through labeled substreams.
class Experiment {
 public:
  explicit Experiment(RunConfig cfg);

  const RunConfig& config() const noexcept { return cfg_; }
  const SyntheticEncoder& encoder() const noexcept { return encoder_; }
  const std::vector<Sample>& heldout() const noexcept { return heldout_; }

  TaskStream train_stream() const;
  ModuleParams initial_params(Allocation mode) const;

 private:
  RunConfig cfg_;
  SyntheticEncoder encoder_;
  std::vector<Sample> heldout_;
};

std::vector<RetrievalTask> heldout_tasks(const RunConfig& cfg);

struct PlanStats {
  double mean_erank = 0.0;
  double mean_within_segment_corr = 0.0;  // mean |corr| between slots of one segment
  std::size_t sequences = 0;
};

// Plan statistics over the first `count` samples.
PlanStats plan_statistics(const std::vector<Sample>& samples, std::size_t count, const ModuleParams& params,
                          Allocation mode);

struct VariantRun {
  Allocation mode = Allocation::Transport;
  TrainResult train;
  EvalResult control;  // untrained parameters
  EvalResult heldout;  // trained parameters
  PlanStats plans;
};

VariantRun run_variant(const Experiment& exp, Allocation mode, const StepCallback& on_step = {});

}  // namespace cxit

#include "cxit/experiment.hpp"

#include <algorithm>

#include "cxit/diag.hpp"
#include "cxit/error.hpp"
#include "cxit/slots.hpp"

namespace cxit {

std::vector<RetrievalTask> heldout_tasks(const RunConfig& cfg) {
  Rng rng = Rng(cfg.seed).substream("eval.tasks");
  return gen_retrieval_batch(rng, cfg.tasks(), cfg.eval.heldout_tasks);
}

Experiment::Experiment(RunConfig cfg)
    : cfg_(std::move(cfg)),
      encoder_(cfg_.task.vocab_size, cfg_.encoder.num_layers, cfg_.encoder.hidden_dim, cfg_.seed) {
  cfg_.validate();
  heldout_ = encode_tasks(encoder_, heldout_tasks(cfg_));
}

TaskStream Experiment::train_stream() const {
  return synthetic_stream(encoder_, cfg_.tasks(), cfg_.seed, cfg_.train.batch_size);
}

ModuleParams Experiment::initial_params(Allocation mode) const {
  ModelConfig m = cfg_.model();
  m.allocation = mode;
  return init_module_params(m, cfg_.seed);
}

PlanStats plan_statistics(const std::vector<Sample>& samples, std::size_t count, const ModuleParams& params,
                          Allocation mode) {
  PlanStats out;
  const CompressionParams cp = params.compression();
  std::size_t with_pairs = 0;
  for (std::size_t i = 0; i < std::min(count, samples.size()); ++i) {
    const TransmissionPlan plan = compress(samples[i].states, cp, mode).plan;
    out.mean_erank += plan_spectrum(plan).erank;
    try {
      out.mean_within_segment_corr +=
          within_segment_mean_abs_correlation(plan_correlation(plan).values, plan.blocks);
      ++with_pairs;
    } catch (const DegenerateInput&) {
      // every segment holds a single slot
    }
    ++out.sequences;
  }
  if (out.sequences) out.mean_erank /= static_cast<double>(out.sequences);
  if (with_pairs) out.mean_within_segment_corr /= static_cast<double>(with_pairs);
  return out;
}

VariantRun run_variant(const Experiment& exp, Allocation mode, const StepCallback& on_step) {
  VariantRun run;
  run.mode = mode;
  const ModuleParams init = exp.initial_params(mode);
  run.control = evaluate(exp.heldout(), init, mode);
  run.train = train(exp.config().train, exp.train_stream(), fresh_state(init), mode, on_step);
  run.heldout = evaluate(exp.heldout(), run.train.state.params, mode);
  run.plans = plan_statistics(exp.heldout(), exp.config().eval.spectrum_sequences, run.train.state.params, mode);
  return run;
}

}  // namespace cxit

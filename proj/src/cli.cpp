#include "cxit/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>

#include "cxit/checkpoint.hpp"
#include "cxit/config.hpp"
#include "cxit/diag.hpp"
#include "cxit/error.hpp"
#include "cxit/experiment.hpp"
#include "cxit/slots.hpp"

namespace cxit {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::string> out, tasks, states, checkpoint, resume;
  std::optional<std::size_t> task_index;
  std::optional<std::uint64_t> seed;
  double tolerance = 1e-4;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("-c,--config", o.config_path, "JSON config file");
  sub->add_option("--set", o.sets, "override, section.key=value (repeatable)");
  sub->add_option("-o,--out", o.out, "output directory (io.out)");
  sub->add_option("--seed", o.seed, "top-level seed");
}

// defaults < config file < --set, in order < dedicated flags
RunConfig resolve(const Options& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  for (const auto& s : o.sets) apply_override(cfg, s);
  if (o.out) cfg.io.out = *o.out;
  if (o.tasks) cfg.io.tasks = *o.tasks;
  if (o.states) cfg.io.states = *o.states;
  if (o.checkpoint) cfg.io.checkpoint = *o.checkpoint;
  if (o.resume) cfg.io.resume = *o.resume;
  if (o.task_index) cfg.io.task_index = *o.task_index;
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

const std::string& require(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(key, "required by this command");
  return value;
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path dir = cfg.io.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), ec.message());
  const fs::path echo = dir / "config.resolved.json";
  std::ofstream f(echo, std::ios::trunc);
  if (!f) throw IoError(echo.string(), "cannot open for writing");
  f << to_json(cfg).dump(2) << '\n';
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(path.string(), "cannot open for writing");
  f << text;
  if (!f) throw IoError(path.string(), "write failed");
}

void write_loss_csv(const fs::path& path, const std::vector<StepRecord>& history) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(path.string(), "cannot open for writing");
  f.precision(17);
  f << "step,loss,grad_norm\n";
  for (const auto& r : history) f << r.step << ',' << r.loss << ',' << r.grad_norm << '\n';
}

Json eval_json(const EvalResult& e) { return {{"loss", e.loss}, {"accuracy", e.accuracy}}; }

// Loads the checkpoint named by io.checkpoint, or builds fresh parameters from the config.
Checkpoint model_source(const RunConfig& cfg) {
  if (!cfg.io.checkpoint.empty()) return load_checkpoint(cfg.io.checkpoint);
  Checkpoint c;
  c.model = cfg.model();
  c.seed = cfg.seed;
  c.state = fresh_state(init_module_params(c.model, cfg.seed));
  return c;
}

void check_states(const HiddenStates& h, const ModelConfig& m) {
  if (h.num_layers() != m.num_layers || h.hidden_dim() != m.hidden_dim)
    throw ConfigError("io.states", "hidden states are " + std::to_string(h.num_layers()) + "x" +
                                       std::to_string(h.hidden_dim()) + " (layers x dim) but the model expects " +
                                       std::to_string(m.num_layers) + "x" + std::to_string(m.hidden_dim));
}

void save_run_checkpoint(const fs::path& path, const RunConfig& cfg, const ModelConfig& model, TrainState& state) {
  snap_to_f32(state);
  save_checkpoint(path, {model, state, cfg.seed, to_json(cfg)});
}

int cmd_gen(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = prepare_out(cfg);
  Rng rng = Rng(cfg.seed).substream("gen");
  save_tasks(gen_retrieval_batch(rng, cfg.tasks(), cfg.task.count), dir / "tasks.jsonl");
  out << "wrote " << cfg.task.count << " tasks to " << (dir / "tasks.jsonl").string() << '\n';
  return kExitOk;
}

int cmd_encode(const RunConfig& cfg, std::ostream& out) {
  const auto tasks = load_tasks(require(cfg.io.tasks, "io.tasks"));
  if (cfg.io.task_index >= tasks.size())
    throw ConfigError("io.task_index", "index " + std::to_string(cfg.io.task_index) + " but the file holds " +
                                           std::to_string(tasks.size()) + " tasks");
  const SyntheticEncoder encoder(cfg.task.vocab_size, cfg.encoder.num_layers, cfg.encoder.hidden_dim, cfg.seed);
  const HiddenStates h = encoder.encode(tasks[cfg.io.task_index].tokens);
  const fs::path dir = prepare_out(cfg);
  save_states(h, dir / "states.hst");
  out << "wrote " << h.num_layers() << "x" << h.seq_len() << "x" << h.hidden_dim() << " states to "
      << (dir / "states.hst").string() << '\n';
  return kExitOk;
}

int cmd_compress(const RunConfig& cfg, std::ostream& out) {
  const HiddenStates h = load_states(require(cfg.io.states, "io.states"));
  const Checkpoint src = model_source(cfg);
  check_states(h, src.model);
  const CompressionResult r = compress(h, src.state.params.compression(), src.model.allocation);
  const fs::path dir = prepare_out(cfg);
  write_csv(r.slots.aligned, dir / "slots.csv");
  write_csv(r.plan.plan, dir / "plan.csv");
  write_text(dir / "plan.json", plan_to_json(r.plan).dump() + "\n");
  out << "compressed " << h.seq_len() << " tokens into " << r.slots.aligned.rows() << " slots\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const ModelConfig model = cfg.model();
  TrainState state;
  if (!cfg.io.resume.empty()) {
    Checkpoint ck = load_checkpoint(cfg.io.resume);
    if (model_to_json(ck.model) != model_to_json(model))
      throw ConfigError("io.resume", "checkpoint model does not match the configured model");
    state = std::move(ck.state);
  } else {
    state = fresh_state(init_module_params(model, cfg.seed));
  }
  const Experiment exp(cfg);
  const SyntheticEncoder& encoder = exp.encoder();
  const TaskStream stream = cfg.io.tasks.empty()
                                ? exp.train_stream()
                                : file_stream(encoder, load_tasks(cfg.io.tasks), cfg.train.batch_size);
  const fs::path dir = prepare_out(cfg);

  TrainResult r = train(cfg.train, stream, std::move(state), model.allocation, [&](const StepRecord& rec) {
    if ((rec.step + 1) % 100 == 0) out << "step " << rec.step + 1 << " loss " << rec.loss << '\n';
  });
  write_loss_csv(dir / "loss.csv", r.history);
  save_run_checkpoint(dir / "checkpoint.cxt", cfg, model, r.state);
  if (r.diverged) throw DivergenceError(r.error + " (last good state saved)");

  const EvalResult ev = evaluate(exp.heldout(), r.state.params, model.allocation);
  Json metrics = {{"steps", r.state.adam.step}, {"heldout", eval_json(ev)}};
  if (!r.history.empty())
    metrics["train"] = {{"first_loss", r.history.front().loss}, {"last_loss", r.history.back().loss}};
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  out << "held-out loss " << ev.loss << " accuracy " << ev.accuracy << '\n';
  return kExitOk;
}

int cmd_diag(const RunConfig& cfg, std::ostream& out) {
  const HiddenStates h = load_states(require(cfg.io.states, "io.states"));
  const Checkpoint src = model_source(cfg);
  check_states(h, src.model);
  const CompressionResult r = compress(h, src.state.params.compression(), src.model.allocation);

  DiagReport report;
  report.correlation = plan_correlation(r.plan);
  report.spectrum = plan_spectrum(r.plan);
  report.gate_heatmap = r.anchors.gates;
  report.meta = {{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}, {"config", to_json(cfg)}};
  if (!src.run_config.is_null()) report.meta["checkpoint_config"] = src.run_config;
  const fs::path dir = prepare_out(cfg);
  export_report(report, dir);
  out << "erank " << report.spectrum.erank << '\n';
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  const Experiment exp(cfg);
  const fs::path dir = prepare_out(cfg);
  std::ofstream csv(dir / "ablation.csv", std::ios::trunc);
  if (!csv) throw IoError((dir / "ablation.csv").string(), "cannot open for writing");
  csv.precision(17);
  csv << "variant,first_train_loss,last_train_loss,control_loss,control_accuracy,heldout_loss,heldout_accuracy,"
         "mean_erank,mean_within_segment_corr\n";
  for (const Allocation mode : {Allocation::Transport, Allocation::WindowAttention}) {
    const std::string name = allocation_name(mode);
    out << "training " << name << '\n';
    VariantRun v = run_variant(exp, mode);
    ModelConfig model = cfg.model();
    model.allocation = mode;
    write_loss_csv(dir / ("loss_" + name + ".csv"), v.train.history);
    save_run_checkpoint(dir / ("checkpoint_" + name + ".cxt"), cfg, model, v.train.state);
    if (v.train.diverged) throw DivergenceError(name + ": " + v.train.error);
    csv << name << ',' << v.train.history.front().loss << ',' << v.train.history.back().loss << ','
        << v.control.loss << ',' << v.control.accuracy << ',' << v.heldout.loss << ',' << v.heldout.accuracy << ','
        << v.plans.mean_erank << ',' << v.plans.mean_within_segment_corr << '\n';
    out << name << " held-out loss " << v.heldout.loss << " accuracy " << v.heldout.accuracy << '\n';
  }
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg, double tolerance, std::ostream& out, std::ostream& err) {
  const ModelConfig model = small_model_config();
  const TaskConfig tasks = small_task_config();
  const SyntheticEncoder encoder(tasks.vocab_size, model.num_layers, model.hidden_dim, cfg.seed);
  Rng rng = Rng(cfg.seed).substream("gradcheck");
  const RetrievalTask task = gen_retrieval_task(rng, tasks);
  const ModuleParams params = init_module_params(model, cfg.seed);
  const auto checks = gradient_check(encoder.encode(task.tokens), task, params, cfg.allocation());

  const fs::path dir = prepare_out(cfg);
  std::ofstream csv(dir / "gradcheck.csv", std::ios::trunc);
  if (!csv) throw IoError((dir / "gradcheck.csv").string(), "cannot open for writing");
  csv.precision(6);
  csv << std::scientific << "group,max_abs_error,scale,relative_error\n";
  double worst = 0.0;
  std::string worst_group;
  for (const auto& c : checks) {
    csv << c.name << ',' << c.max_abs_error << ',' << c.scale << ',' << c.relative_error << '\n';
    if (c.relative_error >= worst) {
      worst = c.relative_error;
      worst_group = c.name;
    }
  }
  out << "max relative error " << worst << " (" << worst_group << ")\n";
  if (worst > tolerance) {
    err << Json{{"error", "gradcheck"}, {"group", worst_group}, {"relative_error", worst}, {"tolerance", tolerance}}
               .dump()
        << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

void report(std::ostream& err, const char* kind, const std::string& message, const char* field = nullptr,
            const std::string& value = {}) {
  Json j = {{"error", kind}};
  if (field) j[field] = value;
  j["message"] = message;
  err << j.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Segmented optimal-transport context compression"};
  app.name("cxit");
  app.require_subcommand(1, 1);
  Options o;

  std::function<int(const RunConfig&)> action;
  auto sub = [&](const char* name, const char* help) {
    CLI::App* s = app.add_subcommand(name, help);
    add_common(s, o);
    return s;
  };
  CLI::App* gen = sub("gen", "generate synthetic retrieval tasks (JSONL)");
  CLI::App* encode = sub("encode", "encode one task into hidden states (.hst)");
  encode->add_option("--tasks", o.tasks, "task file (io.tasks)");
  encode->add_option("--index", o.task_index, "task to encode (io.task_index)");
  CLI::App* compress = sub("compress", "compress hidden states into slots");
  compress->add_option("--states", o.states, "hidden-state file (io.states)");
  compress->add_option("--checkpoint", o.checkpoint, "trained checkpoint (io.checkpoint)");
  CLI::App* trn = sub("train", "train the compressor on the retrieval task");
  trn->add_option("--tasks", o.tasks, "task file; synthetic stream when absent (io.tasks)");
  trn->add_option("--resume", o.resume, "checkpoint to continue from (io.resume)");
  CLI::App* diag = sub("diag", "export correlation, spectrum and gate diagnostics");
  diag->add_option("--states", o.states, "hidden-state file (io.states)");
  diag->add_option("--checkpoint", o.checkpoint, "trained checkpoint (io.checkpoint)");
  CLI::App* ablate = sub("ablate", "train transport and window-attention variants and compare");
  CLI::App* gradcheck = sub("gradcheck", "finite-difference gradient check on the small config");
  gradcheck->add_option("--tolerance", o.tolerance, "maximum relative error per group");

  gen->callback([&] { action = [&](const RunConfig& c) { return cmd_gen(c, out); }; });
  encode->callback([&] { action = [&](const RunConfig& c) { return cmd_encode(c, out); }; });
  compress->callback([&] { action = [&](const RunConfig& c) { return cmd_compress(c, out); }; });
  trn->callback([&] { action = [&](const RunConfig& c) { return cmd_train(c, out); }; });
  diag->callback([&] { action = [&](const RunConfig& c) { return cmd_diag(c, out); }; });
  ablate->callback([&] { action = [&](const RunConfig& c) { return cmd_ablate(c, out); }; });
  gradcheck->callback([&] { action = [&](const RunConfig& c) { return cmd_gradcheck(c, o.tolerance, out, err); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report(err, "usage", e.what());
    return kExitBadConfig;
  }

  try {
    return action(resolve(o));
  } catch (const ConfigError& e) {
    report(err, "config", e.what(), "key", e.key());
    return kExitBadConfig;
  } catch (const IoError& e) {
    report(err, "io", e.what(), "path", e.path());
    return kExitMissingFile;
  } catch (const DivergenceError& e) {
    report(err, "divergence", e.what());
    return kExitDiverged;
  } catch (const ParseError& e) {
    report(err, "parse", e.what(), "field", e.field());
    return kExitFailure;
  } catch (const std::exception& e) {
    report(err, "failure", e.what());
    return kExitFailure;
  }
}

}  // namespace cxit

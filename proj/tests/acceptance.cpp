// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "cxit/cli.hpp"
#include "cxit/diag.hpp"
#include "cxit/experiment.hpp"
#include "oracles.hpp"

using namespace cxit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Vector uniform(Eigen::Index n) { return Vector::Constant(n, 1.0 / double(n)); }

Outcome sinkhorn_feasibility() {
  Rng rng(101);
  double worst_row = 0, worst_col = 0;
  int over = 0;
  for (int s = 0; s < 200; ++s) {
    const oracle::Segment seg = oracle::random_segment(rng, 128, 32);
    const auto res = sinkhorn_plan(seg.cost, seg.rho, uniform(32), 0.05, 200);
    const double row = (res.plan.rowwise().sum() - seg.rho).cwiseAbs().maxCoeff();
    const double col = (res.plan.colwise().sum().transpose() - uniform(32)).cwiseAbs().maxCoeff();
    worst_row = std::max(worst_row, row);
    worst_col = std::max(worst_col, col);
    over += row > 1e-9;
  }
  return {worst_row <= 1e-9 && worst_col <= 1e-12,
          fmt("max row residual %.3g (%d/200 above 1e-9), max column error %.3g", worst_row, over, worst_col)};
}

Outcome constant_cost() {
  Rng rng(102);
  double worst = 0;
  for (int s = 0; s < 50; ++s) {
    const Eigen::Index n = 2 + Eigen::Index(rng.below(127)), k = 1 + Eigen::Index(rng.below(32));
    const Vector rho = softmax(gaussian_matrix(rng, n, 1, 2.0).col(0));
    const Matrix cost = Matrix::Constant(n, k, 2.0 * rng.uniform());
    const Matrix plan = sinkhorn_plan(cost, rho, uniform(k), 0.05, 30).plan;
    worst = std::max(worst, (plan - rho * uniform(k).transpose()).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-10, fmt("max |plan - outer(rho, 1/K)| = %.3g over 50 blocks", worst)};
}

Outcome two_by_two() {
  Matrix c(2, 2);
  c << 0, 1, 1, 0;
  const Vector half = uniform(2);
  const double a = oracle::kkt_bisection(2.0 / 0.5);
  const auto ref = oracle::reference_sinkhorn(c, half, half, 0.5L, 10000);
  const Matrix plan = sinkhorn_plan(c, half, half, 0.5, 30).plan;
  double vs_ref = 0, vs_kkt = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      vs_ref = std::max(vs_ref, std::abs(plan(i, j) - double(ref[i][j])));
      vs_kkt = std::max(vs_kkt, std::abs(plan(i, j) - (i == j ? a : 0.5 - a)));
    }
  return {vs_ref <= 1e-6 && vs_kkt <= 1e-6,
          fmt("cost [[0,1],[1,0]], eps 0.5: vs extended-precision Sinkhorn %.3g, vs KKT %.3g", vs_ref, vs_kkt)};
}

Outcome assignment_recovery() {
  Rng rng(104);
  int checked = 0;
  double worst = 1.0;
  while (checked < 100) {
    const int K = 2 + int(rng.below(5));
    const Matrix c = oracle::grid_cost(rng, K);
    const std::vector<int> best = oracle::unique_optimal_permutation(c);
    if (best.empty()) continue;
    ++checked;
    const Matrix plan = sinkhorn_plan(c, uniform(K), uniform(K), 1e-3, 2000).plan;
    double mass = 0;
    for (int i = 0; i < K; ++i) mass += plan(i, best[i]);
    worst = std::min(worst, mass);
  }
  return {worst >= 0.99, fmt("min mass on optimal permutation %.6f over %d instances, K in 2..6", worst, checked)};
}

Outcome gradients() {
  const ModelConfig model = small_model_config();
  const SyntheticEncoder enc(model.vocab_size, model.num_layers, model.hidden_dim, 105);
  const ModuleParams params = init_module_params(model, 105);
  Rng rng(105);
  double worst = 0;
  std::string worst_group;
  for (int s = 0; s < 3; ++s) {
    const auto task = gen_retrieval_task(rng, small_task_config());
    for (const auto& g : gradient_check(enc.encode(task.tokens), task, params, Allocation::Transport)) {
      if (g.relative_error >= worst) {
        worst = g.relative_error;
        worst_group = g.name;
      }
    }
  }
  return {worst <= 1e-4, fmt("max relative error %.3g (%s), 3 tasks, every group", worst, worst_group.c_str())};
}

struct Ablation {
  VariantRun transport, window;
};

Ablation run_ablation() {
  RunConfig cfg;
  cfg.width.segment_len = 64;
  cfg.eval.heldout_tasks = 500;
  cfg.eval.spectrum_sequences = 50;
  const Experiment exp(cfg);
  auto progress = [](const char* name) {
    return [name](const StepRecord& r) {
      if ((r.step + 1) % 500 == 0) std::cout << "  " << name << " step " << r.step + 1 << " loss " << r.loss << '\n';
    };
  };
  Ablation a;
  a.transport = run_variant(exp, Allocation::Transport, progress("transport"));
  a.window = run_variant(exp, Allocation::WindowAttention, progress("window"));
  return a;
}

Outcome learning_signal(const VariantRun& t) {
  const double first = t.train.history.front().loss;
  const double ratio = t.heldout.loss / t.control.loss;
  const double lift = t.heldout.accuracy - t.control.accuracy;
  return {!t.train.diverged && ratio <= 0.5 && lift >= 0.20,
          fmt("held-out loss %.4f vs %.4f at step 0 (ratio %.3f, need <= 0.5); first batch loss %.4f; "
              "accuracy %.3f vs control %.3f (lift %.1f pp, need >= 20)",
              t.heldout.loss, t.control.loss, ratio, first, t.heldout.accuracy, t.control.accuracy, 100 * lift)};
}

Outcome ablation_direction(const Ablation& a) {
  return {a.transport.heldout.loss <= a.window.heldout.loss,
          fmt("held-out loss transport %.5f, window %.5f", a.transport.heldout.loss, a.window.heldout.loss)};
}

Outcome spectrum_direction(const Ablation& a) {
  return {a.transport.plans.mean_erank > a.window.plans.mean_erank,
          fmt("mean erank over %zu sequences: transport %.3f, window %.3f", a.transport.plans.sequences,
              a.transport.plans.mean_erank, a.window.plans.mean_erank)};
}

Outcome correlation_instrument(const Ablation& a) {
  Rng rng(109);
  const Vector rho = softmax(gaussian_matrix(rng, 64, 1, 1.0).col(0));
  const Matrix degenerate = sinkhorn_plan(Matrix::Constant(64, 16, 0.5), rho, uniform(16), 0.05, 30).plan;
  const Matrix c = plan_correlation(degenerate).values;
  double off = 1.0;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      if (i != j) off = std::min(off, c(i, j));
  const double trained = a.transport.plans.mean_within_segment_corr;
  return {off >= 1.0 - 1e-9 && trained < off,
          fmt("constant-cost off-diagonal min %.12f; trained transport within-segment mean |corr| %.4f", off, trained)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  if (code) std::cout << "  cxit " << args[0] << " exited " << code << ": " << err.str();
  return code;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "cxit_acceptance";
  fs::remove_all(root);
  const std::string d = (root / "run").string();
  const std::vector<std::string> files{"checkpoint.cxt", "loss.csv", "slots.csv", "plan.csv", "plan.json"};
  auto once = [&] {
    if (cli({"gen", "-o", d, "--set", "task.count=4"}) || cli({"encode", "-o", d, "--tasks", d + "/tasks.jsonl"}) ||
        cli({"train", "-o", d, "--set", "train.steps=20"}) ||
        cli({"compress", "-o", d, "--states", d + "/states.hst", "--checkpoint", d + "/checkpoint.cxt"}))
      return std::vector<std::string>{};
    std::vector<std::string> bytes;
    for (const auto& f : files) bytes.push_back(slurp(root / "run" / f));
    return bytes;
  };
  const auto first = once();
  const auto second = once();
  if (first.empty() || second.empty()) return {false, "a CLI step failed"};
  std::string differing;
  for (std::size_t i = 0; i < files.size(); ++i)
    if (first[i] != second[i] || first[i].empty()) differing += " " + files[i];
  return {differing.empty(), differing.empty() ? "checkpoint, loss, slots and plan files identical across two runs"
                                               : "differs:" + differing};
}

Outcome shape_sweep() {
  Rng rng(111);
  std::size_t cases = 0;
  std::string failure;
  for (std::size_t T : {16, 64, 128})
    for (std::size_t r : {2, 4, 8}) {
      CompressionParams cp;
      cp.depth = init_depth_params({2, 8, 8, 8, false, 1.0}, rng);
      cp.width = init_width_params({8, 8, 0.05, T, 30, r}, rng);
      cp.slot = init_slot_params({8, 8, 8}, rng);
      for (std::size_t N = 16; N <= 512; ++N) {
        const HiddenStates h({gaussian_matrix(rng, Eigen::Index(N), 8, 1.0), gaussian_matrix(rng, Eigen::Index(N), 8, 1.0)});
        const CompressionResult res = compress(h, cp);
        std::size_t K = 0;
        for (std::size_t s = 0; s < N; s += T) K += (std::min(T, N - s) + r - 1) / r;
        Matrix outside = res.plan.plan;
        for (const auto& b : res.plan.blocks)
          outside.block(Eigen::Index(b.token_begin), Eigen::Index(b.slot_begin), Eigen::Index(b.tokens()),
                        Eigen::Index(b.slots()))
              .setZero();
        ++cases;
        if (failure.empty() && (std::size_t(res.slots.aligned.rows()) != K || std::size_t(res.plan.plan.cols()) != K ||
                                outside.cwiseAbs().maxCoeff() != 0.0 || res.plan.plan.minCoeff() < 0.0))
          failure = fmt("N=%zu T=%zu r=%zu: %ld slots, expected %zu", N, T, r, long(res.slots.aligned.rows()), K);
      }
    }
  return {failure.empty(), failure.empty() ? fmt("%zu (N, T, r) cases, slot counts and block support exact", cases)
                                           : failure};
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    const auto t0 = clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << o.detail << " (" << fmt("%.1f", secs)
              << " s)" << std::endl;
  };

  report(1, "sinkhorn feasibility", sinkhorn_feasibility);
  report(2, "constant-cost closed form", constant_cost);
  report(3, "2x2 entropic oracle", two_by_two);
  report(4, "small-epsilon assignment recovery", assignment_recovery);
  report(5, "gradient correctness", gradients);

  std::cout << "training transport and window variants (2000 steps each)" << std::endl;
  const auto t0 = clock::now();
  Ablation ablation;
  bool trained = true;
  try {
    ablation = run_ablation();
  } catch (const std::exception& e) {
    std::cout << "  ablation failed: " << e.what() << '\n';
    trained = false;
  }
  std::cout << fmt("  training took %.1f s", std::chrono::duration<double>(clock::now() - t0).count()) << std::endl;
  auto trained_only = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!trained) return {false, "training failed"};
      return fn(ablation);
    };
  };
  report(6, "learning signal", trained_only([](const Ablation& a) { return learning_signal(a.transport); }));
  report(7, "ablation direction", trained_only(ablation_direction));
  report(8, "spectrum direction", trained_only(spectrum_direction));
  report(9, "correlation instrument", trained_only(correlation_instrument));
  report(10, "determinism", determinism);
  report(11, "shape contract sweep", shape_sweep);

  std::cout << (11 - failed) << "/11 criteria passed" << std::endl;
  return failed ? 1 : 0;
}

#include "nesyarith/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "nesyarith/evalharness.hpp"
#include "nesyarith/neural/checkpoint.hpp"
#include "nesyarith/neural/inference.hpp"

namespace nesyarith {

namespace {

std::vector<Example> pool_for_task(std::vector<Example> pool, Task task) {
  if (task == Task::SubExpr) return pool;
  for (Example& ex : pool) ex = make_example(parse(ex.input_text), task, Split::Train);
  return pool;
}

struct Validation {
  double seq_acc = 0.0;
  double char_acc = 0.0;
};

Validation validate(const neural::Transformer<float>& model, const neural::ModelParams& params,
                    std::span<const Example> examples, std::uint64_t seed) {
  std::vector<std::string> inputs;
  for (const Example& ex : examples) inputs.push_back(ex.input_text);
  Rng rng = stream(seed, "val-positions");
  const auto outputs = neural::generate_batch(model, params, inputs, {}, rng);
  Validation v;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    v.seq_acc += seq_accuracy(outputs[i], examples[i].target_text);
    v.char_acc += char_accuracy(outputs[i], examples[i].target_text);
  }
  v.seq_acc *= 100.0 / static_cast<double>(examples.size());
  v.char_acc *= 100.0 / static_cast<double>(examples.size());
  return v;
}

std::string fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

}  // namespace

TrainSummary run_training(const RunConfig& cfg, Task task, const std::filesystem::path& run_dir,
                          std::ostream& progress) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  const auto& tc = cfg.train;
  const std::uint64_t seed = tc.seed;

  TrainSummary summary;
  summary.checkpoint = tc.checkpoint_path.empty() ? run_dir / "model.ckpt" : fs::path(tc.checkpoint_path);
  if (summary.checkpoint.has_parent_path()) fs::create_directories(summary.checkpoint.parent_path());

  const neural::Transformer<float> model(cfg.model);
  Rng init_rng = stream(seed, "model-init");
  neural::ModelParams params = neural::init_params(cfg.model, init_rng);
  neural::AdamState adam = neural::AdamState::for_model(cfg.model, tc.lr);

  const GenConfig gen = cfg.data.gen();
  std::unordered_set<std::string> reserved;
  Rng pool_rng = stream(seed, "pool");
  const std::vector<Example> pool =
      pool_for_task(build_training_pool(pool_rng, cfg.data.pool_roots, reserved, gen), task);

  BatchRequest train_req;
  train_req.task = task;
  train_req.nesting_set = cfg.data.train_nesting;
  train_req.split = Split::Train;
  train_req.ratios = cfg.data.ratios;
  train_req.gen = gen;

  BatchRequest val_req = train_req;
  val_req.split = Split::Val;
  val_req.batch_size = tc.val_batch_size;
  std::vector<Example> val_set;
  if (cfg.data.ratios.val > 0) {
    Rng val_rng = stream(seed, "val-data");
    val_set = sample_batch(val_rng, val_req, reserved);
  }

  const int from_pool =
      pool.empty() ? 0 : static_cast<int>(std::lround(tc.batch_size * cfg.data.pool_fraction));
  train_req.batch_size = tc.batch_size - from_pool;

  Rng data_rng = stream(seed, "data");
  Rng pe_rng = stream(seed, "label-pe");
  Rng dropout_rng = stream(seed, "dropout");

  std::ofstream loss_csv(run_dir / "loss.csv");
  loss_csv << "step,loss,window_mean\n";
  std::ofstream val_csv(run_dir / "validation.csv");
  val_csv << "step,seq_acc,char_acc\n";

  auto run_validation = [&](long step) {
    if (val_set.empty()) return;
    const Validation v = validate(model, params, val_set, seed);
    summary.final_val_seq_acc = v.seq_acc;
    val_csv << step << ',' << fixed(v.seq_acc, 2) << ',' << fixed(v.char_acc, 2) << '\n' << std::flush;
    progress << "step " << step << " validation seq_acc " << fixed(v.seq_acc, 2) << "% char_acc "
             << fixed(v.char_acc, 2) << "%\n" << std::flush;
  };

  const auto started = std::chrono::steady_clock::now();
  double window = 0.0;
  long window_steps = 0;
  std::uniform_int_distribution<std::size_t> pick(0, pool.empty() ? 0 : pool.size() - 1);
  for (long step = 1; step <= tc.steps; ++step) {
    std::vector<Example> batch = train_req.batch_size > 0 ? sample_batch(data_rng, train_req, reserved)
                                                          : std::vector<Example>{};
    for (int i = 0; i < from_pool; ++i) batch.push_back(pool[pick(data_rng)]);

    neural::StepResult result;
    try {
      result = neural::training_step(model, params, adam, batch, tc.regime, pe_rng,
                                     cfg.model.dropout > 0.0 ? &dropout_rng : nullptr);
    } catch (const neural::NonFiniteLoss& e) {
      throw TrainingAborted("non-finite loss at step " + std::to_string(step) + " (example '" +
                                batch[e.example()].input_text + "')",
                            step);
    }
    summary.steps = step;
    summary.final_loss = result.loss;
    window += result.loss;
    ++window_steps;

    if (step % tc.log_every == 0) {
      const double mean = window / static_cast<double>(window_steps);
      loss_csv << step << ',' << fixed(result.loss, 6) << ',' << fixed(mean, 6) << '\n' << std::flush;
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      progress << "step " << step << " loss " << fixed(mean, 4) << " (" << fixed(secs / step, 3)
               << " s/step)\n" << std::flush;
      window = 0.0;
      window_steps = 0;
    }
    if (step % tc.val_every == 0) run_validation(step);
    if (step % tc.checkpoint_every == 0) neural::save_checkpoint(params, cfg.model, summary.checkpoint);
  }
  if (tc.steps == 0 || tc.steps % tc.val_every != 0) run_validation(tc.steps);
  neural::save_checkpoint(params, cfg.model, summary.checkpoint);
  return summary;
}

}  // namespace nesyarith

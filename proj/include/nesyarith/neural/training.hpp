#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "nesyarith/datagen.hpp"
#include "nesyarith/neural/transformer.hpp"

namespace nesyarith::neural {

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, std::size_t example)
      : std::runtime_error(what), example_(example) {}
  std::size_t example() const { return example_; }

 private:
  std::size_t example_;
};

struct AdamState {
  long step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  BasicParams<double> m, v;

  static AdamState for_model(const ModelConfig& cfg, double lr = 1e-4);
};

/// One bias-corrected Adam update of `params` from `grads`.
void adam_update(ModelParams& params, const ModelParams& grads, AdamState& state);

enum class Regime {
  Autoregressive,  // decoder consumes its own greedy tokens
  TeacherForced,   // decoder consumes the target prefix
};

struct StepResult {
  double loss = 0.0;
  long tokens = 0;
};

/// Decoder inputs and targets for one batch. Targets are the target tokens
/// followed by EOS; inputs start with SOS and continue with either the target
/// prefix or the model's own greedy choices, one per target step.
struct PreparedBatch {
  SeqBatch seqs;
  std::vector<std::vector<int>> targets;
};

PreparedBatch prepare_batch(const Transformer<float>& model, const ModelParams& params,
                            std::span<const Example> examples, Regime regime, Rng& position_rng);

/// Forward, backward and one Adam step. Throws NonFiniteLoss (leaving
/// params and state untouched) when any example's loss is not finite.
StepResult training_step(const Transformer<float>& model, ModelParams& params, AdamState& adam,
                         std::span<const Example> examples, Regime regime, Rng& position_rng,
                         Rng* dropout_rng = nullptr);

struct GradCheckOptions {
  int samples = 200;        // coordinates compared
  double step = 1e-3;       // central-difference step
  bool corrupt = false;     // perturb one analytic gradient (negative control)
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int compared = 0;
  int skipped_kinks = 0;  // coordinates redrawn because a ReLU changed state
};

/// Teacher-forced loss of a small model in double precision: analytic
/// gradients against central finite differences on random coordinates.
GradCheckResult gradient_check(const ModelConfig& cfg, Rng& rng, GradCheckOptions opt = {});

}  // namespace nesyarith::neural

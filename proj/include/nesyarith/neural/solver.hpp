#pragma once

#include <memory>

#include "nesyarith/evalharness.hpp"
#include "nesyarith/hybrid.hpp"
#include "nesyarith/neural/inference.hpp"

namespace nesyarith::neural {

/// Trained model behind the SolverPort interface: N sampled decodings.
class NeuralSolver : public SolverPort {
 public:
  NeuralSolver(ModelParams params, const ModelConfig& cfg, double temperature = 1.0);

  std::vector<std::string> propose(const std::string& input_text, int n, Rng& rng) const override;

  const Transformer<float>& model() const { return model_; }
  const ModelParams& params() const { return params_; }

 private:
  Transformer<float> model_;
  ModelParams params_;
  double temperature_;
};

/// One greedy decoding per input; never halts.
BatchPredictor greedy_predictor(std::shared_ptr<const NeuralSolver> solver);

/// N sampled decodings per input, reduced to the candidate the default
/// combiner would pick; halted when none is usable.
BatchPredictor multi_predictor(std::shared_ptr<const NeuralSolver> solver, int n);

}  // namespace nesyarith::neural

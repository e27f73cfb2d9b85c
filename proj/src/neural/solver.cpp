#include "nesyarith/neural/solver.hpp"

namespace nesyarith::neural {

NeuralSolver::NeuralSolver(ModelParams params, const ModelConfig& cfg, double temperature)
    : model_(cfg), params_(std::move(params)), temperature_(temperature) {}

std::vector<std::string> NeuralSolver::propose(const std::string& input_text, int n,
                                               Rng& rng) const {
  return generate_multi(model_, params_, input_text, n, rng, temperature_);
}

BatchPredictor greedy_predictor(std::shared_ptr<const NeuralSolver> solver) {
  return [solver](std::span<const std::string> inputs, Rng& rng) {
    const auto texts = generate_batch(solver->model(), solver->params(), inputs,
                                      DecodeOptions{DecodeMode::Greedy, 1.0}, rng);
    return std::vector<std::optional<std::string>>(texts.begin(), texts.end());
  };
}

BatchPredictor multi_predictor(std::shared_ptr<const NeuralSolver> solver, int n) {
  return [solver, n](std::span<const std::string> inputs, Rng& rng) {
    std::vector<std::optional<std::string>> out;
    for (const std::string& input : inputs) {
      const CombineOutcome c = combine_default(input, solver->propose(input, n, rng));
      out.push_back(c.halted() ? std::nullopt : std::optional(c.chosen->raw));
    }
    return out;
  };
}

}  // namespace nesyarith::neural

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nesyarith/combiner.hpp"
#include "nesyarith/rng.hpp"

namespace nesyarith {

class MalformedInitialInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Anything that maps an expression to N candidate "result_target" strings.
class SolverPort {
 public:
  virtual ~SolverPort() = default;
  virtual std::vector<std::string> propose(const std::string& input_text, int n,
                                           Rng& rng) const = 0;
};

struct OracleErrorModel {
  double p_malformed = 0.0;
  double p_wrong_result = 0.0;
  double p_wrong_target = 0.0;
  int result_noise_range = 3;

  void validate() const;
};

/// Exact "result_target" answers, independently corrupted per candidate.
std::vector<std::string> oracle_solve(const std::string& input_text, int n, Rng& rng,
                                      const OracleErrorModel& model);

class OracleSolver : public SolverPort {
 public:
  explicit OracleSolver(OracleErrorModel model = {}) : model_(model) { model_.validate(); }
  std::vector<std::string> propose(const std::string& input_text, int n, Rng& rng) const override {
    return oracle_solve(input_text, n, rng, model_);
  }

 private:
  OracleErrorModel model_;
};

struct HybridStep {
  std::string input_text;
  int n_wellformed = 0;
  std::optional<SolverCandidate> chosen;
  std::optional<std::string> output_text;
};

enum class OutcomeKind { Solved, Halted, IterationCapHit };

struct HybridTrace {
  std::vector<HybridStep> steps;
  OutcomeKind outcome = OutcomeKind::Solved;
  std::int64_t value = 0;                    // when Solved
  HaltReason halt_reason = HaltReason::NoWellFormed;  // when Halted
  int iterations = 0;                        // combiner applications

  bool solved() const { return outcome == OutcomeKind::Solved; }
  bool halted() const { return outcome == OutcomeKind::Halted; }
};

struct HybridOptions {
  CombinerVariant variant = CombinerVariant::Default;
  int n_outputs = 100;
  std::optional<int> max_iters;  // default: operation count + 2
  bool record_steps = true;
};

/// Applies combiner(solver(e)) until the text is a bare integer, the
/// combiner halts, or the iteration cap is reached.
HybridTrace run_hybrid(const SolverPort& solver, const std::string& expr_text,
                       const HybridOptions& opt, Rng& rng);

nlohmann::json to_json(const HybridTrace& trace);

}  // namespace nesyarith

#include "nesyarith/hybrid.hpp"

#include <charconv>

#include "nesyarith/datagen.hpp"
#include "nesyarith/expr.hpp"

namespace nesyarith {

void OracleErrorModel::validate() const {
  for (double p : {p_malformed, p_wrong_result, p_wrong_target})
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("oracle probabilities must be in [0, 1]");
  if (result_noise_range < 1) throw std::invalid_argument("result_noise_range must be >= 1");
}

namespace {

std::string random_operation(Rng& rng) {
  std::uniform_int_distribution<int> operand(0, 99);
  static constexpr char kOps[] = {'+', '-', '*'};
  std::uniform_int_distribution<int> op(0, 2);
  const int a = operand(rng);
  const char o = kOps[op(rng)];
  return "(" + std::to_string(a) + o + std::to_string(operand(rng)) + ")";
}

}  // namespace

std::vector<std::string> oracle_solve(const std::string& input_text, int n, Rng& rng,
                                      const OracleErrorModel& model) {
  const InnermostRef truth = innermost(parse(input_text, ParseMode::Permissive));
  std::bernoulli_distribution wrong_result(model.p_wrong_result);
  std::bernoulli_distribution wrong_target(model.p_wrong_target);
  std::bernoulli_distribution malformed(model.p_malformed);
  std::uniform_int_distribution<int> offset(1, model.result_noise_range);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> symbol(0, 15);

  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::int64_t result = truth.result;
    if (wrong_result(rng)) result += coin(rng) ? offset(rng) : -offset(rng);
    std::string target = truth.subexpr_text;
    if (wrong_target(rng)) {
      do target = random_operation(rng);
      while (input_text.find(target) != std::string::npos);
    }
    std::string candidate = std::to_string(result) + "_" + target;
    if (malformed(rng)) {
      if (coin(rng))
        candidate.erase(candidate.find('_'), 1);
      else
        candidate += Vocab::symbol(symbol(rng));
    }
    out.push_back(std::move(candidate));
  }
  return out;
}

HybridTrace run_hybrid(const SolverPort& solver, const std::string& expr_text,
                       const HybridOptions& opt, Rng& rng) {
  if (opt.n_outputs < 1) throw std::invalid_argument("n_outputs must be >= 1");
  int ops = 0;
  try {
    ops = operation_count(parse(expr_text, ParseMode::Permissive));
  } catch (const ExprError& e) {
    throw MalformedInitialInput("initial expression '" + expr_text + "' is malformed: " + e.what());
  }
  const int max_iters = opt.max_iters.value_or(ops + 2);
  if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");

  HybridTrace trace;
  std::string current = expr_text;
  while (true) {
    if (is_integer_literal(current)) {
      trace.outcome = OutcomeKind::Solved;
      std::from_chars(current.data(), current.data() + current.size(), trace.value);
      return trace;
    }
    if (trace.iterations == max_iters) {
      trace.outcome = OutcomeKind::IterationCapHit;
      return trace;
    }
    const std::vector<std::string> candidates = solver.propose(current, opt.n_outputs, rng);
    if (static_cast<int>(candidates.size()) != opt.n_outputs)
      throw std::logic_error("solver returned a wrong number of candidates");
    CombineOutcome step = combine(opt.variant, current, candidates);
    ++trace.iterations;
    if (opt.record_steps)
      trace.steps.push_back({current, step.n_wellformed, step.chosen, step.next});
    if (step.halted()) {
      trace.outcome = OutcomeKind::Halted;
      trace.halt_reason = step.reason;
      return trace;
    }
    current = std::move(*step.next);
  }
}

nlohmann::json to_json(const HybridTrace& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const HybridStep& s : trace.steps) {
    nlohmann::json j{{"input_text", s.input_text}, {"n_wellformed", s.n_wellformed}};
    j["chosen"] = s.chosen ? nlohmann::json(s.chosen->raw) : nlohmann::json(nullptr);
    j["output_text"] = s.output_text ? nlohmann::json(*s.output_text) : nlohmann::json(nullptr);
    steps.push_back(std::move(j));
  }
  nlohmann::json outcome;
  switch (trace.outcome) {
    case OutcomeKind::Solved: outcome = {{"kind", "solved"}, {"value", trace.value}}; break;
    case OutcomeKind::Halted:
      outcome = {{"kind", "halted"}, {"reason", std::string(to_string(trace.halt_reason))}};
      break;
    case OutcomeKind::IterationCapHit: outcome = {{"kind", "iteration_cap_hit"}}; break;
  }
  return {{"steps", steps}, {"outcome", outcome}, {"iterations", trace.iterations}};
}

}  // namespace nesyarith

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nesyarith {

struct ParsedCandidate {
  std::string result_text;  // replacement candidate
  std::string target_text;  // replacement target, "(a op b)"
};

struct SolverCandidate {
  std::string raw;
  std::optional<ParsedCandidate> parsed;  // set iff raw is well-formed

  bool well_formed() const { return parsed.has_value(); }
};

/// Well-formed iff raw is exactly INT "_" "(" INT OP INT ")" with
/// INT := "-"? digit{1,3} and OP one of + - *.
SolverCandidate parse_candidate(std::string_view raw);

enum class HaltReason { NoWellFormed, ModalIllFormed, TargetAbsent };
std::string_view to_string(HaltReason r);

enum class CombinerVariant {
  Default,  // filter, then vote
  Alt,      // vote, then filter
};
std::string_view to_string(CombinerVariant v);
CombinerVariant combiner_variant_from_string(std::string_view s);

struct CombineOutcome {
  std::optional<std::string> next;  // set unless halted
  HaltReason reason = HaltReason::NoWellFormed;
  std::optional<SolverCandidate> chosen;
  int n_wellformed = 0;

  bool halted() const { return !next.has_value(); }
};

/// Keeps well-formed candidates whose target occurs in `input`, picks the
/// most frequent raw string (ties: lexicographically smallest) and
/// substitutes its target by its result.
CombineOutcome combine_default(std::string_view input, std::span<const std::string> candidates);

/// Picks the most frequent raw string over all candidates first; halts if
/// that choice is ill-formed or its target is absent.
CombineOutcome combine_alt(std::string_view input, std::span<const std::string> candidates);

CombineOutcome combine(CombinerVariant variant, std::string_view input,
                       std::span<const std::string> candidates);

/// Most frequent string, ties broken by lexicographic order. Empty input
/// yields nullopt.
std::optional<std::string> modal_string(std::span<const std::string> values);

}  // namespace nesyarith

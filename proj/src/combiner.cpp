#include "nesyarith/combiner.hpp"

#include <map>
#include <stdexcept>

#include "nesyarith/expr.hpp"

namespace nesyarith {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Consumes "-"? digit{1,3} at `pos`.
bool scan_int(std::string_view s, std::size_t& pos) {
  std::size_t p = pos;
  if (p < s.size() && s[p] == '-') ++p;
  const std::size_t digits = p;
  while (p < s.size() && is_digit(s[p]) && p - digits < 3) ++p;
  if (p == digits || (p < s.size() && is_digit(s[p]))) return false;
  pos = p;
  return true;
}

bool expect(std::string_view s, std::size_t& pos, char c) {
  if (pos >= s.size() || s[pos] != c) return false;
  ++pos;
  return true;
}

}  // namespace

SolverCandidate parse_candidate(std::string_view raw) {
  SolverCandidate c{std::string(raw), std::nullopt};
  std::size_t pos = 0;
  if (!scan_int(raw, pos)) return c;
  const std::size_t result_end = pos;
  if (!expect(raw, pos, '_')) return c;
  const std::size_t target_begin = pos;
  if (!expect(raw, pos, '(') || !scan_int(raw, pos)) return c;
  if (pos >= raw.size() || (raw[pos] != '+' && raw[pos] != '-' && raw[pos] != '*')) return c;
  ++pos;
  if (!scan_int(raw, pos) || !expect(raw, pos, ')') || pos != raw.size()) return c;
  c.parsed = ParsedCandidate{std::string(raw.substr(0, result_end)),
                             std::string(raw.substr(target_begin))};
  return c;
}

std::string_view to_string(HaltReason r) {
  switch (r) {
    case HaltReason::NoWellFormed: return "no_well_formed";
    case HaltReason::ModalIllFormed: return "modal_ill_formed";
    case HaltReason::TargetAbsent: return "target_absent";
  }
  return "?";
}

std::string_view to_string(CombinerVariant v) {
  return v == CombinerVariant::Default ? "default" : "alt";
}

CombinerVariant combiner_variant_from_string(std::string_view s) {
  if (s == "default") return CombinerVariant::Default;
  if (s == "alt") return CombinerVariant::Alt;
  throw std::invalid_argument("unknown combiner variant '" + std::string(s) + "'");
}

std::optional<std::string> modal_string(std::span<const std::string> values) {
  std::map<std::string_view, int> counts;
  for (const auto& v : values) ++counts[v];
  std::optional<std::string> best;
  int best_count = 0;
  for (const auto& [value, count] : counts) {
    if (count > best_count) {
      best = std::string(value);
      best_count = count;
    }
  }
  return best;
}

CombineOutcome combine_default(std::string_view input, std::span<const std::string> candidates) {
  if (candidates.empty()) throw std::invalid_argument("combiner needs at least one candidate");
  CombineOutcome out;
  std::vector<std::string> usable;
  for (const auto& raw : candidates) {
    SolverCandidate c = parse_candidate(raw);
    if (!c.well_formed()) continue;
    ++out.n_wellformed;
    if (input.find(c.parsed->target_text) != std::string_view::npos) usable.push_back(raw);
  }
  const auto mode = modal_string(usable);
  if (!mode) {
    out.reason = HaltReason::NoWellFormed;
    return out;
  }
  out.chosen = parse_candidate(*mode);
  out.next = substitute_once(input, out.chosen->parsed->target_text, out.chosen->parsed->result_text);
  return out;
}

CombineOutcome combine_alt(std::string_view input, std::span<const std::string> candidates) {
  if (candidates.empty()) throw std::invalid_argument("combiner needs at least one candidate");
  CombineOutcome out;
  for (const auto& raw : candidates)
    if (parse_candidate(raw).well_formed()) ++out.n_wellformed;
  out.chosen = parse_candidate(*modal_string(candidates));
  if (!out.chosen->well_formed()) {
    out.reason = HaltReason::ModalIllFormed;
    return out;
  }
  if (input.find(out.chosen->parsed->target_text) == std::string_view::npos) {
    out.reason = HaltReason::TargetAbsent;
    return out;
  }
  out.next = substitute_once(input, out.chosen->parsed->target_text, out.chosen->parsed->result_text);
  return out;
}

CombineOutcome combine(CombinerVariant variant, std::string_view input,
                       std::span<const std::string> candidates) {
  return variant == CombinerVariant::Default ? combine_default(input, candidates)
                                             : combine_alt(input, candidates);
}

}  // namespace nesyarith

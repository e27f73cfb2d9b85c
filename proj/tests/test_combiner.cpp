#include <doctest.h>

#include <algorithm>
#include <map>
#include <regex>

#include "nesyarith/combiner.hpp"
#include "nesyarith/expr.hpp"
#include "nesyarith/rng.hpp"

using namespace nesyarith;

namespace {

std::vector<std::string> repeat(const std::string& s, int n) { return std::vector<std::string>(n, s); }

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Independent oracle built on std::regex and plain counting.
const std::regex kGrammar(R"(^(-?[0-9]{1,3})_(\(-?[0-9]{1,3}[-+*]-?[0-9]{1,3}\))$)");

struct Expected {
  bool halted = false;
  std::string next;
  HaltReason reason = HaltReason::NoWellFormed;
};

std::string apply_choice(const std::string& input, const std::string& raw) {
  std::smatch m;
  std::regex_match(raw, m, kGrammar);
  const std::string target = m[2];
  const auto at = input.find(target);
  return input.substr(0, at) + std::string(m[1]) + input.substr(at + target.size());
}

std::string mode_of(const std::vector<std::string>& values) {
  std::string best;
  int best_count = -1;
  for (const auto& v : values) {
    const int c = static_cast<int>(std::count(values.begin(), values.end(), v));
    if (c > best_count || (c == best_count && v < best)) {
      best = v;
      best_count = c;
    }
  }
  return best;
}

bool usable(const std::string& input, const std::string& raw) {
  std::smatch m;
  return std::regex_match(raw, m, kGrammar) && input.find(m[2]) != std::string::npos;
}

Expected oracle_default(const std::string& input, const std::vector<std::string>& cands) {
  std::vector<std::string> keep;
  for (const auto& c : cands)
    if (usable(input, c)) keep.push_back(c);
  if (keep.empty()) return {true, "", HaltReason::NoWellFormed};
  return {false, apply_choice(input, mode_of(keep)), {}};
}

Expected oracle_alt(const std::string& input, const std::vector<std::string>& cands) {
  const std::string m = mode_of(cands);
  if (!std::regex_match(m, kGrammar)) return {true, "", HaltReason::ModalIllFormed};
  if (!usable(input, m)) return {true, "", HaltReason::TargetAbsent};
  return {false, apply_choice(input, m), {}};
}

void check_against(const CombineOutcome& got, const Expected& want) {
  REQUIRE(got.halted() == want.halted);
  if (want.halted)
    CHECK(got.reason == want.reason);
  else
    CHECK(*got.next == want.next);
}

}  // namespace

TEST_CASE("parse_candidate") {
  const auto ok = parse_candidate("15_(21-6)");
  REQUIRE(ok.well_formed());
  CHECK(ok.parsed->result_text == "15");
  CHECK(ok.parsed->target_text == "(21-6)");
  CHECK_FALSE(parse_candidate("15(21-6)").well_formed());
  CHECK_FALSE(parse_candidate("6_(3*2)x").well_formed());
  CHECK(parse_candidate("-100_(-5*20)").well_formed());
  for (const char* bad : {"", "_", "1_", "1_()", "1000_(1+2)", "1_(1+2", "1_(1++2)", "1_((1+2))",
                          "1_(1+2)(", "--1_(1+2)", "1_(1000+2)", "1__(1+2)", " 1_(1+2)", "1_(1/2)"}) {
    CAPTURE(bad);
    CHECK_FALSE(parse_candidate(bad).well_formed());
  }
}

TEST_CASE("combine_default examples") {
  const std::string in = "((21-6)*2)";
  auto out = combine_default(in, repeat("15_(21-6)", 100));
  REQUIRE_FALSE(out.halted());
  CHECK(*out.next == "(15*2)");
  CHECK(out.n_wellformed == 100);

  out = combine_default(in, repeat("garbage", 100));
  CHECK(out.halted());
  CHECK(out.reason == HaltReason::NoWellFormed);
  CHECK(out.n_wellformed == 0);

  out = combine_default(in, concat(repeat("15_(21-6)", 40), repeat("14_(21-6)", 60)));
  CHECK(*out.next == "(14*2)");

  // Well-formed but absent targets are filtered before the vote.
  out = combine_default(in, concat(repeat("3_(1+2)", 60), repeat("15_(21-6)", 40)));
  CHECK(*out.next == "(15*2)");
  CHECK_THROWS(combine_default(in, {}));
}

TEST_CASE("combine_alt examples") {
  const std::string in = "((21-6)*2)";
  const auto cands = concat(repeat("junk", 51), repeat("15_(21-6)", 49));
  auto alt = combine_alt(in, cands);
  CHECK(alt.halted());
  CHECK(alt.reason == HaltReason::ModalIllFormed);
  CHECK(*combine_default(in, cands).next == "(15*2)");

  alt = combine_alt(in, concat(repeat("3_(1+2)", 60), repeat("15_(21-6)", 40)));
  CHECK(alt.reason == HaltReason::TargetAbsent);

  for (const auto& same : {repeat("15_(21-6)", 7), repeat("15_(21-6)", 1)}) {
    const auto d = combine_default(in, same);
    const auto a = combine_alt(in, same);
    CHECK(*d.next == *a.next);
  }
}

TEST_CASE("ties go to the lexicographically smallest string") {
  const std::string in = "((21-6)*2)";
  const std::vector<std::string> tied{"16_(21-6)", "15_(21-6)", "16_(21-6)", "15_(21-6)"};
  CHECK(*combine_default(in, tied).next == "(15*2)");
  CHECK(*combine_alt(in, tied).next == "(15*2)");
  CHECK(*modal_string(tied) == "15_(21-6)");
  CHECK_FALSE(modal_string({}).has_value());
}

TEST_CASE("exhaustive small multisets match the counting oracle") {
  const std::string in = "(((3*2)-2)+5)";
  const std::vector<std::vector<std::string>> alphabets{
      {"6_(3*2)", "7_(3*2)", "6(3*2)"},    // right, wrong result, ill-formed
      {"6_(3*2)", "4_(6-2)", "junk"},      // right, absent target, ill-formed
      {"6_(3*2)", "7_(3*2)", "4_(6-2)"},   // all well-formed, one absent
      {"x", "6_(3*2)x", "_(3*2)"},         // all ill-formed
  };
  int cases = 0;
  for (const auto& alphabet : alphabets) {
    for (int size = 1; size <= 6; ++size) {
      for (int a = 0; a <= size; ++a) {
        for (int b = 0; a + b <= size; ++b) {
          const int c = size - a - b;
          std::vector<std::string> cands =
              concat(concat(repeat(alphabet[0], a), repeat(alphabet[1], b)), repeat(alphabet[2], c));
          const Expected want_default = oracle_default(in, cands);
          const Expected want_alt = oracle_alt(in, cands);
          std::sort(cands.begin(), cands.end());
          do {
            const auto d = combine_default(in, cands);
            const auto al = combine_alt(in, cands);
            check_against(d, want_default);
            check_against(al, want_alt);
            if (d.halted()) CHECK(al.halted());
            for (const auto* o : {&d, &al}) {
              if (o->halted()) continue;
              CHECK(o->next->size() < in.size());
              CHECK_NOTHROW(parse(*o->next, ParseMode::Permissive));
            }
            ++cases;
          } while (std::next_permutation(cands.begin(), cands.end()));
        }
      }
    }
  }
  CHECK(cases > 1000);
}

TEST_CASE("outcome does not depend on candidate order") {
  Rng rng = stream(21, "combiner-order");
  const std::string in = "((21-6)*2)";
  const std::vector<std::string> pool{"15_(21-6)", "14_(21-6)", "junk", "3_(1+2)", "15(21-6)"};
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> cands;
    for (int i = 0; i < 20; ++i) cands.push_back(pool[pick(rng)]);
    const auto d = combine_default(in, cands);
    const auto a = combine_alt(in, cands);
    std::shuffle(cands.begin(), cands.end(), rng);
    CHECK(combine_default(in, cands).next == d.next);
    CHECK(combine_alt(in, cands).next == a.next);
    CHECK(combine_alt(in, cands).reason == a.reason);
  }
}

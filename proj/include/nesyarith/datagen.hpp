#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "nesyarith/expr.hpp"
#include "nesyarith/rng.hpp"

namespace nesyarith {

class ExhaustedRetries : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownSymbol : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GenConfig {
  int nesting = 1;
  int max_operand_digits = 2;
  int max_result_digits = 2;
  int max_retries = 10'000;
};

enum class Task { SubExpr, EndToEnd };
enum class Split { Train, Val, Test };

std::string_view to_string(Task t);
std::string_view to_string(Split s);
Task task_from_string(std::string_view s);
Split split_from_string(std::string_view s);

struct SplitRatios {
  int train = 80;
  int val = 10;
  int test = 10;
};

struct Example {
  std::string input_text;
  std::string target_text;
  Task task = Task::SubExpr;
  Split split = Split::Train;
};

/// Character-level vocabulary: '0'..'9' ( ) + - * _ then SOS, EOS, PAD.
class Vocab {
 public:
  static constexpr int kSize = 19;
  static constexpr int kSos = 16;
  static constexpr int kEos = 17;
  static constexpr int kPad = 18;

  static int id(char c);  // throws UnknownSymbol
  static bool contains(char c);
  static char symbol(int id);  // special ids map to '\0'

  static std::vector<int> encode(std::string_view text);
  static std::string decode(std::span<const int> ids);
};

/// Chain-form expression with exactly cfg.nesting operations, every step of
/// whose solution chain stays within max_result_digits.
Expr sample_expression(Rng& rng, const GenConfig& cfg);

Split assign_split(std::string_view canonical_text, const SplitRatios& ratios = {});

/// Target string for an input under the given task.
std::string make_target(const Expr& e, Task task);
Example make_example(const Expr& e, Task task, Split split);

/// Full-solution-path examples forced into Train. Canonical texts of every
/// emitted input are added to `reserved`.
std::vector<Example> build_training_pool(Rng& rng, int n_roots,
                                         std::unordered_set<std::string>& reserved,
                                         const GenConfig& base = {});

struct BatchRequest {
  Task task = Task::SubExpr;
  std::vector<int> nesting_set;
  int batch_size = 1;
  Split split = Split::Train;
  SplitRatios ratios;
  GenConfig gen;  // nesting is overridden per sample
};

std::vector<Example> sample_batch(Rng& rng, const BatchRequest& req,
                                  const std::unordered_set<std::string>& reserved = {});

/// One "input\ttarget\ttask\tsplit" line per example.
void write_tsv(std::ostream& out, std::span<const Example> examples);
std::vector<Example> read_tsv(std::istream& in);

}  // namespace nesyarith

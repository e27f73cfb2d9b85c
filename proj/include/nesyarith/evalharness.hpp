#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nesyarith/datagen.hpp"
#include "nesyarith/hybrid.hpp"

namespace nesyarith {

/// Fraction of matching positions over the longer of the two strings.
double char_accuracy(std::string_view output, std::string_view target);
double seq_accuracy(std::string_view output, std::string_view target);

/// Scores one output; a halted sequence (nullopt) scores 0 on both metrics.
struct SequenceScore {
  double char_acc = 0.0;
  double seq_acc = 0.0;
  bool halted = false;
};
SequenceScore score(const std::optional<std::string>& output, std::string_view target);

struct BatchScore {
  double char_acc = 0.0;  // per-sequence mean, in percent
  double seq_acc = 0.0;
  double halted = 0.0;
};
BatchScore score_batch(std::span<const SequenceScore> scores);

struct EvalRecord {
  std::string condition;
  int nesting = 0;
  double char_acc_mean = 0.0, char_acc_std = 0.0;
  double seq_acc_mean = 0.0, seq_acc_std = 0.0;
  double halted_mean = 0.0, halted_std = 0.0;
  int n_batches = 0;
  int batch_size = 0;
};

/// Mean and population standard deviation across batches.
EvalRecord aggregate(std::string condition, int nesting, std::span<const BatchScore> batches,
                     int batch_size);

struct EvalSpec {
  std::vector<int> nesting_list{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  int n_batches = 10;
  int batch_size = 100;
  Split split = Split::Test;
  SplitRatios ratios;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Maps a batch of inputs to outputs; nullopt marks a halted sequence.
using BatchPredictor = std::function<std::vector<std::optional<std::string>>(
    std::span<const std::string> inputs, Rng& rng)>;

/// Scores a predictor on freshly sampled examples of `task`. Batches draw
/// from independent streams derived from (seed, nesting, batch), so results
/// do not depend on the thread count.
std::vector<EvalRecord> evaluate_solver(const BatchPredictor& predictor, Task task,
                                        const EvalSpec& spec, const std::string& condition);

/// Runs the full hybrid loop on Test expressions; target is the final value.
std::vector<EvalRecord> evaluate_hybrid(const SolverPort& solver, const HybridOptions& opt,
                                        const EvalSpec& spec, const std::string& condition);

enum class ReportFormat { Csv, Markdown };

/// One decimal, half away from zero.
std::string format_percent(double value);
std::string emit_report(std::span<const EvalRecord> records, ReportFormat format);

}  // namespace nesyarith

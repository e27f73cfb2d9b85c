#include "nesyarith/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace nesyarith {

double char_accuracy(std::string_view output, std::string_view target) {
  const std::size_t longest = std::max(output.size(), target.size());
  if (longest == 0) return 1.0;
  const std::size_t shortest = std::min(output.size(), target.size());
  std::size_t matches = 0;
  for (std::size_t p = 0; p < shortest; ++p) matches += output[p] == target[p] ? 1 : 0;
  return static_cast<double>(matches) / static_cast<double>(longest);
}

double seq_accuracy(std::string_view output, std::string_view target) {
  return output == target ? 1.0 : 0.0;
}

SequenceScore score(const std::optional<std::string>& output, std::string_view target) {
  if (!output) return {0.0, 0.0, true};
  return {char_accuracy(*output, target), seq_accuracy(*output, target), false};
}

BatchScore score_batch(std::span<const SequenceScore> scores) {
  BatchScore b;
  if (scores.empty()) return b;
  for (const SequenceScore& s : scores) {
    b.char_acc += s.char_acc;
    b.seq_acc += s.seq_acc;
    b.halted += s.halted ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(scores.size());
  return {100.0 * b.char_acc / n, 100.0 * b.seq_acc / n, 100.0 * b.halted / n};
}

EvalRecord aggregate(std::string condition, int nesting, std::span<const BatchScore> batches,
                     int batch_size) {
  EvalRecord r;
  r.condition = std::move(condition);
  r.nesting = nesting;
  r.n_batches = static_cast<int>(batches.size());
  r.batch_size = batch_size;
  if (batches.empty()) return r;
  auto stats = [&](double BatchScore::*field, double& mean, double& std) {
    double sum = 0.0;
    for (const BatchScore& b : batches) sum += b.*field;
    mean = sum / static_cast<double>(batches.size());
    double var = 0.0;
    for (const BatchScore& b : batches) var += (b.*field - mean) * (b.*field - mean);
    std = std::sqrt(var / static_cast<double>(batches.size()));
  };
  stats(&BatchScore::char_acc, r.char_acc_mean, r.char_acc_std);
  stats(&BatchScore::seq_acc, r.seq_acc_mean, r.seq_acc_std);
  stats(&BatchScore::halted, r.halted_mean, r.halted_std);
  return r;
}

namespace {

// Runs job(i) for i in [0, n) on up to `threads` workers; rethrows the first
// failure.
template <typename Job>
void parallel_for(int n, int threads, Job&& job) {
  threads = std::clamp(threads, 1, std::max(n, 1));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::uint64_t batch_key(int nesting, int batch) {
  return static_cast<std::uint64_t>(nesting) * 100'003ULL + static_cast<std::uint64_t>(batch);
}

std::vector<Example> test_batch(const EvalSpec& spec, Task task, int nesting, int batch) {
  Rng data = stream(spec.seed, "eval-data", batch_key(nesting, batch));
  BatchRequest req;
  req.task = task;
  req.nesting_set = {nesting};
  req.batch_size = spec.batch_size;
  req.split = spec.split;
  req.ratios = spec.ratios;
  return sample_batch(data, req);
}

template <typename ScoreBatch>
std::vector<EvalRecord> run_grid(const EvalSpec& spec, const std::string& condition,
                                 ScoreBatch&& score_one) {
  const int levels = static_cast<int>(spec.nesting_list.size());
  std::vector<BatchScore> scores(static_cast<std::size_t>(levels * spec.n_batches));
  parallel_for(levels * spec.n_batches, spec.threads, [&](int job) {
    const int nesting = spec.nesting_list[static_cast<std::size_t>(job / spec.n_batches)];
    scores[static_cast<std::size_t>(job)] = score_one(nesting, job % spec.n_batches);
  });
  std::vector<EvalRecord> records;
  for (int l = 0; l < levels; ++l)
    records.push_back(aggregate(condition, spec.nesting_list[static_cast<std::size_t>(l)],
                                std::span(scores).subspan(static_cast<std::size_t>(l * spec.n_batches),
                                                          static_cast<std::size_t>(spec.n_batches)),
                                spec.batch_size));
  return records;
}

}  // namespace

std::vector<EvalRecord> evaluate_solver(const BatchPredictor& predictor, Task task,
                                        const EvalSpec& spec, const std::string& condition) {
  return run_grid(spec, condition, [&](int nesting, int batch) {
    const std::vector<Example> examples = test_batch(spec, task, nesting, batch);
    std::vector<std::string> inputs;
    for (const Example& ex : examples) inputs.push_back(ex.input_text);
    Rng rng = stream(spec.seed, "eval-model", batch_key(nesting, batch));
    const auto outputs = predictor(inputs, rng);
    if (outputs.size() != examples.size())
      throw std::logic_error("predictor returned a wrong number of outputs");
    std::vector<SequenceScore> scores;
    for (std::size_t i = 0; i < examples.size(); ++i)
      scores.push_back(score(outputs[i], examples[i].target_text));
    return score_batch(scores);
  });
}

std::vector<EvalRecord> evaluate_hybrid(const SolverPort& solver, const HybridOptions& opt,
                                        const EvalSpec& spec, const std::string& condition) {
  HybridOptions fast = opt;
  fast.record_steps = false;
  return run_grid(spec, condition, [&](int nesting, int batch) {
    const std::vector<Example> examples = test_batch(spec, Task::EndToEnd, nesting, batch);
    Rng rng = stream(spec.seed, "eval-hybrid", batch_key(nesting, batch));
    std::vector<SequenceScore> scores;
    for (const Example& ex : examples) {
      const HybridTrace trace = run_hybrid(solver, ex.input_text, fast, rng);
      std::optional<std::string> output;
      if (trace.solved()) output = std::to_string(trace.value);
      // An iteration-cap hit has no integer answer either; it counts as halted.
      scores.push_back(score(output, ex.target_text));
    }
    return score_batch(scores);
  });
}

std::string format_percent(double value) {
  // Round the shortest decimal form of the value, so that 94.95 becomes
  // 95.0 even though its binary value lies slightly below 94.95.
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, std::abs(value), std::chars_format::fixed);
  if (ec != std::errc{}) throw std::invalid_argument("cannot format percent value");
  const std::string_view digits(buf, static_cast<std::size_t>(end - buf));
  const auto dot = digits.find('.');
  const std::string_view whole = digits.substr(0, dot);
  const std::string_view frac = dot == std::string_view::npos ? "" : digits.substr(dot + 1);
  long long tenths = 0;
  for (char c : whole) tenths = tenths * 10 + (c - '0');
  tenths = tenths * 10 + (frac.empty() ? 0 : frac[0] - '0');
  if (frac.size() > 1 && frac[1] >= '5') ++tenths;
  const bool negative = value < 0 && tenths != 0;
  return (negative ? "-" : "") + std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
}

std::string emit_report(std::span<const EvalRecord> records, ReportFormat format) {
  std::ostringstream out;
  if (format == ReportFormat::Csv) {
    out << "condition,nesting,char_mean,char_std,seq_mean,seq_std,halted_mean,halted_std\n";
    for (const EvalRecord& r : records)
      out << r.condition << ',' << r.nesting << ',' << format_percent(r.char_acc_mean) << ','
          << format_percent(r.char_acc_std) << ',' << format_percent(r.seq_acc_mean) << ','
          << format_percent(r.seq_acc_std) << ',' << format_percent(r.halted_mean) << ','
          << format_percent(r.halted_std) << '\n';
    return out.str();
  }

  std::vector<int> levels;
  std::vector<std::string> conditions;
  for (const EvalRecord& r : records) {
    if (std::find(levels.begin(), levels.end(), r.nesting) == levels.end()) levels.push_back(r.nesting);
    if (std::find(conditions.begin(), conditions.end(), r.condition) == conditions.end())
      conditions.push_back(r.condition);
  }
  std::sort(levels.begin(), levels.end());
  struct Metric {
    const char* title;
    double EvalRecord::*mean;
    double EvalRecord::*std;
  };
  static constexpr Metric kMetrics[] = {
      {"Char Acc", &EvalRecord::char_acc_mean, &EvalRecord::char_acc_std},
      {"Seq Acc", &EvalRecord::seq_acc_mean, &EvalRecord::seq_acc_std},
      {"Halted", &EvalRecord::halted_mean, &EvalRecord::halted_std},
  };
  for (const Metric& m : kMetrics) {
    out << "### " << m.title << "\n\n| Nesting |";
    for (int l : levels) out << ' ' << l << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < levels.size(); ++i) out << "---:|";
    out << '\n';
    for (const std::string& c : conditions) {
      out << "| " << c << " |";
      for (int l : levels) {
        auto it = std::find_if(records.begin(), records.end(), [&](const EvalRecord& r) {
          return r.condition == c && r.nesting == l;
        });
        if (it == records.end())
          out << " - |";
        else
          out << ' ' << format_percent((*it).*m.mean) << "±" << format_percent((*it).*m.std) << " |";
      }
      out << '\n';
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace nesyarith

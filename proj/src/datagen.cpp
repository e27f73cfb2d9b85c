#include "nesyarith/datagen.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

namespace nesyarith {

std::string_view to_string(Task t) { return t == Task::SubExpr ? "subexpr" : "e2e"; }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Task task_from_string(std::string_view s) {
  if (s == "subexpr") return Task::SubExpr;
  if (s == "e2e") return Task::EndToEnd;
  throw std::invalid_argument("unknown task '" + std::string(s) + "'");
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Vocab

int Vocab::id(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  switch (c) {
    case '(': return 10;
    case ')': return 11;
    case '+': return 12;
    case '-': return 13;
    case '*': return 14;
    case '_': return 15;
    default: break;
  }
  throw UnknownSymbol(std::string("symbol '") + c + "' is not in the vocabulary");
}

bool Vocab::contains(char c) {
  return (c >= '0' && c <= '9') || c == '(' || c == ')' || c == '+' || c == '-' ||
         c == '*' || c == '_';
}

char Vocab::symbol(int id) {
  static constexpr char kSymbols[] = "0123456789()+-*_";
  if (id >= 0 && id < 16) return kSymbols[id];
  return '\0';
}

std::vector<int> Vocab::encode(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size() + 2);
  ids.push_back(kSos);
  for (char c : text) ids.push_back(id(c));
  ids.push_back(kEos);
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kSos || id == kPad) continue;
    const char c = symbol(id);
    if (c == '\0') throw UnknownSymbol("token id " + std::to_string(id) + " is out of range");
    out += c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

std::int64_t pow10(int digits) {
  std::int64_t p = 1;
  for (int i = 0; i < digits; ++i) p *= 10;
  return p;
}

// Builds one candidate level by level, tracking the value of the compound
// part. Returns false as soon as an intermediate leaves the allowed range;
// the caller then discards the whole candidate.
bool try_sample(Rng& rng, const GenConfig& cfg, Expr& out) {
  std::uniform_int_distribution<std::int64_t> operand(0, pow10(cfg.max_operand_digits) - 1);
  std::uniform_int_distribution<int> op_dist(0, 2);
  std::bernoulli_distribution compound_left(0.5);
  const std::int64_t limit = pow10(cfg.max_result_digits) - 1;
  static constexpr Op kOps[] = {Op::Add, Op::Sub, Op::Mul};

  Expr e = Expr::leaf(operand(rng));
  std::int64_t value = e.value();
  for (int level = 0; level < cfg.nesting; ++level) {
    const Op op = kOps[op_dist(rng)];
    const Expr leaf = Expr::leaf(operand(rng));
    const bool left = compound_left(rng);
    e = left ? Expr::node(op, e, leaf) : Expr::node(op, leaf, e);
    value = left ? apply(op, value, leaf.value()) : apply(op, leaf.value(), value);
    if (value > limit || value < -limit) return false;
  }
  out = e;
  return true;
}

}  // namespace

Expr sample_expression(Rng& rng, const GenConfig& cfg) {
  if (cfg.nesting < 1) throw std::invalid_argument("nesting must be >= 1");
  Expr e = Expr::leaf(0);
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt)
    if (try_sample(rng, cfg, e)) return e;
  throw ExhaustedRetries("no expression with nesting " + std::to_string(cfg.nesting) +
                         " satisfied the result bound within " +
                         std::to_string(cfg.max_retries) + " attempts");
}

Split assign_split(std::string_view canonical_text, const SplitRatios& ratios) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      ratios.train + ratios.val + ratios.test != 100)
    throw std::invalid_argument("split ratios must be non-negative and sum to 100");
  const auto bucket = static_cast<int>(fnv1a64(canonical_text) % 100);
  if (bucket < ratios.train) return Split::Train;
  if (bucket < ratios.train + ratios.val) return Split::Val;
  return Split::Test;
}

std::string make_target(const Expr& e, Task task) {
  if (task == Task::EndToEnd) return std::to_string(evaluate(e));
  const InnermostRef ref = innermost(e);
  return std::to_string(ref.result) + "_" + ref.subexpr_text;
}

Example make_example(const Expr& e, Task task, Split split) {
  return {render(e), make_target(e, task), task, split};
}

std::vector<Example> build_training_pool(Rng& rng, int n_roots,
                                         std::unordered_set<std::string>& reserved,
                                         const GenConfig& base) {
  std::vector<Example> pool;
  if (n_roots <= 0) return pool;
  GenConfig cfg = base;
  cfg.nesting = 2;
  pool.reserve(2 * static_cast<std::size_t>(n_roots));
  for (int i = 0; i < n_roots; ++i) {
    const Expr root = sample_expression(rng, cfg);
    for (const Expr& step : solution_chain(root)) {
      if (step.is_leaf()) break;
      pool.push_back(make_example(step, Task::SubExpr, Split::Train));
      reserved.insert(pool.back().input_text);
    }
  }
  return pool;
}

std::vector<Example> sample_batch(Rng& rng, const BatchRequest& req,
                                  const std::unordered_set<std::string>& reserved) {
  if (req.nesting_set.empty()) throw std::invalid_argument("nesting_set is empty");
  if (req.split == Split::Train &&
      std::any_of(req.nesting_set.begin(), req.nesting_set.end(),
                  [](int n) { return n < 1 || n > 2; }))
    throw std::invalid_argument("training batches are restricted to nesting 1 and 2");

  std::uniform_int_distribution<std::size_t> pick(0, req.nesting_set.size() - 1);
  std::vector<Example> batch;
  batch.reserve(static_cast<std::size_t>(std::max(req.batch_size, 0)));
  GenConfig cfg = req.gen;
  for (int i = 0; i < req.batch_size; ++i) {
    bool found = false;
    for (int attempt = 0; attempt < req.gen.max_retries && !found; ++attempt) {
      cfg.nesting = req.nesting_set[pick(rng)];
      const Expr e = sample_expression(rng, cfg);
      std::string text = render(e);
      const bool is_reserved = reserved.contains(text);
      const bool ok = req.split == Split::Train
                          ? is_reserved || assign_split(text, req.ratios) == Split::Train
                          : !is_reserved && assign_split(text, req.ratios) == req.split;
      if (!ok) continue;
      batch.push_back({std::move(text), make_target(e, req.task), req.task, req.split});
      found = true;
    }
    if (!found)
      throw ExhaustedRetries("could not draw an example for split " +
                             std::string(to_string(req.split)));
  }
  return batch;
}

void write_tsv(std::ostream& out, std::span<const Example> examples) {
  for (const Example& ex : examples)
    out << ex.input_text << '\t' << ex.target_text << '\t' << to_string(ex.task) << '\t'
        << to_string(ex.split) << '\n';
}

std::vector<Example> read_tsv(std::istream& in) {
  std::vector<Example> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<std::string, 4> fields;
    std::size_t start = 0;
    for (int f = 0; f < 4; ++f) {
      const auto tab = line.find('\t', start);
      if ((tab == std::string::npos) != (f == 3))
        throw std::runtime_error("malformed dataset row: " + line);
      fields[f] = line.substr(start, tab == std::string::npos ? std::string::npos : tab - start);
      start = tab + 1;
    }
    rows.push_back({fields[0], fields[1], task_from_string(fields[2]),
                    split_from_string(fields[3])});
  }
  return rows;
}

}  // namespace nesyarith

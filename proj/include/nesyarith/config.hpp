#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nesyarith/combiner.hpp"
#include "nesyarith/datagen.hpp"
#include "nesyarith/hybrid.hpp"
#include "nesyarith/neural/config.hpp"
#include "nesyarith/neural/training.hpp"

namespace nesyarith {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataSection {
  std::vector<int> train_nesting{1, 2};
  int max_operand_digits = 2;
  int max_result_digits = 2;
  int max_retries = 10'000;
  SplitRatios ratios;
  int pool_roots = 10'000;       // nesting-2 roots whose full solution path is forced into Train
  double pool_fraction = 0.25;   // share of each training batch drawn from that pool
  int rows = 1'000;              // gen-data output size
  std::vector<int> gen_nesting{1, 2};
  Task gen_task = Task::SubExpr;
  Split gen_split = Split::Train;

  GenConfig gen() const { return {1, max_operand_digits, max_result_digits, max_retries}; }
};

struct TrainSection {
  long steps = 20'000;
  double lr = 1e-4;
  int batch_size = 128;
  std::uint64_t seed = 1;
  std::string checkpoint_path;  // empty: <run dir>/model.ckpt
  long checkpoint_every = 1'000;
  long log_every = 100;
  long val_every = 1'000;
  int val_batch_size = 500;
  neural::Regime regime = neural::Regime::Autoregressive;
};

struct EvalSection {
  std::vector<int> nesting_list{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  int n_batches = 10;
  int batch_size = 100;
  std::vector<int> n_outputs{100};
  CombinerVariant combiner_variant = CombinerVariant::Default;
  double temperature = 1.0;
  std::string checkpoint;      // solver model for Solver / Hybrid / HybridAlt
  std::string e2e_checkpoint;  // end-to-end model for E2E
  OracleErrorModel oracle;
  std::uint64_t seed = 7;
};

struct LlmSection {
  std::string model = "gpt-3.5-turbo-instruct";
  int max_tokens = 16;
  int attempts = 3;
  int batch_size = 10;
  int parallel = 1;  // in-flight requests, at most 4
  std::string demo_expr = "((2+4)*6)";
  std::int64_t demo_result = 36;
};

struct RunConfig {
  DataSection data;
  neural::ModelConfig model;
  TrainSection train;
  EvalSection eval;
  LlmSection llm;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Strict: every key must be known and correctly typed; throws ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value" to a JSON document. The value is read as JSON when
/// it parses as JSON and as a plain string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Defaults, then the file (if any), then overrides; validated.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

/// Hex FNV-1a of the canonical JSON form.
std::string config_hash(const RunConfig& cfg);

}  // namespace nesyarith

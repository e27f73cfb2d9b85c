#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "nesyarith/config.hpp"
#include "nesyarith/evalharness.hpp"
#include "nesyarith/experiment.hpp"
#include "nesyarith/llm.hpp"
#include "nesyarith/neural/checkpoint.hpp"
#include "nesyarith/neural/solver.hpp"
#include "nesyarith/neural/training.hpp"

namespace fs = std::filesystem;
using namespace nesyarith;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

class MissingCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 1;
  std::string run_dir;
  std::string runs_root = "runs";
};

fs::path make_run_dir(const Common& common, const RunConfig& cfg, const std::string& command) {
  fs::path dir;
  if (!common.run_dir.empty()) {
    dir = common.run_dir;
  } else {
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::localtime(&now));
    dir = fs::path(common.runs_root) / (std::string(stamp) + "-" + command + "-" + config_hash(cfg));
  }
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << to_json(cfg).dump(2) << '\n';
  return dir;
}

void write_report(const fs::path& dir, const std::vector<EvalRecord>& records) {
  std::ofstream(dir / "report.csv") << emit_report(records, ReportFormat::Csv);
  const std::string md = emit_report(records, ReportFormat::Markdown);
  std::ofstream(dir / "report.md") << md;
  std::cout << md;
}

std::shared_ptr<const neural::NeuralSolver> load_solver(const std::string& path, const char* key,
                                                        double temperature) {
  if (path.empty()) throw ConfigError(std::string(key) + " must name a checkpoint for this condition");
  if (!fs::exists(path)) throw MissingCheckpoint("checkpoint " + path + " does not exist");
  auto [params, model_cfg] = neural::load_checkpoint(path);
  return std::make_shared<const neural::NeuralSolver>(std::move(params), model_cfg, temperature);
}

EvalSpec eval_spec(const RunConfig& cfg, int threads) {
  EvalSpec spec;
  spec.nesting_list = cfg.eval.nesting_list;
  spec.n_batches = cfg.eval.n_batches;
  spec.batch_size = cfg.eval.batch_size;
  spec.ratios = cfg.data.ratios;
  spec.seed = cfg.eval.seed;
  spec.threads = threads;
  return spec;
}

BatchPredictor llm_predictor(const RunConfig& cfg) {
  auto endpoint = llm::EndpointConfig::from_env();
  if (!endpoint) throw ConfigError("the LLM condition needs LLM_ENDPOINT and LLM_API_KEY");
  endpoint->model = cfg.llm.model;
  endpoint->max_tokens = cfg.llm.max_tokens;
  endpoint->attempts = cfg.llm.attempts;
  const llm::EndpointConfig ep = *endpoint;
  const LlmSection section = cfg.llm;
  return [ep, section](std::span<const std::string> inputs, Rng&) {
    std::vector<std::optional<std::string>> out(inputs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
      for (std::size_t i = next++; i < inputs.size(); i = next++) {
        try {
          const std::string prompt =
              llm::build_prompt({section.demo_expr, section.demo_result, inputs[i], "<END>"});
          const auto parsed = llm::parse_completion(llm::query_endpoint(ep, prompt));
          if (const auto* v = std::get_if<std::int64_t>(&parsed)) out[i] = std::to_string(*v);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < section.parallel; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
    return out;
  };
}

std::vector<EvalRecord> run_eval(const RunConfig& cfg, const std::string& condition, int threads) {
  EvalSpec spec = eval_spec(cfg, threads);
  std::vector<EvalRecord> records;
  auto append = [&](std::vector<EvalRecord> more) {
    records.insert(records.end(), more.begin(), more.end());
  };
  auto hybrid = [&](const SolverPort& solver, CombinerVariant variant) {
    for (int n : cfg.eval.n_outputs) {
      HybridOptions opt;
      opt.variant = variant;
      opt.n_outputs = n;
      const std::string name =
          cfg.eval.n_outputs.size() > 1 ? condition + " N=" + std::to_string(n) : condition;
      std::cerr << "evaluating " << name << '\n';
      append(evaluate_hybrid(solver, opt, spec, name));
    }
  };

  if (condition == "Solver") {
    auto solver = load_solver(cfg.eval.checkpoint, "eval.checkpoint", cfg.eval.temperature);
    append(evaluate_solver(neural::greedy_predictor(solver), Task::SubExpr, spec, condition));
  } else if (condition == "SolverMulti") {
    auto solver = load_solver(cfg.eval.checkpoint, "eval.checkpoint", cfg.eval.temperature);
    for (int n : cfg.eval.n_outputs) {
      const std::string name =
          cfg.eval.n_outputs.size() > 1 ? condition + " N=" + std::to_string(n) : condition;
      append(evaluate_solver(neural::multi_predictor(solver, n), Task::SubExpr, spec, name));
    }
  } else if (condition == "E2E") {
    auto solver = load_solver(cfg.eval.e2e_checkpoint, "eval.e2e_checkpoint", cfg.eval.temperature);
    append(evaluate_solver(neural::greedy_predictor(solver), Task::EndToEnd, spec, condition));
  } else if (condition == "Hybrid" || condition == "HybridAlt") {
    auto solver = load_solver(cfg.eval.checkpoint, "eval.checkpoint", cfg.eval.temperature);
    hybrid(*solver, condition == "Hybrid" ? cfg.eval.combiner_variant : CombinerVariant::Alt);
  } else if (condition == "OracleHybrid") {
    hybrid(OracleSolver(cfg.eval.oracle), cfg.eval.combiner_variant);
  } else if (condition == "LLM") {
    spec.batch_size = cfg.llm.batch_size;
    spec.threads = 1;
    append(evaluate_solver(llm_predictor(cfg), Task::EndToEnd, spec, condition));
  } else {
    throw ConfigError("unknown condition '" + condition + "'");
  }
  return records;
}

int cmd_gen_data(const RunConfig& cfg, const Common& common, std::string out_path) {
  const fs::path dir = make_run_dir(common, cfg, "gen-data");
  if (out_path.empty()) out_path = (dir / "data.tsv").string();
  std::unordered_set<std::string> reserved;
  Rng pool_rng = stream(cfg.train.seed, "pool");
  build_training_pool(pool_rng, cfg.data.pool_roots, reserved, cfg.data.gen());

  BatchRequest req;
  req.task = cfg.data.gen_task;
  req.nesting_set = cfg.data.gen_nesting;
  req.batch_size = cfg.data.rows;
  req.split = cfg.data.gen_split;
  req.ratios = cfg.data.ratios;
  req.gen = cfg.data.gen();
  Rng rng = stream(cfg.train.seed, "data");
  const auto rows = req.batch_size > 0 ? sample_batch(rng, req, reserved) : std::vector<Example>{};

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  write_tsv(out, rows);
  std::map<std::pair<std::string, int>, int> counts;
  for (const Example& ex : rows)
    ++counts[{std::string(to_string(ex.split)), nesting_depth(parse(ex.input_text))}];
  std::cout << "wrote " << rows.size() << " rows to " << out_path << '\n';
  for (const auto& [key, n] : counts)
    std::cout << "  " << key.first << " nesting " << key.second << ": " << n << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, const Common& common, Task task) {
  const fs::path dir = make_run_dir(common, cfg, task == Task::SubExpr ? "train" : "train-e2e");
  std::cout << "run directory " << dir.string() << '\n';
  const TrainSummary s = run_training(cfg, task, dir, std::cout);
  std::cout << "trained " << s.steps << " steps, final loss " << s.final_loss << ", checkpoint "
            << s.checkpoint.string() << '\n';
  return 0;
}

int cmd_gradcheck(bool corrupt, std::uint64_t seed) {
  neural::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_decode_len = 16;
  Rng rng = stream(seed, "gradcheck");
  neural::GradCheckOptions opt;
  opt.corrupt = corrupt;
  const auto result = neural::gradient_check(cfg, rng, opt);
  const bool pass = result.max_rel_error <= 1e-3;
  std::printf("max relative error %.1e over %d coordinates (%d redrawn at ReLU kinks): %s\n",
              result.max_rel_error, result.compared, result.skipped_kinks, pass ? "PASS" : "FAIL");
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid neuro-symbolic solver for nested arithmetic expressions"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON run configuration");
    sub->add_option("--set", common.overrides, "Override a config value, e.g. train.steps=100");
    sub->add_option("--threads", common.threads, "Worker threads")->check(CLI::Range(1, 256));
    sub->add_option("--run-dir", common.run_dir, "Output directory (default: runs/<time>-<hash>)");
    sub->add_option("--runs-root", common.runs_root, "Parent of generated run directories");
  };

  std::string out_path;
  auto* gen = app.add_subcommand("gen-data", "Write a dataset dump as TSV");
  add_common(gen);
  gen->add_option("--out", out_path, "Output TSV path");

  auto* train = app.add_subcommand("train", "Train the sub-expression solver");
  add_common(train);
  auto* train_e2e = app.add_subcommand("train-e2e", "Train the end-to-end baseline");
  add_common(train_e2e);

  std::vector<std::string> conditions;
  auto* eval = app.add_subcommand("eval", "Evaluate one or more conditions over nesting levels");
  add_common(eval);
  eval->add_option("--condition", conditions, "Solver, SolverMulti, Hybrid, HybridAlt, E2E, OracleHybrid or LLM")
      ->required();

  bool corrupt = false;
  std::uint64_t grad_seed = 1;
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic and numerical gradients");
  grad->add_flag("--corrupt", corrupt, "Deliberately corrupt one analytic gradient");
  grad->add_option("--seed", grad_seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (grad->parsed()) return cmd_gradcheck(corrupt, grad_seed);
    const RunConfig cfg = load_run_config(common.config_path, common.overrides);
    if (gen->parsed()) return cmd_gen_data(cfg, common, out_path);
    if (train->parsed()) return cmd_train(cfg, common, Task::SubExpr);
    if (train_e2e->parsed()) return cmd_train(cfg, common, Task::EndToEnd);
    if (eval->parsed()) {
      std::vector<EvalRecord> records;
      for (const auto& c : conditions) {
        auto more = run_eval(cfg, c, common.threads);
        records.insert(records.end(), more.begin(), more.end());
      }
      write_report(make_run_dir(common, cfg, "eval"), records);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}

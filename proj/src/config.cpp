#include "nesyarith/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "nesyarith/neural/checkpoint.hpp"
#include "nesyarith/rng.hpp"

namespace nesyarith {

namespace {

std::string_view regime_name(neural::Regime r) {
  return r == neural::Regime::Autoregressive ? "autoregressive" : "teacher_forced";
}

neural::Regime regime_from_string(std::string_view s) {
  if (s == "autoregressive") return neural::Regime::Autoregressive;
  if (s == "teacher_forced") return neural::Regime::TeacherForced;
  throw ConfigError("unknown regime '" + std::string(s) + "'");
}

// Reads the keys of one section, remembering which were consumed so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string path = name_ + "." + key;
    const nlohmann::json& v = *it;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + " must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path + " must be an integer");
      if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned())
        throw ConfigError(path + " must be non-negative");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path + " must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path + " must be a string");
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      if (!v.is_array()) throw ConfigError(path + " must be an array of integers");
      for (const auto& e : v)
        if (!e.is_number_integer()) throw ConfigError(path + " must be an array of integers");
    }
    out = v.get<T>();
  }

  template <typename E, typename Parse>
  void read_enum(const char* key, E& out, Parse parse) {
    std::string s;
    read(key, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown key " + name_ + "." + key);
  }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void validate_nesting(const std::vector<int>& levels, const std::string& path) {
  require(!levels.empty(), path + " must not be empty");
  for (int n : levels) require(n >= 1 && n <= 64, path + " entries must be in [1, 64]");
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  const auto& d = c.data;
  const auto& t = c.train;
  const auto& e = c.eval;
  const auto& l = c.llm;
  return {
      {"data",
       {{"train_nesting", d.train_nesting},
        {"max_operand_digits", d.max_operand_digits},
        {"max_result_digits", d.max_result_digits},
        {"max_retries", d.max_retries},
        {"ratios", {{"train", d.ratios.train}, {"val", d.ratios.val}, {"test", d.ratios.test}}},
        {"pool_roots", d.pool_roots},
        {"pool_fraction", d.pool_fraction},
        {"rows", d.rows},
        {"gen_nesting", d.gen_nesting},
        {"gen_task", std::string(to_string(d.gen_task))},
        {"gen_split", std::string(to_string(d.gen_split))}}},
      {"model", neural::to_json(c.model)},
      {"train",
       {{"steps", t.steps},
        {"lr", t.lr},
        {"batch_size", t.batch_size},
        {"seed", t.seed},
        {"checkpoint_path", t.checkpoint_path},
        {"checkpoint_every", t.checkpoint_every},
        {"log_every", t.log_every},
        {"val_every", t.val_every},
        {"val_batch_size", t.val_batch_size},
        {"regime", std::string(regime_name(t.regime))}}},
      {"eval",
       {{"nesting_list", e.nesting_list},
        {"n_batches", e.n_batches},
        {"batch_size", e.batch_size},
        {"n_outputs", e.n_outputs},
        {"combiner_variant", std::string(to_string(e.combiner_variant))},
        {"temperature", e.temperature},
        {"checkpoint", e.checkpoint},
        {"e2e_checkpoint", e.e2e_checkpoint},
        {"oracle",
         {{"p_malformed", e.oracle.p_malformed},
          {"p_wrong_result", e.oracle.p_wrong_result},
          {"p_wrong_target", e.oracle.p_wrong_target},
          {"result_noise_range", e.oracle.result_noise_range}}},
        {"seed", e.seed}}},
      {"llm",
       {{"model", l.model},
        {"max_tokens", l.max_tokens},
        {"attempts", l.attempts},
        {"batch_size", l.batch_size},
        {"parallel", l.parallel},
        {"demo_expr", l.demo_expr},
        {"demo_result", l.demo_result}}},
  };
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  Section root(j, "config");

  if (const auto* dj = root.child("data")) {
    Section s(*dj, "data");
    auto& d = c.data;
    s.read("train_nesting", d.train_nesting);
    s.read("max_operand_digits", d.max_operand_digits);
    s.read("max_result_digits", d.max_result_digits);
    s.read("max_retries", d.max_retries);
    if (const auto* rj = s.child("ratios")) {
      Section r(*rj, "data.ratios");
      r.read("train", d.ratios.train);
      r.read("val", d.ratios.val);
      r.read("test", d.ratios.test);
      r.finish();
    }
    s.read("pool_roots", d.pool_roots);
    s.read("pool_fraction", d.pool_fraction);
    s.read("rows", d.rows);
    s.read("gen_nesting", d.gen_nesting);
    s.read_enum("gen_task", d.gen_task, task_from_string);
    s.read_enum("gen_split", d.gen_split, split_from_string);
    s.finish();
  }

  if (const auto* mj = root.child("model")) {
    try {
      c.model = neural::model_config_from_json(*mj);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  if (const auto* tj = root.child("train")) {
    Section s(*tj, "train");
    auto& t = c.train;
    s.read("steps", t.steps);
    s.read("lr", t.lr);
    s.read("batch_size", t.batch_size);
    s.read("seed", t.seed);
    s.read("checkpoint_path", t.checkpoint_path);
    s.read("checkpoint_every", t.checkpoint_every);
    s.read("log_every", t.log_every);
    s.read("val_every", t.val_every);
    s.read("val_batch_size", t.val_batch_size);
    s.read_enum("regime", t.regime, regime_from_string);
    s.finish();
  }

  if (const auto* ej = root.child("eval")) {
    Section s(*ej, "eval");
    auto& e = c.eval;
    s.read("nesting_list", e.nesting_list);
    s.read("n_batches", e.n_batches);
    s.read("batch_size", e.batch_size);
    s.read("n_outputs", e.n_outputs);
    s.read_enum("combiner_variant", e.combiner_variant, combiner_variant_from_string);
    s.read("temperature", e.temperature);
    s.read("checkpoint", e.checkpoint);
    s.read("e2e_checkpoint", e.e2e_checkpoint);
    if (const auto* oj = s.child("oracle")) {
      Section o(*oj, "eval.oracle");
      o.read("p_malformed", e.oracle.p_malformed);
      o.read("p_wrong_result", e.oracle.p_wrong_result);
      o.read("p_wrong_target", e.oracle.p_wrong_target);
      o.read("result_noise_range", e.oracle.result_noise_range);
      o.finish();
    }
    s.read("seed", e.seed);
    s.finish();
  }

  if (const auto* lj = root.child("llm")) {
    Section s(*lj, "llm");
    auto& l = c.llm;
    s.read("model", l.model);
    s.read("max_tokens", l.max_tokens);
    s.read("attempts", l.attempts);
    s.read("batch_size", l.batch_size);
    s.read("parallel", l.parallel);
    s.read("demo_expr", l.demo_expr);
    s.read("demo_result", l.demo_result);
    s.finish();
  }
  root.finish();

  const auto& d = c.data;
  validate_nesting(d.train_nesting, "data.train_nesting");
  for (int n : d.train_nesting) require(n <= 2, "data.train_nesting entries must be 1 or 2");
  validate_nesting(d.gen_nesting, "data.gen_nesting");
  require(d.max_operand_digits >= 1 && d.max_operand_digits <= 9, "data.max_operand_digits must be in [1, 9]");
  require(d.max_result_digits >= 1 && d.max_result_digits <= 9, "data.max_result_digits must be in [1, 9]");
  require(d.max_retries >= 1, "data.max_retries must be >= 1");
  require(d.ratios.train >= 0 && d.ratios.val >= 0 && d.ratios.test >= 0 &&
              d.ratios.train + d.ratios.val + d.ratios.test == 100,
          "data.ratios must be non-negative and sum to 100");
  require(d.pool_roots >= 0, "data.pool_roots must be >= 0");
  require(d.pool_fraction >= 0.0 && d.pool_fraction <= 1.0, "data.pool_fraction must be in [0, 1]");
  require(d.rows >= 0, "data.rows must be >= 0");

  const auto& t = c.train;
  require(t.steps >= 0, "train.steps must be >= 0");
  require(t.lr > 0.0, "train.lr must be positive");
  require(t.batch_size >= 1, "train.batch_size must be >= 1");
  require(t.checkpoint_every >= 1, "train.checkpoint_every must be >= 1");
  require(t.log_every >= 1, "train.log_every must be >= 1");
  require(t.val_every >= 1, "train.val_every must be >= 1");
  require(t.val_batch_size >= 1, "train.val_batch_size must be >= 1");

  const auto& e = c.eval;
  validate_nesting(e.nesting_list, "eval.nesting_list");
  require(e.n_batches >= 1, "eval.n_batches must be >= 1");
  require(e.batch_size >= 1, "eval.batch_size must be >= 1");
  require(!e.n_outputs.empty(), "eval.n_outputs must not be empty");
  for (int n : e.n_outputs) require(n >= 1, "eval.n_outputs entries must be >= 1");
  require(e.temperature >= 0.0, "eval.temperature must be >= 0");
  try {
    e.oracle.validate();
  } catch (const std::invalid_argument& err) {
    throw ConfigError(std::string("eval.oracle: ") + err.what());
  }

  const auto& l = c.llm;
  require(l.max_tokens >= 1, "llm.max_tokens must be >= 1");
  require(l.attempts >= 1, "llm.attempts must be >= 1");
  require(l.batch_size >= 1, "llm.batch_size must be >= 1");
  require(l.parallel >= 1 && l.parallel <= 4, "llm.parallel must be in [1, 4]");
  return c;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override path '" + path + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override path '" + path + "' crosses a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

namespace {

void merge(nlohmann::json& base, const nlohmann::json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object())
      merge(base[key], value);
    else
      base[key] = value;
  }
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = to_json(RunConfig{});
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    merge(doc, file);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(to_json(cfg).dump())));
  return buf;
}

}  // namespace nesyarith

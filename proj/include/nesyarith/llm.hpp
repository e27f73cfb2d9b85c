#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

namespace nesyarith::llm {

class InvalidDemo : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NetworkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AuthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RateLimited : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PromptSpec {
  std::string demo_expr;
  std::int64_t demo_result = 0;
  std::string query_expr;
  std::string stop_token = "<END>";
};

/// "{demo}={result}<END>\n{query}="
std::string build_prompt(const PromptSpec& spec);

struct ParseFailure {
  std::string text;
  bool operator==(const ParseFailure&) const = default;
};

using Completion = std::variant<std::int64_t, ParseFailure>;

Completion parse_completion(std::string_view text, std::string_view stop_token = "<END>");

struct EndpointConfig {
  std::string url;  // e.g. https://host/v1/completions
  std::string api_key;
  std::string model = "gpt-3.5-turbo-instruct";
  int max_tokens = 16;
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{30};

  /// url and api_key from LLM_ENDPOINT and LLM_API_KEY.
  static std::optional<EndpointConfig> from_env();
};

/// POSTs the prompt and returns the first completion's text.
std::string query_endpoint(const EndpointConfig& cfg, const std::string& prompt,
                           std::string_view stop_token = "<END>");

}  // namespace nesyarith::llm

#include "nesyarith/llm.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "nesyarith/expr.hpp"

namespace nesyarith::llm {

std::string build_prompt(const PromptSpec& spec) {
  std::int64_t actual = 0;
  try {
    actual = evaluate(parse(spec.demo_expr, ParseMode::Permissive));
    parse(spec.query_expr, ParseMode::Permissive);
  } catch (const ExprError& e) {
    throw InvalidDemo(std::string("malformed expression: ") + e.what());
  }
  if (actual != spec.demo_result)
    throw InvalidDemo(spec.demo_expr + " evaluates to " + std::to_string(actual) + ", not " +
                      std::to_string(spec.demo_result));
  return spec.demo_expr + "=" + std::to_string(spec.demo_result) + spec.stop_token + "\n" +
         spec.query_expr + "=";
}

Completion parse_completion(std::string_view text, std::string_view stop_token) {
  std::string_view s = text;
  if (auto cut = s.find(stop_token); !stop_token.empty() && cut != std::string_view::npos)
    s = s.substr(0, cut);
  auto space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && space(s.front())) s.remove_prefix(1);
  while (!s.empty() && space(s.back())) s.remove_suffix(1);

  const std::size_t digits = !s.empty() && s.front() == '-' ? 1 : 0;
  if (s.size() == digits) return ParseFailure{std::string(text)};
  for (std::size_t i = digits; i < s.size(); ++i)
    if (s[i] < '0' || s[i] > '9') return ParseFailure{std::string(text)};
  std::int64_t value = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || end != s.data() + s.size()) return ParseFailure{std::string(text)};
  return value;
}

std::optional<EndpointConfig> EndpointConfig::from_env() {
  const char* url = std::getenv("LLM_ENDPOINT");
  const char* key = std::getenv("LLM_API_KEY");
  if (!url || !key || !*url) return std::nullopt;
  EndpointConfig cfg;
  cfg.url = url;
  cfg.api_key = key;
  return cfg;
}

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw NetworkError("endpoint URL lacks a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

std::string query_endpoint(const EndpointConfig& cfg, const std::string& prompt,
                           std::string_view stop_token) {
  const SplitUrl target = split_url(cfg.url);
  httplib::Client client(target.origin);
  client.set_connection_timeout(cfg.timeout);
  client.set_read_timeout(cfg.timeout);
  client.set_bearer_token_auth(cfg.api_key);

  const nlohmann::json body{{"model", cfg.model},
                            {"prompt", prompt},
                            {"stop", {std::string(stop_token)}},
                            {"max_tokens", cfg.max_tokens},
                            {"temperature", 0}};
  const std::string payload = body.dump();

  auto backoff = cfg.initial_backoff;
  std::string last_error = "no attempt made";
  bool rate_limited = false;
  for (int attempt = 0; attempt < cfg.attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    auto res = client.Post(target.path, payload, "application/json");
    if (!res) {
      rate_limited = false;
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403)
      throw AuthError("endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
    if (res->status == 429) {
      rate_limited = true;
      last_error = "HTTP 429";
      continue;
    }
    if (res->status >= 500) {
      rate_limited = false;
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw NetworkError("unexpected HTTP " + std::to_string(res->status) + ": " + res->body);
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw NetworkError(std::string("malformed completion response: ") + e.what());
    }
  }
  if (rate_limited)
    throw RateLimited("rate limited after " + std::to_string(cfg.attempts) + " attempts");
  throw NetworkError("request failed after " + std::to_string(cfg.attempts) +
                     " attempts: " + last_error);
}

}  // namespace nesyarith::llm

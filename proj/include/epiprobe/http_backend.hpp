#pragma once

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>

#include "completion.hpp"
#include "error.hpp"
#include "mock_backend.hpp"
#include "util.hpp"

namespace epiprobe {

struct HttpBackendConfig {
  std::string base_url = "https://api.openai.com/v1";  // POSTs go to <base_url>/completions
  std::string model;
  std::string api_key_env = "EPISTEMIC_PROBE_API_KEY";
  bool supports_logprobs = true;  // false for endpoints that only return text
  int max_attempts = 5;
  std::chrono::milliseconds backoff_base{500};
  std::chrono::milliseconds backoff_max{8000};
  std::size_t concurrency = 4;
  double requests_per_second = 0.0;  // 0 disables rate limiting
  std::chrono::seconds timeout{60};
};

class TokenBucket {
 public:
  explicit TokenBucket(double rate) : rate_(rate), capacity_(std::max(1.0, rate)), tokens_(capacity_) {}

  void acquire() {
    if (rate_ <= 0.0) return;
    for (;;) {
      std::chrono::duration<double> wait{0};
      {
        std::lock_guard lock(mu_);
        const auto now = std::chrono::steady_clock::now();
        tokens_ = std::min(capacity_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
        last_ = now;
        if (tokens_ >= 1.0) {
          tokens_ -= 1.0;
          return;
        }
        wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
      }
      std::this_thread::sleep_for(wait);
    }
  }

 private:
  double rate_;
  double capacity_;
  double tokens_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  std::mutex mu_;
};

namespace detail {

struct ParsedUrl {
  std::string scheme_host_port;  // "https://host:port"
  std::string path;              // "/v1"
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw PreconditionError("endpoint URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl p;
  p.scheme_host_port = url.substr(0, path_start);
  p.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!p.path.empty() && p.path.back() == '/') p.path.pop_back();
  return p;
}

}  // namespace detail

// Parses an OpenAI-style /completions response body (first choice).
inline Completion parse_completion_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("response is not JSON: ") + e.what());
  }
  try {
    const auto& choice = j.at("choices").at(0);
    Completion c;
    c.text = choice.at("text").get<std::string>();
    c.finish_reason = choice.contains("finish_reason") && choice["finish_reason"].is_string()
                          ? parse_finish_reason(choice["finish_reason"].get<std::string>())
                          : FinishReason::Other;
    c.created = j.value("created", std::int64_t{0});
    const auto lp = choice.find("logprobs");
    if (lp != choice.end() && lp->is_object() && lp->contains("tokens")) {
      const auto& tokens = lp->at("tokens");
      const auto& token_lps = lp->at("token_logprobs");
      const auto top = lp->find("top_logprobs");
      if (token_lps.size() != tokens.size()) throw ProtocolError("tokens and token_logprobs differ in length");
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        TokenStep s;
        s.token = tokens[i].get<std::string>();
        s.logprob = token_lps[i].is_number() ? token_lps[i].get<double>() : 0.0;
        if (top != lp->end() && top->is_array() && i < top->size() && (*top)[i].is_object()) {
          for (const auto& [tok, v] : (*top)[i].items()) s.alternatives[tok] = v.get<double>();
          if (token_lps[i].is_number()) s.alternatives[s.token] = s.logprob;
        }
        c.steps.push_back(std::move(s));
      }
    } else {
      // text-only endpoint: steps carry tokens but no probabilities
      for (auto& tok : mock_tokenize(c.text)) c.steps.push_back(TokenStep{std::move(tok), 0.0, {}});
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("unexpected response shape: ") + e.what());
  }
}

class HttpBackend final : public Backend {
 public:
  using SleepFn = std::function<void(std::chrono::milliseconds)>;

  explicit HttpBackend(HttpBackendConfig cfg, SleepFn sleep = {})
      : cfg_(std::move(cfg)), url_(detail::parse_url(cfg_.base_url)), bucket_(cfg_.requests_per_second), sleep_(std::move(sleep)) {
    if (cfg_.model.empty()) throw PreconditionError("http backend: model is required");
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
    if (!sleep_) sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }

  std::string model_id() const override { return cfg_.model; }
  std::size_t max_concurrency() const override { return std::max<std::size_t>(1, cfg_.concurrency); }
  bool supports_scoring() const override { return cfg_.supports_logprobs; }

  Completion complete(const CompletionRequest& request) override {
    request.check();
    nlohmann::json body = {{"model", cfg_.model},
                           {"prompt", request.prompt},
                           {"max_tokens", request.max_tokens},
                           {"temperature", request.temperature},
                           {"seed", request.seed}};
    if (cfg_.supports_logprobs && request.top_k_alternatives > 0) body["logprobs"] = request.top_k_alternatives;
    auto c = parse_completion_response(post(body.dump()));
    if (static_cast<int>(c.steps.size()) > request.max_tokens) c.steps.resize(static_cast<std::size_t>(request.max_tokens));
    return c;
  }

  std::vector<TokenStep> score_text(std::string_view context, std::string_view continuation) override {
    if (!cfg_.supports_logprobs) throw CapabilityError("endpoint does not return log-probabilities");
    const std::string full = std::string(context) + std::string(continuation);
    nlohmann::json body = {{"model", cfg_.model}, {"prompt", full}, {"max_tokens", 1}, {"temperature", 0.0}, {"echo", true}, {"logprobs", 0}};
    const auto resp = post(body.dump());
    std::vector<TokenStep> out;
    try {
      const auto j = nlohmann::json::parse(resp);
      const auto& lp = j.at("choices").at(0).at("logprobs");
      const auto& tokens = lp.at("tokens");
      const auto& lps = lp.at("token_logprobs");
      const auto& offsets = lp.at("text_offset");
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto off = offsets.at(i).get<std::size_t>();
        const auto tok = tokens[i].get<std::string>();
        if (off + tok.size() <= context.size() || off >= full.size()) continue;
        if (!lps[i].is_number()) throw ProtocolError("missing logprob for scored token");
        out.push_back(TokenStep{tok, lps[i].get<double>(), {}});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("unexpected scoring response: ") + e.what());
    }
    return out;
  }

 private:
  static bool retryable(int status) { return status == 429 || status >= 500; }

  std::string post(const std::string& body) {
    std::mt19937_64 jitter(std::random_device{}());
    std::string last_error;
    int last_status = 0;
    for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
      if (attempt > 0) {
        auto d = cfg_.backoff_base * (1LL << std::min(attempt - 1, 20));
        d = std::min<std::chrono::milliseconds>(d, cfg_.backoff_max);
        const double scale = 0.5 + 0.5 * std::uniform_real_distribution<double>(0.0, 1.0)(jitter);
        sleep_(std::chrono::milliseconds(static_cast<long long>(static_cast<double>(d.count()) * scale)));
      }
      bucket_.acquire();
      httplib::Client cli(url_.scheme_host_port);
      cli.set_connection_timeout(cfg_.timeout);
      cli.set_read_timeout(cfg_.timeout);
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
      auto res = cli.Post(url_.path + "/completions", headers, body, "application/json");
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        last_status = 0;
        continue;
      }
      if (res->status >= 200 && res->status < 300) return res->body;
      last_status = res->status;
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
      if (!retryable(res->status)) throw TransportError(last_error, res->status);
    }
    throw TransportError("giving up after " + std::to_string(cfg_.max_attempts) + " attempts; last error " + last_error, last_status);
  }

  HttpBackendConfig cfg_;
  detail::ParsedUrl url_;
  TokenBucket bucket_;
  SleepFn sleep_;
  std::string api_key_;
};

}  // namespace epiprobe

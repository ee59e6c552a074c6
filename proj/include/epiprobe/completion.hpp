#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "typology.hpp"
#include "util.hpp"

namespace epiprobe {

// Identifies which (item, template) a prompt was built from. Only the mock
// backend reads it; it never reaches the wire or the cache key.
struct ProbeTag {
  std::string item_id;
  std::string template_id;
  LinguisticFeatures features;
};

struct CompletionRequest {
  std::string prompt;
  int max_tokens = 10;
  double temperature = 1.0;
  int top_k_alternatives = 5;
  std::string model_id;
  std::uint64_t seed = 0;
  std::optional<ProbeTag> tag;

  void check() const {
    if (max_tokens < 1) throw PreconditionError("max_tokens must be >= 1");
    if (top_k_alternatives < 0) throw PreconditionError("top_k_alternatives must be >= 0");
    if (!(temperature >= 0.0)) throw PreconditionError("temperature must be nonnegative");
  }
};

// Canonical identity of a request for caching. Excludes the probe tag.
inline std::string request_key_material(const CompletionRequest& r) {
  nlohmann::json j = {{"model", r.model_id},       {"prompt", r.prompt}, {"max_tokens", r.max_tokens},
                      {"temperature", r.temperature}, {"top_k", r.top_k_alternatives}, {"seed", r.seed}};
  return j.dump();
}

inline std::string request_digest(const CompletionRequest& r) { return sha256_hex(request_key_material(r)); }

struct TokenStep {
  std::string token;
  double logprob = 0.0;                    // natural log
  std::map<std::string, double> alternatives;  // token -> logprob, includes the emitted token when present

  friend bool operator==(const TokenStep&, const TokenStep&) = default;
};

enum class FinishReason { Length, Stop, Other };

inline std::string_view to_string(FinishReason f) {
  switch (f) {
    case FinishReason::Length: return "length";
    case FinishReason::Stop: return "stop";
    case FinishReason::Other: return "other";
  }
  return "other";
}

inline FinishReason parse_finish_reason(std::string_view s) {
  if (s == "length") return FinishReason::Length;
  if (s == "stop") return FinishReason::Stop;
  return FinishReason::Other;
}

struct Completion {
  std::vector<TokenStep> steps;
  std::string text;
  FinishReason finish_reason = FinishReason::Other;
  std::int64_t created = 0;  // unix seconds reported by the producer; 0 for offline backends

  bool has_alternatives() const {
    for (const auto& s : steps)
      if (!s.alternatives.empty()) return true;
    return false;
  }

  friend bool operator==(const Completion&, const Completion&) = default;
};

inline std::string join_tokens(const std::vector<TokenStep>& steps) {
  std::string out;
  for (const auto& s : steps) out += s.token;
  return out;
}

// ---------------------------------------------------------------------------
// JSON codec. Doubles round-trip exactly through nlohmann's shortest representation.

inline nlohmann::json to_json(const TokenStep& s) {
  nlohmann::json alts = nlohmann::json::object();
  for (const auto& [tok, lp] : s.alternatives) alts[tok] = lp;
  return {{"token", s.token}, {"logprob", s.logprob}, {"alternatives", alts}};
}

inline nlohmann::json to_json(const Completion& c) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : c.steps) steps.push_back(to_json(s));
  return {{"text", c.text}, {"finish_reason", to_string(c.finish_reason)}, {"created", c.created}, {"steps", steps}};
}

inline TokenStep token_step_from_json(const nlohmann::json& j) {
  TokenStep s;
  s.token = j.at("token").get<std::string>();
  s.logprob = j.at("logprob").get<double>();
  for (const auto& [tok, lp] : j.at("alternatives").items()) s.alternatives[tok] = lp.get<double>();
  return s;
}

inline Completion completion_from_json(const nlohmann::json& j) {
  try {
    Completion c;
    c.text = j.at("text").get<std::string>();
    c.finish_reason = parse_finish_reason(j.at("finish_reason").get<std::string>());
    c.created = j.value("created", std::int64_t{0});
    for (const auto& s : j.at("steps")) c.steps.push_back(token_step_from_json(s));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed completion: ") + e.what());
  }
}

inline std::string encode_completion(const Completion& c) { return to_json(c).dump(); }

inline Completion decode_completion(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed completion: ") + e.what());
  }
  return completion_from_json(j);
}

// ---------------------------------------------------------------------------
// Backend interface

class Backend {
 public:
  virtual ~Backend() = default;

  virtual Completion complete(const CompletionRequest& request) = 0;

  // Per-token log-probabilities of `continuation` given `context`.
  virtual std::vector<TokenStep> score_text(std::string_view /*context*/, std::string_view /*continuation*/) {
    throw CapabilityError("backend '" + model_id() + "' does not support scoring");
  }

  virtual bool supports_scoring() const { return false; }
  virtual std::string model_id() const = 0;
  virtual std::size_t max_concurrency() const { return 1; }
};

}  // namespace epiprobe

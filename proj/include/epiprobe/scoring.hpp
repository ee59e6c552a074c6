#pragma once

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "completion.hpp"
#include "error.hpp"
#include "probe.hpp"
#include "qa_data.hpp"
#include "typology.hpp"
#include "util.hpp"

namespace epiprobe {

inline constexpr std::size_t kScoredSteps = 10;

// Lowercase, trim whitespace and punctuation at both ends, collapse internal
// whitespace, drop a leading "a"/"an"/"the".
inline std::string normalize_answer(std::string_view text) {
  auto is_edge = [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return is_space(c) || (u < 0x80 && std::ispunct(u));
  };
  auto strip = [&](std::string_view s) {
    while (!s.empty() && is_edge(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_edge(s.back())) s.remove_suffix(1);
    return s;
  };
  std::string collapsed;
  for (const auto& w : split_whitespace(to_lower_ascii(strip(text)))) {
    if (!collapsed.empty()) collapsed.push_back(' ');
    collapsed += w;
  }
  for (std::string_view article : {"a ", "an ", "the "}) {
    if (collapsed.size() > article.size() && collapsed.compare(0, article.size(), article) == 0) {
      collapsed = std::string(strip(std::string_view(collapsed).substr(article.size())));
      break;
    }
  }
  return collapsed;
}

inline std::set<std::string> normalized_alias_set(const std::vector<std::string>& aliases) {
  std::set<std::string> out;
  for (const auto& a : aliases) {
    auto n = normalize_answer(a);
    if (!n.empty()) out.insert(std::move(n));
  }
  return out;
}

struct MatchOptions {
  // Reject matches directly preceded by a negation ("not", "never", "n't").
  bool negation_guard = false;
  std::size_t max_steps = kScoredSteps;
};

struct MatchResult {
  bool correct = false;
  std::optional<std::size_t> answer_position;
};

namespace detail {

inline bool negated_before(const std::vector<TokenStep>& steps, std::size_t start) {
  const std::size_t from = start >= 3 ? start - 3 : 0;
  for (std::size_t k = from; k < start; ++k) {
    const auto w = normalize_answer(steps[k].token);
    const auto raw = to_lower_ascii(trim(steps[k].token));
    if (w == "not" || w == "never" || w == "no" || (raw.size() >= 3 && raw.compare(raw.size() - 3, 3, "n't") == 0)) return true;
  }
  return false;
}

}  // namespace detail

// Correct iff a single generated token, or a contiguous run of tokens, normalizes
// to a gold alias. Reports the start of the shortest matching span among those
// that end earliest. Only the first `max_steps` steps are considered.
inline MatchResult is_correct(const Completion& completion, const std::vector<std::string>& gold_aliases,
                              const MatchOptions& opts = {}) {
  const auto golds = normalized_alias_set(gold_aliases);
  const auto n = std::min(completion.steps.size(), opts.max_steps);
  for (std::size_t end = 0; end < n; ++end) {
    std::string span;
    for (std::size_t start = end + 1; start-- > 0;) {
      span.insert(0, completion.steps[start].token);
      if (!golds.count(normalize_answer(span))) continue;
      if (opts.negation_guard && detail::negated_before(completion.steps, start)) continue;
      return {true, start};
    }
  }
  return {false, std::nullopt};
}

// Position where probability-on-gold is read: the matched step when there is
// one, else the first step listing any alias among its alternatives, else 0.
inline std::optional<std::size_t> evaluation_position(const Completion& completion, const std::vector<std::string>& gold_aliases,
                                                      std::optional<std::size_t> answer_position) {
  const auto n = std::min(completion.steps.size(), kScoredSteps);
  if (n == 0) return std::nullopt;
  if (answer_position && *answer_position < n) return answer_position;
  const auto golds = normalized_alias_set(gold_aliases);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [tok, _] : completion.steps[i].alternatives)
      if (golds.count(normalize_answer(tok))) return i;
  return std::size_t{0};
}

// Summed probability of the alternatives whose token normalizes to a gold alias,
// read at evaluation_position. Absent when that step carries no alternatives.
inline std::optional<double> probability_on_gold(const Completion& completion, const std::vector<std::string>& gold_aliases,
                                                 std::optional<std::size_t> answer_position = std::nullopt) {
  const auto pos = evaluation_position(completion, gold_aliases, answer_position);
  if (!pos) return std::nullopt;
  const auto& step = completion.steps[*pos];
  if (step.alternatives.empty()) return std::nullopt;
  const auto golds = normalized_alias_set(gold_aliases);
  double mass = 0.0;
  for (const auto& [tok, lp] : step.alternatives)
    if (golds.count(normalize_answer(tok))) mass += std::exp(lp);
  return std::min(mass, 1.0);
}

// Entropy (nats) of the alternatives after removing the most probable one and
// renormalizing the rest.
inline double alt_entropy(const TokenStep& step) {
  if (step.alternatives.size() < 2) throw PreconditionError("alt_entropy needs at least two alternatives");
  std::vector<double> p;
  for (const auto& [_, lp] : step.alternatives) p.push_back(std::exp(lp));
  p.erase(std::max_element(p.begin(), p.end()));
  double total = 0.0;
  for (double x : p) total += x;
  double h = 0.0;
  for (double x : p) {
    const double q = x / total;
    if (q > 0.0) h -= q * std::log(q);
  }
  return h;
}

// Entropy (nats) of the renormalized alternatives, top token included.
inline double topk_entropy(const TokenStep& step) {
  if (step.alternatives.empty()) throw PreconditionError("topk_entropy needs alternatives");
  double total = 0.0;
  for (const auto& [_, lp] : step.alternatives) total += std::exp(lp);
  double h = 0.0;
  for (const auto& [_, lp] : step.alternatives) {
    const double q = std::exp(lp) / total;
    if (q > 0.0) h -= q * std::log(q);
  }
  return h;
}

inline double perplexity_from_logprobs(const std::vector<double>& logprobs) {
  if (logprobs.empty()) throw PreconditionError("perplexity of an empty token sequence");
  double sum = 0.0;
  for (double lp : logprobs) sum += lp;
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

// exp(-mean token logprob) of the template surface following the carrier prompt.
inline double template_perplexity(const MarkerTemplate& tmpl, std::string_view carrier_prompt, Backend& backend) {
  if (!backend.supports_scoring()) throw CapabilityError("backend '" + backend.model_id() + "' cannot score text");
  const auto steps = backend.score_text(carrier_prompt, " " + std::string(trim(tmpl.surface)));
  std::vector<double> lps;
  for (const auto& s : steps) lps.push_back(s.logprob);
  return perplexity_from_logprobs(lps);
}

// ---------------------------------------------------------------------------
// Per-record scoring

struct ScoredResult {
  std::string item_id;
  std::string template_id;
  std::optional<int> stated_pct;
  bool correct = false;
  std::optional<double> prob_on_gold;
  std::optional<std::size_t> answer_position;
  std::optional<double> alt_entropy;
  std::optional<double> top_prob;  // probability of the most likely alternative at the evaluation step

  friend bool operator==(const ScoredResult&, const ScoredResult&) = default;
};

inline ScoredResult score_completion(const Completion& completion, const std::vector<std::string>& gold_aliases,
                                     const MatchOptions& opts = {}) {
  ScoredResult r;
  const auto m = is_correct(completion, gold_aliases, opts);
  r.correct = m.correct;
  r.answer_position = m.answer_position;
  r.prob_on_gold = probability_on_gold(completion, gold_aliases, m.answer_position);
  if (const auto pos = evaluation_position(completion, gold_aliases, m.answer_position)) {
    const auto& step = completion.steps[*pos];
    if (step.alternatives.size() >= 2) r.alt_entropy = alt_entropy(step);
    if (!step.alternatives.empty()) {
      double best = -INFINITY;
      for (const auto& [_, lp] : step.alternatives) best = std::max(best, lp);
      r.top_prob = std::exp(best);
    }
  }
  return r;
}

struct ScoreRunResult {
  std::vector<ScoredResult> results;
  std::size_t skipped_errors = 0;
};

// Scores every successful record against its item's aliases; error records are skipped and counted.
inline ScoreRunResult score_records(const std::vector<ProbeRecord>& records, const std::vector<QAItem>& items,
                                    const MatchOptions& opts = {}) {
  std::unordered_map<std::string, const QAItem*> by_id;
  for (const auto& it : items) by_id.emplace(it.id, &it);
  ScoreRunResult out;
  for (const auto& rec : records) {
    if (!rec.completion) {
      ++out.skipped_errors;
      continue;
    }
    auto it = by_id.find(rec.item_id);
    if (it == by_id.end()) throw PreconditionError("record refers to unknown item '" + rec.item_id + "'");
    auto r = score_completion(*rec.completion, it->second->gold_aliases, opts);
    r.item_id = rec.item_id;
    r.template_id = rec.template_id;
    r.stated_pct = rec.stated_pct;
    out.results.push_back(std::move(r));
  }
  return out;
}

inline nlohmann::json to_json(const ScoredResult& r) {
  auto opt = [](const auto& o) { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); };
  return {{"item_id", r.item_id},           {"template_id", r.template_id},     {"stated_pct", opt(r.stated_pct)},
          {"correct", r.correct},           {"prob_on_gold", opt(r.prob_on_gold)}, {"answer_position", opt(r.answer_position)},
          {"alt_entropy", opt(r.alt_entropy)}, {"top_prob", opt(r.top_prob)}};
}

inline ScoredResult scored_result_from_json(const nlohmann::json& j) {
  ScoredResult r;
  r.item_id = j.at("item_id").get<std::string>();
  r.template_id = j.at("template_id").get<std::string>();
  r.correct = j.at("correct").get<bool>();
  auto get = [&](const char* k, auto& dst) {
    if (j.contains(k) && !j[k].is_null()) dst = j[k].get<typename std::decay_t<decltype(dst)>::value_type>();
  };
  get("stated_pct", r.stated_pct);
  get("prob_on_gold", r.prob_on_gold);
  get("answer_position", r.answer_position);
  get("alt_entropy", r.alt_entropy);
  get("top_prob", r.top_prob);
  return r;
}

inline std::string scored_to_jsonl(const std::vector<ScoredResult>& results) {
  std::string out;
  for (const auto& r : results) out += to_json(r).dump() + '\n';
  return out;
}

inline std::vector<ScoredResult> scored_from_jsonl(std::string_view text) {
  std::vector<ScoredResult> out;
  std::size_t lineno = 0;
  for (const auto& line : split(text, '\n')) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(scored_result_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad scored result: ") + e.what(), lineno);
    }
  }
  return out;
}

}  // namespace epiprobe

#pragma once

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "completion.hpp"
#include "error.hpp"
#include "qa_data.hpp"
#include "typology.hpp"
#include "util.hpp"

namespace epiprobe {

// Multiplies the gold answer's probability by `factor` when a template's
// feature `feature` equals `value`.
struct FeatureModifier {
  std::string feature;  // strength | shield | evidential | factive | sourced | first_person
  std::string value;    // "true"/"false" for booleans, enum spelling otherwise
  double factor = 1.0;

  bool matches(const LinguisticFeatures& f) const {
    auto b = [&](bool v) { return value == (v ? "true" : "false"); };
    if (feature == "strength") return to_lower_ascii(value) == to_lower_ascii(to_string(f.strength));
    if (feature == "shield") return to_lower_ascii(value) == to_lower_ascii(to_string(f.shield));
    if (feature == "evidential") return b(f.evidential);
    if (feature == "factive") return b(f.factive);
    if (feature == "sourced") return b(f.sourced);
    if (feature == "first_person") return b(f.first_person);
    throw PreconditionError("unknown modifier feature '" + feature + "'");
  }
};

struct MockItem {
  std::string id;
  std::string question;
  std::string gold;
  std::map<std::string, double> distribution;  // candidate answer -> probability, sums to 1
};

struct MockModelSpec {
  std::string model_id = "mock";
  std::uint64_t seed = 0;
  std::vector<MockItem> items;
  std::vector<FeatureModifier> modifiers;
  std::map<std::string, std::vector<std::string>> filler;  // template id -> tokens emitted before the answer
  std::map<std::string, double> token_logprobs;           // scoring table for non-answer tokens
  double default_token_logprob = -4.0;

  void check() const {
    for (const auto& it : items) {
      double sum = 0.0;
      for (const auto& [tok, p] : it.distribution) {
        if (!(p > 0.0 && p <= 1.0)) throw ValidationError("mock item '" + it.id + "': probability of '" + tok + "' outside (0,1]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("mock item '" + it.id + "': distribution sums to " + std::to_string(sum));
      if (!it.distribution.count(it.gold)) throw ValidationError("mock item '" + it.id + "': gold answer not among candidates");
    }
    for (const auto& m : modifiers) {
      if (!(m.factor > 0.0)) throw ValidationError("modifier factor must be positive");
      (void)m.matches(LinguisticFeatures{});  // rejects unknown feature names
    }
  }
};

inline nlohmann::json to_json(const MockModelSpec& s) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : s.items)
    items.push_back({{"id", it.id}, {"question", it.question}, {"gold", it.gold}, {"distribution", it.distribution}});
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : s.modifiers) mods.push_back({{"feature", m.feature}, {"value", m.value}, {"factor", m.factor}});
  return {{"model_id", s.model_id}, {"seed", s.seed},     {"modifiers", mods},
          {"filler", s.filler},     {"token_logprobs", s.token_logprobs},
          {"default_token_logprob", s.default_token_logprob}, {"items", items}};
}

inline MockModelSpec mock_spec_from_json(const nlohmann::json& j) {
  MockModelSpec s;
  try {
    s.model_id = j.value("model_id", std::string("mock"));
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("modifiers"))
      for (const auto& m : j.at("modifiers")) {
        FeatureModifier fm;
        fm.feature = m.at("feature").get<std::string>();
        const auto& v = m.at("value");
        fm.value = v.is_boolean() ? (v.get<bool>() ? "true" : "false") : v.get<std::string>();
        fm.factor = m.at("factor").get<double>();
        s.modifiers.push_back(std::move(fm));
      }
    if (j.contains("filler")) s.filler = j.at("filler").get<std::map<std::string, std::vector<std::string>>>();
    if (j.contains("token_logprobs")) s.token_logprobs = j.at("token_logprobs").get<std::map<std::string, double>>();
    s.default_token_logprob = j.value("default_token_logprob", -4.0);
    for (const auto& it : j.at("items")) {
      MockItem mi;
      mi.id = it.at("id").get<std::string>();
      mi.question = it.value("question", std::string());
      mi.gold = it.at("gold").get<std::string>();
      mi.distribution = it.at("distribution").get<std::map<std::string, double>>();
      s.items.push_back(std::move(mi));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed mock spec: ") + e.what());
  }
  s.check();
  return s;
}

inline MockModelSpec load_mock_spec(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return mock_spec_from_json(j);
}

// Base distribution with the gold probability scaled by every matching
// modifier, then renormalized.
inline std::map<std::string, double> modified_distribution(const MockItem& item, const std::vector<FeatureModifier>& modifiers,
                                                           const std::optional<LinguisticFeatures>& features) {
  double factor = 1.0;
  if (features)
    for (const auto& m : modifiers)
      if (m.matches(*features)) factor *= m.factor;
  if (factor == 1.0) return item.distribution;
  auto dist = item.distribution;
  dist[item.gold] *= factor;
  double total = 0.0;
  for (const auto& [_, p] : dist) total += p;
  for (auto& [_, p] : dist) p /= total;
  return dist;
}

// Splits text into tokens carrying their leading whitespace (" think");
// ASCII punctuation forms single-character tokens.
inline std::vector<std::string> mock_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  std::string pending_space;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (is_space(c)) {
      flush();
      pending_space.push_back(c);
    } else if (u < 0x80 && std::ispunct(u)) {
      flush();
      out.push_back(pending_space + c);
      pending_space.clear();
    } else {
      if (cur.empty()) {
        cur = pending_space;
        pending_space.clear();
      }
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

class MockBackend final : public Backend {
 public:
  explicit MockBackend(MockModelSpec spec, std::size_t concurrency = 4) : spec_(std::move(spec)), concurrency_(concurrency) {
    spec_.check();
    for (std::size_t i = 0; i < spec_.items.size(); ++i) {
      by_id_.emplace(spec_.items[i].id, i);
      if (!spec_.items[i].question.empty()) by_question_.emplace(spec_.items[i].question, i);
    }
  }

  const MockModelSpec& spec() const { return spec_; }
  std::string model_id() const override { return spec_.model_id; }
  std::size_t max_concurrency() const override { return concurrency_; }
  bool supports_scoring() const override { return true; }

  Completion complete(const CompletionRequest& request) override {
    request.check();
    const MockItem& item = resolve(request);
    std::optional<LinguisticFeatures> features;
    std::string template_id;
    if (request.tag) {
      features = request.tag->features;
      template_id = request.tag->template_id;
    }
    const auto dist = modified_distribution(item, spec_.modifiers, features);

    auto rng = make_rng(spec_.seed ^ splitmix64(request.seed) ^ fnv1a64(request.prompt));
    const std::string answer = pick(dist, request.temperature, rng);

    Completion c;
    const bool want_alts = request.top_k_alternatives > 0;
    auto push = [&](TokenStep s) {
      if (static_cast<int>(c.steps.size()) >= request.max_tokens) return false;
      c.steps.push_back(std::move(s));
      return true;
    };
    auto certain_step = [&](std::string tok) {
      TokenStep s{tok, 0.0, {}};
      if (want_alts) s.alternatives[tok] = 0.0;
      return s;
    };

    bool room = true;
    if (auto f = spec_.filler.find(template_id); f != spec_.filler.end())
      for (const auto& tok : f->second) room = room && push(certain_step(tok));

    if (room) {
      TokenStep s;
      s.token = " " + answer;
      s.logprob = std::log(dist.at(answer));
      if (want_alts) {
        for (const auto& [tok, p] : top_k(dist, static_cast<std::size_t>(request.top_k_alternatives))) s.alternatives[" " + tok] = std::log(p);
        s.alternatives[s.token] = s.logprob;
      }
      room = push(std::move(s));
    }
    if (room) room = push(certain_step("."));
    c.finish_reason = room ? FinishReason::Stop : FinishReason::Length;
    c.text = join_tokens(c.steps);
    return c;
  }

  std::vector<TokenStep> score_text(std::string_view context, std::string_view continuation) override {
    const MockItem* item = find_by_prompt(context);
    std::vector<TokenStep> out;
    for (const auto& tok : mock_tokenize(continuation)) {
      const auto bare = std::string(trim(tok));
      double lp = spec_.default_token_logprob;
      if (item && item->distribution.count(bare)) lp = std::log(item->distribution.at(bare));
      else if (auto it = spec_.token_logprobs.find(bare); it != spec_.token_logprobs.end()) lp = it->second;
      out.push_back(TokenStep{tok, lp, {}});
    }
    return out;
  }

 private:
  static std::vector<std::pair<std::string, double>> top_k(const std::map<std::string, double>& dist, std::size_t k) {
    std::vector<std::pair<std::string, double>> v(dist.begin(), dist.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (v.size() > k) v.resize(k);
    return v;
  }

  static std::string pick(const std::map<std::string, double>& dist, double temperature, Rng& rng) {
    if (temperature == 0.0) return top_k(dist, 1).front().first;
    std::vector<std::pair<std::string, double>> w;
    double total = 0.0;
    for (const auto& [tok, p] : dist) {
      const double x = std::pow(p, 1.0 / temperature);
      w.emplace_back(tok, x);
      total += x;
    }
    double u = uniform_unit(rng) * total;
    for (const auto& [tok, x] : w) {
      if (u < x) return tok;
      u -= x;
    }
    return w.back().first;
  }

  const MockItem* find_by_prompt(std::string_view prompt) const {
    // prompts look like "Q: <question>\nA: ..." (or with a space instead of the newline)
    if (prompt.substr(0, 3) != "Q: ") return nullptr;
    auto rest = prompt.substr(3);
    for (auto sep : {std::string_view("\nA:"), std::string_view(" A:")}) {
      auto pos = rest.rfind(sep);
      if (pos == std::string_view::npos) continue;
      if (auto it = by_question_.find(std::string(rest.substr(0, pos))); it != by_question_.end()) return &spec_.items[it->second];
    }
    return nullptr;
  }

  const MockItem& resolve(const CompletionRequest& r) const {
    if (r.tag) {
      auto it = by_id_.find(r.tag->item_id);
      if (it == by_id_.end()) throw PreconditionError("mock backend: unknown question id '" + r.tag->item_id + "'");
      return spec_.items[it->second];
    }
    if (const auto* item = find_by_prompt(r.prompt)) return *item;
    throw PreconditionError("mock backend: cannot identify the question in the prompt");
  }

  MockModelSpec spec_;
  std::size_t concurrency_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unordered_map<std::string, std::size_t> by_question_;
};

// ---------------------------------------------------------------------------
// Synthetic benchmark: items with single-token answers plus a matching spec.

struct SyntheticBenchmark {
  std::vector<QAItem> items;
  MockModelSpec spec;
};

inline SyntheticBenchmark make_synthetic_benchmark(std::size_t n_items, std::uint64_t seed, std::vector<FeatureModifier> modifiers) {
  SyntheticBenchmark b;
  b.spec.model_id = "mock";
  b.spec.seed = seed;
  b.spec.modifiers = std::move(modifiers);
  b.spec.filler = {{"allegedly", {",", " said", " to", " be"}}, {"rumor-says", {",", " the", " answer", " is"}}};
  b.spec.token_logprobs = {{"I", -2.5}, {"think", -1.5}, {"it", -1.0}, {"'", -0.5}, {"s", -0.1}, {"sure", -2.0}};
  auto rng = make_rng(seed);
  for (std::size_t k = 1; k <= n_items; ++k) {
    const auto num = std::to_string(k);
    std::string id = "syn-" + std::string(4 - std::min<std::size_t>(4, num.size()), '0') + num;
    std::string question = "What is the capital of Syntheticland " + num + "?";
    std::string gold = "Capital" + num;
    MockItem mi{id, question, gold, {}};
    const double p_gold = 0.01 + 0.98 * uniform_unit(rng);
    const double w1 = 1.0 + uniform_unit(rng), w2 = 1.0 + uniform_unit(rng), w3 = 1.0 + uniform_unit(rng);
    const double rest = 1.0 - p_gold, wsum = w1 + w2 + w3;
    mi.distribution[gold] = p_gold;
    mi.distribution["Decoy" + num + "a"] = rest * w1 / wsum;
    mi.distribution["Decoy" + num + "b"] = rest * w2 / wsum;
    mi.distribution["Decoy" + num + "c"] = 1.0 - p_gold - rest * w1 / wsum - rest * w2 / wsum;
    b.items.push_back(QAItem{id, question, {gold}, "synthetic"});
    b.spec.items.push_back(std::move(mi));
  }
  b.spec.check();
  return b;
}

}  // namespace epiprobe

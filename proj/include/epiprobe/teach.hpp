#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "completion.hpp"
#include "error.hpp"
#include "qa_data.hpp"
#include "scoring.hpp"
#include "util.hpp"

namespace epiprobe {

enum class Direction { Certainty, Uncertainty };
enum class Placement { Prefix, Suffix };
enum class Ordering { Ascending, Descending, Random };

inline std::string_view to_string(Direction d) { return d == Direction::Certainty ? "certainty" : "uncertainty"; }
inline std::string_view to_string(Placement p) { return p == Placement::Prefix ? "prefix" : "suffix"; }
inline std::string_view to_string(Ordering o) {
  switch (o) {
    case Ordering::Ascending: return "ascending";
    case Ordering::Descending: return "descending";
    case Ordering::Random: return "random";
  }
  return "ascending";
}

inline Direction parse_direction(std::string_view s) {
  if (s == "certainty") return Direction::Certainty;
  if (s == "uncertainty") return Direction::Uncertainty;
  throw ValidationError("unknown direction '" + std::string(s) + "'");
}
inline Placement parse_placement(std::string_view s) {
  if (s == "prefix") return Placement::Prefix;
  if (s == "suffix") return Placement::Suffix;
  throw ValidationError("unknown placement '" + std::string(s) + "'");
}
inline Ordering parse_ordering(std::string_view s) {
  if (s == "ascending") return Ordering::Ascending;
  if (s == "descending") return Ordering::Descending;
  if (s == "random") return Ordering::Random;
  throw ValidationError("unknown ordering '" + std::string(s) + "'");
}

// One marker in its two placements: "I think." after the answer, "I think it's" before it.
struct MarkerPair {
  std::string id;
  Direction direction = Direction::Certainty;
  std::string suffix;
  std::string prefix;

  const std::string& form(Placement p) const { return p == Placement::Prefix ? prefix : suffix; }
};

inline std::vector<MarkerPair> builtin_marker_pairs() {
  return {
      {"undoubtedly", Direction::Certainty, "Undoubtedly.", "Undoubtedly it's"},
      {"full-confidence", Direction::Certainty, "With 100% confidence.", "With 100% confidence it's"},
      {"we-know", Direction::Certainty, "We know it.", "We know it's"},
      {"evidently", Direction::Certainty, "Evidently.", "Evidently it's"},
      {"must-be", Direction::Certainty, "It must be.", "It must be"},
      {"i-think", Direction::Uncertainty, "I think.", "I think it's"},
      {"could-be", Direction::Uncertainty, "It could be.", "It could be"},
      {"double-check", Direction::Uncertainty, "But I would need to double check.", "I would need to double check but maybe it's"},
      {"suppose", Direction::Uncertainty, "I suppose.", "I suppose it's"},
      {"no-money-on-it", Direction::Uncertainty, "But I wouldn't put money on it.", "I wouldn't put money on it but maybe it's"},
  };
}

inline const MarkerPair& find_marker_pair(const std::vector<MarkerPair>& pairs, std::string_view id) {
  for (const auto& p : pairs)
    if (p.id == id) return p;
  throw ValidationError("unknown marker pair '" + std::string(id) + "'");
}

struct FewShotExample {
  std::string item_id;
  std::string question;
  std::string answer;
  double prob_on_gold = 0.0;
  bool marker_attached = false;
  Placement placement = Placement::Suffix;

  friend bool operator==(const FewShotExample&, const FewShotExample&) = default;
};

struct TeachConfig {
  Direction direction = Direction::Certainty;
  double threshold = 0.5;
  Placement placement = Placement::Suffix;
  Ordering ordering = Ordering::Ascending;
  MarkerPair marker = builtin_marker_pairs().front();
  std::uint64_t seed = 0;

  void check() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("teach threshold must lie in (0,1)");
    if (marker.form(placement).empty()) throw ValidationError("marker '" + marker.id + "' has no " + std::string(to_string(placement)) + " form");
  }
};

inline nlohmann::json to_json(const FewShotExample& e) {
  return {{"item_id", e.item_id},          {"question", e.question}, {"answer", e.answer}, {"prob_on_gold", e.prob_on_gold},
          {"marker_attached", e.marker_attached}, {"placement", to_string(e.placement)}};
}

inline FewShotExample fewshot_from_json(const nlohmann::json& j) {
  FewShotExample e;
  e.item_id = j.value("item_id", std::string());
  e.question = j.at("question").get<std::string>();
  e.answer = j.at("answer").get<std::string>();
  e.prob_on_gold = j.at("prob_on_gold").get<double>();
  e.marker_attached = j.value("marker_attached", false);
  e.placement = parse_placement(j.value("placement", std::string("suffix")));
  if (!(e.prob_on_gold >= 0.0 && e.prob_on_gold <= 1.0)) throw ValidationError("prob_on_gold outside [0,1] for '" + e.item_id + "'");
  return e;
}

// Candidate examples from scored standard-method results: the question and
// first gold alias of each item, with the model's probability-on-gold.
inline std::vector<FewShotExample> fewshot_candidates(const std::vector<ScoredResult>& results, const std::vector<QAItem>& items,
                                                      std::string_view template_id = kStandardId) {
  std::unordered_map<std::string, const QAItem*> by_id;
  for (const auto& it : items) by_id.emplace(it.id, &it);
  std::vector<FewShotExample> out;
  for (const auto& r : results) {
    if (r.template_id != template_id || !r.prob_on_gold) continue;
    auto it = by_id.find(r.item_id);
    if (it == by_id.end()) continue;
    out.push_back({r.item_id, it->second->question, it->second->primary_answer(), *r.prob_on_gold, false, Placement::Suffix});
  }
  return out;
}

inline std::size_t probability_bucket(double p, std::size_t buckets) {
  return std::min(buckets - 1, static_cast<std::size_t>(std::floor(p * static_cast<double>(buckets))));
}

inline std::string bucket_label(std::size_t b, std::size_t buckets) {
  auto fmt = [](double x) {
    auto s = std::to_string(x);
    s.erase(s.find_last_not_of('0') + 1);
    if (s.back() == '.') s += '0';
    return s;
  };
  const double lo = static_cast<double>(b) / static_cast<double>(buckets), hi = static_cast<double>(b + 1) / static_cast<double>(buckets);
  return "[" + fmt(lo) + "," + fmt(hi) + (b + 1 == buckets ? "]" : ")");
}

// Equal-width probability buckets filled to equal counts; when `total` does not
// divide evenly the lowest buckets take one extra example. Selection within a
// bucket is a seeded shuffle of the candidates sorted by item id.
inline std::vector<FewShotExample> build_fewshot_pool(const std::vector<FewShotExample>& candidates, std::size_t buckets = 10,
                                                      std::size_t total = 48, std::uint64_t seed = 0) {
  if (buckets == 0) throw PreconditionError("build_fewshot_pool: buckets must be >= 1");
  if (total == 0) throw PreconditionError("build_fewshot_pool: total must be >= 1");
  std::vector<std::vector<const FewShotExample*>> by_bucket(buckets);
  for (const auto& c : candidates) {
    if (!(c.prob_on_gold >= 0.0 && c.prob_on_gold <= 1.0)) throw ValidationError("prob_on_gold outside [0,1] for '" + c.item_id + "'");
    by_bucket[probability_bucket(c.prob_on_gold, buckets)].push_back(&c);
  }
  std::vector<std::size_t> need(buckets, total / buckets);
  for (std::size_t b = 0; b < total % buckets; ++b) ++need[b];

  std::string deficient;
  for (std::size_t b = 0; b < buckets; ++b)
    if (by_bucket[b].size() < need[b]) {
      if (!deficient.empty()) deficient += ", ";
      deficient += bucket_label(b, buckets) + " (need " + std::to_string(need[b]) + ", have " + std::to_string(by_bucket[b].size()) + ")";
    }
  if (!deficient.empty()) throw PreconditionError("few-shot pool too small in buckets: " + deficient);

  auto rng = make_rng(seed);
  std::vector<FewShotExample> out;
  for (std::size_t b = 0; b < buckets; ++b) {
    auto& v = by_bucket[b];
    std::stable_sort(v.begin(), v.end(), [](const auto* x, const auto* y) { return x->item_id < y->item_id; });
    shuffle(v, rng);
    for (std::size_t i = 0; i < need[b]; ++i) out.push_back(*v[i]);
  }
  return out;
}

inline bool marker_rule(double p, Direction d, double threshold) {
  return d == Direction::Certainty ? p > threshold : p < threshold;
}

inline std::vector<FewShotExample> attach_markers(std::vector<FewShotExample> examples, const TeachConfig& cfg) {
  cfg.check();
  for (auto& e : examples) {
    e.marker_attached = marker_rule(e.prob_on_gold, cfg.direction, cfg.threshold);
    e.placement = cfg.placement;
  }
  return examples;
}

namespace detail {

inline std::string answer_sentence(std::string_view answer) {
  auto a = std::string(trim(answer));
  while (!a.empty() && (a.back() == '.' || a.back() == '!' || a.back() == '?')) a.pop_back();
  return a;
}

}  // namespace detail

inline std::string render_example(const FewShotExample& e, const MarkerPair& marker) {
  std::string out = "Q: " + std::string(trim(e.question)) + "\nA: ";
  const auto ans = detail::answer_sentence(e.answer);
  if (e.marker_attached && e.placement == Placement::Prefix) return out + std::string(trim(marker.prefix)) + " " + ans + ".";
  out += ans + ".";
  if (e.marker_attached) out += " " + std::string(trim(marker.suffix));
  return out;
}

// Orders examples per cfg.ordering; descending is the exact reverse of ascending.
inline std::vector<FewShotExample> order_examples(std::vector<FewShotExample> examples, const TeachConfig& cfg) {
  std::stable_sort(examples.begin(), examples.end(), [](const FewShotExample& a, const FewShotExample& b) {
    if (a.prob_on_gold != b.prob_on_gold) return a.prob_on_gold < b.prob_on_gold;
    return a.item_id < b.item_id;
  });
  if (cfg.ordering == Ordering::Descending) std::reverse(examples.begin(), examples.end());
  if (cfg.ordering == Ordering::Random) {
    auto rng = make_rng(cfg.seed ^ 0x7E4C);
    shuffle(examples, rng);
  }
  return examples;
}

// Examples separated by blank lines, then "Q: <query>\nA:".
inline std::string render_fewshot_prompt(const std::vector<FewShotExample>& examples, const TeachConfig& cfg, const QAItem& query) {
  if (examples.empty()) throw PreconditionError("render_fewshot_prompt: no examples");
  cfg.check();
  std::string out;
  for (const auto& e : order_examples(examples, cfg)) out += render_example(e, cfg.marker) + "\n\n";
  out += "Q: " + std::string(trim(query.question)) + "\nA:";
  return out;
}

// ---------------------------------------------------------------------------
// Emission evaluation

struct EmissionRecord {
  std::string item_id;
  bool emitted = false;
  bool correct = false;
  double top_prob = 0.0;                // probability of the top token at the answer step
  std::optional<double> prob_on_gold;   // alternative labeling
  std::optional<double> entropy;        // entropy of the top-K alternatives at the answer step
};

// Case-insensitive substring test with curly apostrophes folded and the
// marker's trailing sentence punctuation ignored.
inline bool detect_emission(std::string_view generated, std::string_view marker_surface) {
  auto fold = [](std::string_view s) { return to_lower_ascii(replace_all(replace_all(std::string(s), "’", "'"), "‘", "'")); };
  auto m = std::string(trim(marker_surface));
  while (!m.empty() && (m.back() == '.' || m.back() == '!')) m.pop_back();
  if (m.empty()) return false;
  return fold(generated).find(fold(m)) != std::string::npos;
}

inline EmissionRecord emission_record(const std::string& item_id, const Completion& completion, const std::vector<std::string>& gold_aliases,
                                      const TeachConfig& cfg) {
  EmissionRecord r;
  r.item_id = item_id;
  r.emitted = detect_emission(completion.text, cfg.marker.form(cfg.placement));
  const auto s = score_completion(completion, gold_aliases);
  r.correct = s.correct;
  r.prob_on_gold = s.prob_on_gold;
  if (s.top_prob) r.top_prob = *s.top_prob;
  if (const auto pos = evaluation_position(completion, gold_aliases, s.answer_position); pos && !completion.steps[*pos].alternatives.empty())
    r.entropy = topk_entropy(completion.steps[*pos]);
  return r;
}

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct F1Summary {
  double macro_f1 = 0.0;
  ClassScores positive;  // marker expected
  ClassScores negative;
};

// Macro-F1 over the two classes. Precision or recall with a zero denominator is 0.
inline F1Summary macro_f1(const std::vector<bool>& predicted, const std::vector<bool>& gold) {
  if (predicted.size() != gold.size()) throw PreconditionError("macro_f1: size mismatch");
  auto scores = [&](bool cls) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (predicted[i] == cls && gold[i] == cls) ++tp;
      else if (predicted[i] == cls) ++fp;
      else if (gold[i] == cls) ++fn;
    }
    ClassScores c;
    c.support = tp + fn;
    c.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    c.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    c.f1 = c.precision + c.recall > 0 ? 2 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    return c;
  };
  F1Summary s;
  s.positive = scores(true);
  s.negative = scores(false);
  s.macro_f1 = (s.positive.f1 + s.negative.f1) / 2.0;
  return s;
}

struct EmissionReport {
  std::size_t n = 0;
  std::size_t n_emitted = 0;
  F1Summary by_top_prob;
  std::optional<F1Summary> by_prob_on_gold;  // only when every record carries one
  std::optional<double> accuracy_given_emission;
  std::optional<double> accuracy_given_no_emission;
  std::optional<double> entropy_given_emission;
  std::optional<double> entropy_given_no_emission;
};

inline EmissionReport evaluate_emission(const std::vector<EmissionRecord>& records, const TeachConfig& cfg) {
  if (records.empty()) throw PreconditionError("evaluate_emission: no records");
  cfg.check();
  EmissionReport rep;
  rep.n = records.size();
  std::vector<bool> pred, gold_top, gold_pog;
  bool all_pog = true;
  double acc[2] = {0, 0}, ent[2] = {0, 0};
  std::size_t cnt[2] = {0, 0}, ent_n[2] = {0, 0};
  for (const auto& r : records) {
    pred.push_back(r.emitted);
    gold_top.push_back(marker_rule(r.top_prob, cfg.direction, cfg.threshold));
    if (r.prob_on_gold) gold_pog.push_back(marker_rule(*r.prob_on_gold, cfg.direction, cfg.threshold));
    else all_pog = false;
    const int k = r.emitted ? 1 : 0;
    ++cnt[k];
    acc[k] += r.correct ? 1.0 : 0.0;
    if (r.entropy) {
      ++ent_n[k];
      ent[k] += *r.entropy;
    }
  }
  rep.n_emitted = cnt[1];
  rep.by_top_prob = macro_f1(pred, gold_top);
  if (all_pog) rep.by_prob_on_gold = macro_f1(pred, gold_pog);
  auto mean = [](double s, std::size_t n) { return n ? std::optional<double>(s / static_cast<double>(n)) : std::nullopt; };
  rep.accuracy_given_emission = mean(acc[1], cnt[1]);
  rep.accuracy_given_no_emission = mean(acc[0], cnt[0]);
  rep.entropy_given_emission = mean(ent[1], ent_n[1]);
  rep.entropy_given_no_emission = mean(ent[0], ent_n[0]);
  return rep;
}

inline nlohmann::json to_json(const TeachConfig& c) {
  return {{"direction", to_string(c.direction)}, {"threshold", c.threshold}, {"placement", to_string(c.placement)},
          {"ordering", to_string(c.ordering)},   {"marker", c.marker.id},    {"seed", c.seed}};
}

inline nlohmann::json to_json(const EmissionRecord& r) {
  auto opt = [](const std::optional<double>& o) { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); };
  return {{"item_id", r.item_id}, {"emitted", r.emitted}, {"correct", r.correct},
          {"top_prob", r.top_prob}, {"prob_on_gold", opt(r.prob_on_gold)}, {"entropy", opt(r.entropy)}};
}

inline EmissionRecord emission_record_from_json(const nlohmann::json& j) {
  EmissionRecord r;
  r.item_id = j.value("item_id", std::string());
  r.emitted = j.at("emitted").get<bool>();
  r.correct = j.value("correct", false);
  r.top_prob = j.at("top_prob").get<double>();
  if (j.contains("prob_on_gold") && !j["prob_on_gold"].is_null()) r.prob_on_gold = j["prob_on_gold"].get<double>();
  if (j.contains("entropy") && !j["entropy"].is_null()) r.entropy = j["entropy"].get<double>();
  return r;
}

inline nlohmann::json to_json(const EmissionReport& r) {
  auto opt = [](const std::optional<double>& o) { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); };
  auto f1 = [](const F1Summary& s) {
    auto cls = [](const ClassScores& c) {
      return nlohmann::json{{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}};
    };
    return nlohmann::json{{"macro_f1", s.macro_f1}, {"marker_expected", cls(s.positive)}, {"no_marker_expected", cls(s.negative)}};
  };
  return {{"n", r.n},
          {"n_emitted", r.n_emitted},
          {"labeled_by_top_token_prob", f1(r.by_top_prob)},
          {"labeled_by_prob_on_gold", r.by_prob_on_gold ? f1(*r.by_prob_on_gold) : nlohmann::json(nullptr)},
          {"accuracy_given_emission", opt(r.accuracy_given_emission)},
          {"accuracy_given_no_emission", opt(r.accuracy_given_no_emission)},
          {"entropy_given_emission", opt(r.entropy_given_emission)},
          {"entropy_given_no_emission", opt(r.entropy_given_no_emission)}};
}

}  // namespace epiprobe

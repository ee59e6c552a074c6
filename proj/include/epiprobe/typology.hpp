#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "error.hpp"
#include "util.hpp"

namespace epiprobe {

enum class Strength { Weakener, Strengthener, Neutral };
enum class Shield { Plausibility, None };

// Six-way linguistic coding of an epistemic marker.
struct LinguisticFeatures {
  Strength strength = Strength::Neutral;
  Shield shield = Shield::None;
  bool evidential = false;
  bool factive = false;
  bool sourced = false;
  bool first_person = false;

  friend bool operator==(const LinguisticFeatures&, const LinguisticFeatures&) = default;
};

inline constexpr std::string_view kPctPlaceholder = "{pct}";

struct MarkerTemplate {
  std::string id;
  std::string surface;  // prompt suffix, e.g. "I think it's"; empty only for the standard method
  LinguisticFeatures features;
  bool has_numeric_slot = false;
  std::optional<int> stated_pct;  // set on templates produced by expand_numeric

  bool is_standard() const { return surface.empty(); }

  friend bool operator==(const MarkerTemplate&, const MarkerTemplate&) = default;
};

inline constexpr std::string_view kStandardId = "standard";

// The bare "Q: ... A:" prompt, modelled as a marker with an empty surface.
inline MarkerTemplate standard_method() {
  return MarkerTemplate{std::string(kStandardId), "", LinguisticFeatures{}, false, std::nullopt};
}

struct NumericGrid {
  std::vector<int> values;

  explicit NumericGrid(std::vector<int> v) : values(std::move(v)) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] < 0 || values[i] > 100)
        throw PreconditionError("numeric grid value out of [0,100]: " + std::to_string(values[i]));
      if (i > 0 && values[i] <= values[i - 1])
        throw PreconditionError("numeric grid must be strictly increasing");
    }
  }

  static NumericGrid standard() { return NumericGrid({0, 10, 30, 50, 70, 90, 100}); }
};

// ---------------------------------------------------------------------------
// Enum spelling

inline std::string_view to_string(Strength s) {
  switch (s) {
    case Strength::Weakener: return "Weakener";
    case Strength::Strengthener: return "Strengthener";
    case Strength::Neutral: return "Neutral";
  }
  return "?";
}

inline std::string_view to_string(Shield s) { return s == Shield::Plausibility ? "Plausibility" : "None"; }

inline std::optional<Strength> parse_strength(std::string_view s) {
  const auto l = to_lower_ascii(s);
  if (l == "weakener") return Strength::Weakener;
  if (l == "strengthener") return Strength::Strengthener;
  if (l == "neutral" || l == "none") return Strength::Neutral;
  return std::nullopt;
}

inline std::optional<Shield> parse_shield(std::string_view s) {
  const auto l = to_lower_ascii(s);
  if (l == "plausibility") return Shield::Plausibility;
  if (l == "none") return Shield::None;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Registry file: tab-separated
//   id  surface  strength  shield  evidential  factive  sourced  first_person
// '#' starts a comment line; booleans are "true"/"false".

namespace detail {

inline constexpr std::string_view kBuiltinRegistry =
    "# id\tsurface\tstrength\tshield\tevidential\tfactive\tsourced\tfirst_person\n"
    "apparently\tApparently it's\tWeakener\tNone\ttrue\tfalse\tfalse\tfalse\n"
    "rumor-says\tRumor says it it's\tWeakener\tNone\ttrue\tfalse\tfalse\tfalse\n"
    "allegedly\tAllegedly it's\tWeakener\tNone\ttrue\tfalse\tfalse\tfalse\n"
    "i-was-told\tI was told it's\tWeakener\tNone\ttrue\tfalse\tfalse\ttrue\n"
    "ive-heard\tI've heard it's\tWeakener\tNone\ttrue\tfalse\tfalse\ttrue\n"
    "they-told-me\tThey told me it's\tWeakener\tNone\ttrue\tfalse\tfalse\ttrue\n"
    "wikipedia-suggests\tWikipedia suggests it's\tWeakener\tNone\ttrue\tfalse\ttrue\tfalse\n"
    "online-says\tOnline says it's\tWeakener\tNone\ttrue\tfalse\ttrue\tfalse\n"
    "internet-says\tThe internet says it's\tWeakener\tNone\ttrue\tfalse\ttrue\tfalse\n"
    "# \"claims\" is neg-factive; coded not factive\n"
    "wikipedia-claims\tWikipedia claims it's\tWeakener\tNone\ttrue\tfalse\ttrue\tfalse\n"
    "wikipedia-says\tWikipedia says it's\tWeakener\tNone\ttrue\tfalse\ttrue\tfalse\n"
    "read-on-internet\tI read on the internet it's\tWeakener\tNone\ttrue\tfalse\ttrue\ttrue\n"
    "read-on-wikipedia\tI read on Wikipedia it's\tWeakener\tNone\ttrue\tfalse\ttrue\ttrue\n"
    "read-online\tI read online it's\tWeakener\tNone\ttrue\tfalse\ttrue\ttrue\n"
    "presumably\tPresumably it's\tWeakener\tNone\tfalse\tfalse\tfalse\tfalse\n"
    "best-of-my-knowledge\tTo the best of my knowledge it's\tWeakener\tPlausibility\ttrue\tfalse\tfalse\ttrue\n"
    "as-far-as-aware\tAs far as I'm aware it's\tWeakener\tPlausibility\ttrue\tfalse\tfalse\ttrue\n"
    "vaguely-remember\tI vaguely remember it's\tWeakener\tPlausibility\ttrue\tfalse\tfalse\ttrue\n"
    "could-be\tIt could be\tWeakener\tPlausibility\tfalse\tfalse\tfalse\tfalse\n"
    "considering-options\tConsidering all the options it's\tWeakener\tPlausibility\tfalse\tfalse\tfalse\tfalse\n"
    "probably-is\tIt probably is\tWeakener\tPlausibility\tfalse\tfalse\tfalse\tfalse\n"
    "maybe\tMaybe it's\tWeakener\tPlausibility\tfalse\tfalse\tfalse\tfalse\n"
    "perhaps\tPerhaps it's\tWeakener\tPlausibility\tfalse\tfalse\tfalse\tfalse\n"
    "should-be\tIt should be\tWeakener\tPlausibility\tfalse\tfalse\tfalse\tfalse\n"
    "dont-know-maybe\tI don't know maybe it's\tWeakener\tPlausibility\tfalse\tfalse\tfalse\ttrue\n"
    "suppose\tI suppose it's\tWeakener\tPlausibility\tfalse\tfalse\tfalse\ttrue\n"
    "double-check\tI would need to double check but maybe it's\tWeakener\tPlausibility\tfalse\tfalse\tfalse\ttrue\n"
    "no-money-on-it\tI wouldn't put money on it but maybe it's\tWeakener\tPlausibility\tfalse\tfalse\tfalse\ttrue\n"
    "not-an-expert\tI'm not an expert but maybe it's\tWeakener\tPlausibility\tfalse\tfalse\tfalse\ttrue\n"
    "i-think\tI think it's\tWeakener\tPlausibility\tfalse\tfalse\tfalse\ttrue\n"
    "feel-like\tI feel like it should be\tWeakener\tPlausibility\tfalse\tfalse\tfalse\ttrue\n"
    "is-known\tIt is known that it's\tStrengthener\tNone\ttrue\ttrue\tfalse\tfalse\n"
    "recent-evidence\tThe most recent evidence shows it's\tStrengthener\tNone\ttrue\ttrue\ttrue\tfalse\n"
    "rules-state\tThe rules state it's\tStrengthener\tNone\ttrue\ttrue\ttrue\tfalse\n"
    "two-studies\tTwo recent studies demonstrate it's\tStrengthener\tNone\ttrue\ttrue\ttrue\tfalse\n"
    "wikipedia-acknowledges\tWikipedia acknowledges it's\tStrengthener\tNone\ttrue\ttrue\ttrue\tfalse\n"
    "wikipedia-confirms\tWikipedia confirms it's\tStrengthener\tNone\ttrue\ttrue\ttrue\tfalse\n"
    "our-lab\tOur lab has shown it's\tStrengthener\tNone\ttrue\ttrue\ttrue\ttrue\n"
    "evidently\tEvidently it's\tStrengthener\tNone\ttrue\tfalse\tfalse\tfalse\n"
    "latest-research\tAccording to the latest research it's\tStrengthener\tNone\ttrue\tfalse\ttrue\tfalse\n"
    "textbook\tWe can see in the textbook that it's\tStrengthener\tNone\ttrue\tfalse\ttrue\ttrue\n"
    "must-be\tIt must be\tStrengthener\tNone\tfalse\ttrue\tfalse\tfalse\n"
    "we-realize\tWe realize it's\tStrengthener\tNone\tfalse\ttrue\tfalse\ttrue\n"
    "we-understand\tWe understand it's\tStrengthener\tNone\tfalse\ttrue\tfalse\ttrue\n"
    "we-know\tWe know it's\tStrengthener\tNone\tfalse\ttrue\tfalse\ttrue\n"
    "undoubtedly\tUndoubtedly it's\tStrengthener\tNone\tfalse\tfalse\tfalse\tfalse\n"
    "full-confidence\tWith 100% confidence it's\tStrengthener\tNone\tfalse\tfalse\tfalse\tfalse\n"
    "im-certain\tI'm certain it's\tStrengthener\tNone\tfalse\tfalse\tfalse\ttrue\n"
    "am-100-sure\tI am 100% sure it's\tStrengthener\tNone\tfalse\tfalse\tfalse\ttrue\n"
    "its\tIt's\tNeutral\tNone\tfalse\tfalse\tfalse\tfalse\n";

// Numerical-certainty expressions; codings follow the closest verbal marker.
inline constexpr std::string_view kBuiltinNumeric =
    "pct-sure\tI'm {pct}% sure it's\tStrengthener\tNone\tfalse\tfalse\tfalse\ttrue\n"
    "pct-certain\tI'm {pct}% certain it's\tStrengthener\tNone\tfalse\tfalse\tfalse\ttrue\n"
    "pct-am-sure\tI am {pct}% sure it's\tStrengthener\tNone\tfalse\tfalse\tfalse\ttrue\n"
    "pct-confident\tI'm {pct}% confident it's\tStrengthener\tNone\tfalse\tfalse\tfalse\ttrue\n"
    "pct-with-confidence\tWith {pct}% confidence it's\tStrengthener\tNone\tfalse\tfalse\tfalse\tfalse\n"
    "pct-chance\t{pct}% chance it's\tWeakener\tNone\tfalse\tfalse\tfalse\tfalse\n"
    "pct-theres-chance\tThere's a {pct}% chance it's\tWeakener\tNone\tfalse\tfalse\tfalse\tfalse\n";

inline bool parse_bool_field(std::string_view s, std::string_view name, std::size_t line) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ParseError("column " + std::string(name) + ": expected true/false, got '" + std::string(s) + "'", line);
}

}  // namespace detail

inline std::string_view builtin_registry_text() { return detail::kBuiltinRegistry; }
inline std::string_view builtin_numeric_text() { return detail::kBuiltinNumeric; }

// Parses registry text. Throws ParseError on malformed rows and ValidationError on duplicate ids;
// every other invariant is left to validate_registry.
inline std::vector<MarkerTemplate> parse_registry(std::string_view text) {
  std::vector<MarkerTemplate> out;
  std::set<std::string> ids;
  std::size_t lineno = 0;
  for (const auto& raw : split(text, '\n')) {
    ++lineno;
    std::string_view line = raw;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty() || trim(line).front() == '#') continue;
    const auto cols = split(line, '\t');
    if (cols.size() != 8)
      throw ParseError("expected 8 tab-separated columns, got " + std::to_string(cols.size()), lineno);
    MarkerTemplate t;
    t.id = cols[0];
    if (t.id.empty()) throw ParseError("empty id", lineno);
    t.surface = cols[1];
    const auto strength = parse_strength(cols[2]);
    if (!strength) throw ParseError("unknown strength '" + cols[2] + "'", lineno);
    const auto shield = parse_shield(cols[3]);
    if (!shield) throw ParseError("unknown shield '" + cols[3] + "'", lineno);
    t.features.strength = *strength;
    t.features.shield = *shield;
    t.features.evidential = detail::parse_bool_field(cols[4], "evidential", lineno);
    t.features.factive = detail::parse_bool_field(cols[5], "factive", lineno);
    t.features.sourced = detail::parse_bool_field(cols[6], "sourced", lineno);
    t.features.first_person = detail::parse_bool_field(cols[7], "first_person", lineno);
    t.has_numeric_slot = t.surface.find(kPctPlaceholder) != std::string::npos;
    if (!ids.insert(t.id).second) throw ValidationError("duplicate template id '" + t.id + "' at line " + std::to_string(lineno));
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<MarkerTemplate> builtin_registry() { return parse_registry(detail::kBuiltinRegistry); }
inline std::vector<MarkerTemplate> builtin_numeric_templates() { return parse_registry(detail::kBuiltinNumeric); }

inline std::vector<MarkerTemplate> load_registry(const std::filesystem::path& path) {
  return parse_registry(read_file(path));
}

inline std::string serialize_registry(const std::vector<MarkerTemplate>& templates) {
  std::string out = "# id\tsurface\tstrength\tshield\tevidential\tfactive\tsourced\tfirst_person\n";
  auto b = [](bool v) { return v ? "true" : "false"; };
  for (const auto& t : templates) {
    out += t.id + '\t' + t.surface + '\t' + std::string(to_string(t.features.strength)) + '\t' +
           std::string(to_string(t.features.shield)) + '\t' + b(t.features.evidential) + '\t' +
           b(t.features.factive) + '\t' + b(t.features.sourced) + '\t' + b(t.features.first_person) + '\n';
  }
  return out;
}

inline std::string registry_digest(const std::vector<MarkerTemplate>& templates) {
  return sha256_hex(serialize_registry(templates));
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string template_id;  // empty for registry-level findings
  std::string rule;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::vector<std::string> warnings;

  bool ok() const { return violations.empty(); }
};

inline ValidationReport validate_registry(const std::vector<MarkerTemplate>& templates) {
  ValidationReport report;
  if (templates.empty()) report.warnings.emplace_back("no templates");
  std::set<std::string> seen;
  std::size_t neutral = 0;
  for (const auto& t : templates) {
    if (!seen.insert(t.id).second)
      report.violations.push_back({t.id, "unique-id", "duplicate id '" + t.id + "'"});
    if (t.features.sourced && !t.features.evidential)
      report.violations.push_back({t.id, "sourced-implies-evidential", "sourced template must be evidential"});
    if (t.surface.empty())
      report.violations.push_back({t.id, "nonempty-surface", "surface is empty"});
    else if (is_space(t.surface.back()))
      report.violations.push_back({t.id, "no-trailing-whitespace", "surface ends in whitespace"});
    if (t.features.strength == Strength::Neutral) ++neutral;
  }
  if (neutral > 1)
    report.violations.push_back({"", "single-neutral", std::to_string(neutral) + " Neutral templates (at most 1 allowed)"});
  return report;
}

// ---------------------------------------------------------------------------
// Selection and expansion

template <typename Predicate>
std::vector<MarkerTemplate> filter_templates(const std::vector<MarkerTemplate>& templates, Predicate&& pred) {
  std::vector<MarkerTemplate> out;
  for (const auto& t : templates)
    if (pred(t.features)) out.push_back(t);
  return out;
}

inline std::vector<MarkerTemplate> expand_numeric(const MarkerTemplate& t, const NumericGrid& grid) {
  if (!t.has_numeric_slot)
    throw PreconditionError("template '" + t.id + "' has no " + std::string(kPctPlaceholder) + " slot");
  std::vector<MarkerTemplate> out;
  out.reserve(grid.values.size());
  for (int v : grid.values) {
    MarkerTemplate c = t;
    c.id = t.id + "-" + std::to_string(v);
    c.surface = replace_all(t.surface, kPctPlaceholder, std::to_string(v));
    c.has_numeric_slot = false;
    c.stated_pct = v;
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary feature splits used for group comparisons.

enum class FeatureAxis { Strength, Factive, Evidential, Shield, Sourced, Pronoun };

struct FeatureSplit {
  std::string label_a;
  std::string label_b;
  // Returns 0 for group A, 1 for group B, nullopt when the template belongs to neither.
  std::optional<int> (*classify)(const LinguisticFeatures&);
};

inline std::optional<FeatureAxis> parse_feature_axis(std::string_view s) {
  if (s == "strength") return FeatureAxis::Strength;
  if (s == "factive") return FeatureAxis::Factive;
  if (s == "evidential") return FeatureAxis::Evidential;
  if (s == "shield") return FeatureAxis::Shield;
  if (s == "sourced") return FeatureAxis::Sourced;
  if (s == "pronoun") return FeatureAxis::Pronoun;
  return std::nullopt;
}

inline FeatureSplit feature_split(FeatureAxis axis) {
  switch (axis) {
    case FeatureAxis::Strength:
      return {"weakener", "strengthener", [](const LinguisticFeatures& f) -> std::optional<int> {
                if (f.strength == Strength::Weakener) return 0;
                if (f.strength == Strength::Strengthener) return 1;
                return std::nullopt;
              }};
    case FeatureAxis::Factive:
      return {"factive", "non-factive",
              [](const LinguisticFeatures& f) -> std::optional<int> { return f.factive ? 0 : 1; }};
    case FeatureAxis::Evidential:
      return {"evidential", "non-evidential",
              [](const LinguisticFeatures& f) -> std::optional<int> { return f.evidential ? 0 : 1; }};
    case FeatureAxis::Shield:
      return {"plausibility-shield", "no-shield", [](const LinguisticFeatures& f) -> std::optional<int> {
                return f.shield == Shield::Plausibility ? 0 : 1;
              }};
    case FeatureAxis::Sourced:
      return {"sourced", "unsourced",
              [](const LinguisticFeatures& f) -> std::optional<int> { return f.sourced ? 0 : 1; }};
    case FeatureAxis::Pronoun:
      return {"first-person", "no-first-person",
              [](const LinguisticFeatures& f) -> std::optional<int> { return f.first_person ? 0 : 1; }};
  }
  throw PreconditionError("unknown feature axis");
}

}  // namespace epiprobe

#include <catch_amalgamated.hpp>

#include <epiprobe/typology.hpp>

#include <algorithm>

using namespace epiprobe;

namespace {

MarkerTemplate tpl(std::string id, std::string surface, LinguisticFeatures f) {
  MarkerTemplate t;
  t.id = std::move(id);
  t.surface = std::move(surface);
  t.features = f;
  return t;
}

const MarkerTemplate& by_id(const std::vector<MarkerTemplate>& ts, const std::string& id) {
  auto it = std::find_if(ts.begin(), ts.end(), [&](const MarkerTemplate& t) { return t.id == id; });
  REQUIRE(it != ts.end());
  return *it;
}

bool has_rule(const ValidationReport& r, const std::string& rule) {
  return std::any_of(r.violations.begin(), r.violations.end(), [&](const Violation& v) { return v.rule == rule; });
}

}  // namespace

TEST_CASE("builtin registry cardinalities", "[typology]") {
  const auto reg = builtin_registry();
  REQUIRE(reg.size() == 50);
  auto count = [&](Strength s) { return std::count_if(reg.begin(), reg.end(), [&](const auto& t) { return t.features.strength == s; }); };
  CHECK(count(Strength::Weakener) == 31);
  CHECK(count(Strength::Strengthener) == 18);
  CHECK(count(Strength::Neutral) == 1);
  for (const auto& t : reg) {
    if (t.features.sourced) CHECK(t.features.evidential);
    CHECK_FALSE(t.has_numeric_slot);
    CHECK_FALSE(t.is_standard());
  }
  CHECK(validate_registry(reg).ok());
  CHECK(validate_registry(reg).warnings.empty());
}

TEST_CASE("builtin registry codings", "[typology]") {
  const auto reg = builtin_registry();
  const auto& wiki = by_id(reg, "wikipedia-says");
  CHECK(wiki.surface == "Wikipedia says it's");
  CHECK(wiki.features == LinguisticFeatures{Strength::Weakener, Shield::None, true, false, true, false});
  CHECK(by_id(reg, "i-think").features.shield == Shield::Plausibility);
  CHECK_FALSE(by_id(reg, "vaguely-remember").features.factive);
  CHECK_FALSE(by_id(reg, "wikipedia-claims").features.factive);
  CHECK(by_id(reg, "we-know").features.factive);
}

TEST_CASE("filter_templates", "[typology]") {
  const auto reg = builtin_registry();
  const auto factive = filter_templates(reg, [](const LinguisticFeatures& f) { return f.factive; });
  // hand count of factive rows in the source table
  CHECK(factive.size() == 11);
  const auto neutral = filter_templates(reg, [](const LinguisticFeatures& f) { return f.strength == Strength::Neutral; });
  REQUIRE(neutral.size() == 1);
  CHECK(neutral[0].surface == "It's");
  const auto all = filter_templates(reg, [](const LinguisticFeatures&) { return true; });
  CHECK(all.size() == reg.size());
  CHECK(std::equal(all.begin(), all.end(), reg.begin(), [](const auto& a, const auto& b) { return a.id == b.id; }));
  const auto twice = filter_templates(factive, [](const LinguisticFeatures& f) { return f.factive; });
  CHECK(twice.size() == factive.size());
  // order preserved
  std::vector<std::string> ids;
  for (const auto& t : reg)
    if (t.features.factive) ids.push_back(t.id);
  for (std::size_t i = 0; i < ids.size(); ++i) CHECK(factive[i].id == ids[i]);
}

TEST_CASE("parse_registry errors", "[typology]") {
  SECTION("malformed row names the line") {
    const std::string text = "# header\nok\tOk it's\tWeakener\tNone\tfalse\tfalse\tfalse\tfalse\nbad\tonly three\tWeakener\n";
    try {
      parse_registry(text);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line == 3);
    }
  }
  SECTION("bad boolean") {
    CHECK_THROWS_AS(parse_registry("x\tX it's\tWeakener\tNone\tyes\tfalse\tfalse\tfalse\n"), ParseError);
  }
  SECTION("bad strength") {
    CHECK_THROWS_AS(parse_registry("x\tX it's\tStrong\tNone\tfalse\tfalse\tfalse\tfalse\n"), ParseError);
  }
  SECTION("duplicate id") {
    const std::string row = "t1\tX it's\tWeakener\tNone\tfalse\tfalse\tfalse\tfalse\n";
    CHECK_THROWS_AS(parse_registry(row + row), ValidationError);
  }
  SECTION("empty input") {
    const auto reg = parse_registry("");
    CHECK(reg.empty());
    const auto rep = validate_registry(reg);
    CHECK(rep.ok());
    REQUIRE(rep.warnings.size() == 1);
    CHECK(rep.warnings[0] == "no templates");
  }
}

TEST_CASE("validate_registry violations", "[typology]") {
  auto t = tpl("t1", "X it's", {Strength::Weakener, Shield::None, false, false, true, false});
  auto rep = validate_registry({t});
  REQUIRE(rep.violations.size() == 1);
  CHECK(rep.violations[0].rule == "sourced-implies-evidential");

  auto a = tpl("t1", "A it's", {}), b = tpl("t1", "B it's", {});
  CHECK(has_rule(validate_registry({a, b}), "unique-id"));

  auto ws = tpl("w", "X it's ", {});
  CHECK(has_rule(validate_registry({ws}), "no-trailing-whitespace"));
  auto empty = tpl("e", "", {});
  CHECK(has_rule(validate_registry({empty}), "nonempty-surface"));

  auto n1 = tpl("n1", "It's", {Strength::Neutral}), n2 = tpl("n2", "It is", {Strength::Neutral});
  CHECK(has_rule(validate_registry({n1, n2}), "single-neutral"));
}

TEST_CASE("serialize round trip and digest", "[typology]") {
  const auto reg = builtin_registry();
  const auto again = parse_registry(serialize_registry(reg));
  REQUIRE(again.size() == reg.size());
  for (std::size_t i = 0; i < reg.size(); ++i) {
    CHECK(again[i].id == reg[i].id);
    CHECK(again[i].surface == reg[i].surface);
    CHECK(again[i].features == reg[i].features);
  }
  CHECK(registry_digest(reg) == registry_digest(again));
  auto edited = reg;
  edited[0].features.factive = !edited[0].features.factive;
  CHECK(registry_digest(edited) != registry_digest(reg));
  CHECK(registry_digest(reg).size() == 64);
}

TEST_CASE("numeric grid and expansion", "[typology]") {
  CHECK(NumericGrid::standard().values == std::vector<int>{0, 10, 30, 50, 70, 90, 100});
  CHECK_THROWS_AS(NumericGrid({10, 10}), PreconditionError);
  CHECK_THROWS_AS(NumericGrid({50, 10}), PreconditionError);
  CHECK_THROWS_AS(NumericGrid({-1}), PreconditionError);
  CHECK_THROWS_AS(NumericGrid({101}), PreconditionError);

  const auto numeric = builtin_numeric_templates();
  REQUIRE(numeric.size() == 7);
  CHECK(validate_registry(numeric).ok());
  const auto& sure = by_id(numeric, "pct-sure");
  CHECK(sure.has_numeric_slot);
  const auto expanded = expand_numeric(sure, NumericGrid::standard());
  REQUIRE(expanded.size() == 7);
  for (std::size_t i = 0; i < expanded.size(); ++i) {
    const int v = NumericGrid::standard().values[i];
    CHECK(expanded[i].id == "pct-sure-" + std::to_string(v));
    CHECK(expanded[i].stated_pct == v);
    CHECK(expanded[i].surface.find(std::to_string(v) + "%") != std::string::npos);
    CHECK(expanded[i].features == sure.features);
    CHECK_FALSE(expanded[i].has_numeric_slot);
  }
  CHECK(expanded[5].surface == "I'm 90% sure it's");
  CHECK(expand_numeric(sure, NumericGrid({50})).size() == 1);
  CHECK_THROWS_AS(expand_numeric(by_id(builtin_registry(), "must-be"), NumericGrid::standard()), PreconditionError);
}

TEST_CASE("feature splits", "[typology]") {
  const auto reg = builtin_registry();
  const auto split = feature_split(FeatureAxis::Strength);
  CHECK(split.label_a == "weakener");
  CHECK(split.label_b == "strengthener");
  CHECK_FALSE(split.classify(by_id(reg, "its").features).has_value());
  CHECK(split.classify(by_id(reg, "i-think").features) == 0);
  CHECK(split.classify(by_id(reg, "we-know").features) == 1);
  CHECK(feature_split(FeatureAxis::Factive).classify(by_id(reg, "we-know").features) == 0);
  for (const char* name : {"strength", "factive", "evidential", "shield", "sourced", "pronoun"}) CHECK(parse_feature_axis(name).has_value());
  CHECK_FALSE(parse_feature_axis("color").has_value());
}

TEST_CASE("standard sentinel", "[typology]") {
  const auto s = standard_method();
  CHECK(s.is_standard());
  CHECK(s.id == "standard");
  CHECK(s.features.strength == Strength::Neutral);
}

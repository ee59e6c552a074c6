#include <catch_amalgamated.hpp>

#include <epiprobe/mock_backend.hpp>
#include <epiprobe/probe.hpp>

#include <atomic>

using namespace epiprobe;

namespace {

const QAItem kFrance = make_item("fr", "What is the capital of France?", {"Paris"});

MarkerTemplate surface(std::string s) {
  MarkerTemplate t;
  t.id = "x";
  t.surface = std::move(s);
  return t;
}

bool ends_in_space(const std::string& s) { return !s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\n'); }

// Fails every request for one item id.
struct FlakyBackend : Backend {
  MockBackend inner;
  std::string bad;
  FlakyBackend(MockModelSpec spec, std::string bad_id) : inner(std::move(spec)), bad(std::move(bad_id)) {}
  Completion complete(const CompletionRequest& r) override {
    if (r.tag && r.tag->item_id == bad) throw TransportError("boom", 500);
    return inner.complete(r);
  }
  std::string model_id() const override { return "flaky"; }
  std::size_t max_concurrency() const override { return 3; }
};

}  // namespace

TEST_CASE("build_prompt shapes", "[probe]") {
  CHECK(build_prompt(kFrance, surface("I think it's")) == "Q: What is the capital of France?\nA: I think it's");
  CHECK(build_prompt(kFrance, standard_method()) == "Q: What is the capital of France?\nA:");
  CHECK(build_prompt(kFrance, surface("I think it's"), PromptStyle{false}) == "Q: What is the capital of France? A: I think it's");
  CHECK(build_prompt(make_item("q", "Who?  \n", {"x"}), surface("  Maybe it's \t")) == "Q: Who?\nA: Maybe it's");
  for (const auto& t : builtin_registry()) CHECK_FALSE(ends_in_space(build_prompt(kFrance, t)));
}

TEST_CASE("run_experiment record count and order", "[probe]") {
  const auto bench = make_synthetic_benchmark(200, 1, {});
  MockBackend mock(bench.spec);
  const auto templates = builtin_registry();
  const auto run = run_experiment(bench.items, templates, mock, RunParams{}, 9);
  REQUIRE(run.records.size() == 10200);
  CHECK(run.manifest.records == 10200);
  CHECK(run.manifest.failures == 0);
  CHECK(run.records[0].item_id == bench.items[0].id);
  CHECK(run.records[0].template_id == templates[0].id);
  CHECK(run.records[50].template_id == "standard");
  CHECK(run.records[51].item_id == bench.items[1].id);
  for (const auto& r : run.records) CHECK_FALSE(r.stated_pct.has_value());
  CHECK(run.manifest.registry_digest == registry_digest(templates));
}

TEST_CASE("run_experiment is deterministic", "[probe]") {
  const auto bench = make_synthetic_benchmark(20, 2, {{"factive", "true", 0.5}});
  MockBackend a(bench.spec, 4), b(bench.spec, 1);
  const auto r1 = run_experiment(bench.items, builtin_registry(), a, RunParams{}, 3);
  const auto r2 = run_experiment(bench.items, builtin_registry(), b, RunParams{}, 3);
  CHECK(r1.records == r2.records);
  CHECK(records_to_jsonl(r1.records) == records_to_jsonl(r2.records));
  const auto r3 = run_experiment(bench.items, builtin_registry(), a, RunParams{}, 4);
  CHECK(r3.records != r1.records);
}

TEST_CASE("run_experiment with the standard method only", "[probe]") {
  const auto bench = make_synthetic_benchmark(1, 2, {});
  MockBackend mock(bench.spec);
  const auto run = run_experiment(bench.items, {standard_method()}, mock, RunParams{}, 0);
  REQUIRE(run.records.size() == 1);
  CHECK(run.records[0].template_id == "standard");
  CHECK_THROWS_AS(run_experiment({}, {standard_method()}, mock, RunParams{}, 0), PreconditionError);
  CHECK_THROWS_AS(run_experiment(bench.items, {}, mock, RunParams{}, 0), PreconditionError);
}

TEST_CASE("run_experiment records failures and continues", "[probe]") {
  const auto bench = make_synthetic_benchmark(5, 2, {});
  FlakyBackend flaky(bench.spec, bench.items[2].id);
  const auto run = run_experiment(bench.items, builtin_registry(), flaky, RunParams{}, 0);
  CHECK(run.records.size() == 255);
  CHECK(run.manifest.failures == 51);
  for (const auto& r : run.records) CHECK((r.item_id == bench.items[2].id) == r.error.has_value());
}

TEST_CASE("minimal pairs differ only after the answer cue", "[probe]") {
  const auto bench = make_synthetic_benchmark(3, 2, {});
  MockBackend mock(bench.spec);
  const auto run = run_experiment(bench.items, builtin_registry(), mock, RunParams{}, 0);
  for (std::size_t i = 0; i < run.records.size(); ++i) {
    const auto& r = run.records[i];
    const auto cut = r.prompt.find("\nA:");
    REQUIRE(cut != std::string::npos);
    const auto head = r.prompt.substr(0, cut + 3);
    CHECK(head == "Q: " + bench.items[i / 51].question + "\nA:");
  }
}

TEST_CASE("run_numeric", "[probe]") {
  const auto bench = make_synthetic_benchmark(50, 4, {});
  MockBackend mock(bench.spec);
  const auto numeric = builtin_numeric_templates();
  REQUIRE(numeric.size() == 7);
  const auto run = run_numeric(bench.items, numeric, NumericGrid::standard(), mock, RunParams{}, 1);
  CHECK(run.records.size() == 2450);
  CHECK(run.manifest.kind == "numeric");
  for (const auto& r : run.records) CHECK(r.stated_pct.has_value());

  const auto hundred = run_numeric(bench.items, numeric, NumericGrid({100}), mock, RunParams{}, 1);
  CHECK(hundred.records.size() == 350);
  for (const auto& r : hundred.records) CHECK(r.stated_pct == 100);
  CHECK(hundred.records[0].prompt.find("100%") != std::string::npos);

  CHECK_THROWS_AS(run_numeric(bench.items, numeric, NumericGrid({}), mock, RunParams{}, 1), PreconditionError);
  CHECK_THROWS_AS(run_numeric(bench.items, builtin_registry(), NumericGrid::standard(), mock, RunParams{}, 1), PreconditionError);
}

TEST_CASE("records and manifest round-trip", "[probe]") {
  const auto bench = make_synthetic_benchmark(4, 5, {});
  FlakyBackend flaky(bench.spec, bench.items[0].id);
  const auto run = run_numeric(bench.items, builtin_numeric_templates(), NumericGrid({10, 90}), flaky, RunParams{}, 6);
  CHECK(records_from_jsonl(records_to_jsonl(run.records)) == run.records);
  const auto m = manifest_from_json(to_json(run.manifest));
  CHECK(to_json(m) == to_json(run.manifest));
  CHECK(m.grid == std::vector<int>{10, 90});
  CHECK_THROWS_AS(records_from_jsonl("{}\n"), ParseError);
}

TEST_CASE("request seeds do not depend on scheduling", "[probe]") {
  CHECK(detail::record_seed(1, "a", "b") == detail::record_seed(1, "a", "b"));
  CHECK(detail::record_seed(1, "a", "b") != detail::record_seed(1, "b", "a"));
  CHECK(detail::record_seed(1, "ab", "c") != detail::record_seed(1, "a", "bc"));
}

#include <catch_amalgamated.hpp>

#include <epiprobe/corpus.hpp>

#include "../oracles.hpp"
#include "../test_support.hpp"

#include <fstream>
#include <random>
#include <zlib.h>

using namespace epiprobe;
using Catch::Matchers::WithinAbs;

namespace {

CorpusDoc doc(std::string text, Section s = Section::Other) { return CorpusDoc{std::move(text), s}; }

std::vector<std::string> exprs(const std::vector<PatternSpec>& specs) {
  std::vector<std::string> out;
  for (const auto& s : specs) out.push_back(s.expression);
  return out;
}

// Random text from a small alphabet of fragments designed to stress boundaries.
std::string random_text(std::mt19937_64& gen, std::size_t pieces) {
  static const std::vector<std::string> frags{
      "I think", "i think", "I THINK", "rethink", "think", "I", " ", "  ", ",", ".", "\n", "I'm sure", "I\xE2\x80\x99m sure",
      "im sure", "sure", "I am sure", "it must be", "must", "it", "be", "_", "x", "9", "50%", "100%", "width:100%", "3.5%",
      "350%", "%", "007%", "caf\xC3\xA9", "I think I think", "maybe it's", "maybe it\xE2\x80\x98s"};
  std::string s;
  for (std::size_t i = 0; i < pieces; ++i) s += frags[gen() % frags.size()];
  return s;
}

}  // namespace

TEST_CASE("count_patterns examples", "[corpus]") {
  auto rep = count_patterns({doc("I think, therefore I think.")}, {"i think"});
  CHECK(rep.at(0, Section::Other).instances == 2);
  CHECK(rep.at(0, Section::Other).docs_with_match == 1);
  CHECK(rep.total_posts[2] == 1);
  CHECK(rep.total_words[2] == 5);

  rep = count_patterns({doc("rethink it")}, {"i think"});
  CHECK(rep.at(0, Section::Other).instances == 0);

  rep = count_patterns({doc("I\xE2\x80\x99m sure. I'm SURE!", Section::Answer)}, {"i'm sure"});
  CHECK(rep.at(0, Section::Answer).instances == 2);

  // overlapping candidates count left to right without overlap
  rep = count_patterns({doc("aa aa aa")}, {"aa aa"});
  CHECK(rep.at(0, Section::Other).instances == 1);

  CHECK_THROWS_AS(count_patterns({}, {}), PreconditionError);
  CHECK_THROWS_AS(count_patterns({}, {"ok", ""}), PreconditionError);
}

TEST_CASE("count_patterns agrees with the naive oracle", "[corpus]") {
  std::mt19937_64 gen(17);
  const auto patterns = exprs(builtin_stack_patterns());
  std::vector<CorpusDoc> docs;
  for (int i = 0; i < 400; ++i) docs.push_back(doc(random_text(gen, 1 + gen() % 40), static_cast<Section>(gen() % 3)));
  const auto rep = count_patterns(docs, patterns);
  for (std::size_t p = 0; p < patterns.size(); ++p)
    for (std::size_t s = 0; s < kSectionCount; ++s) {
      std::uint64_t inst = 0, with = 0;
      for (const auto& d : docs)
        if (static_cast<std::size_t>(d.section) == s) {
          const auto c = oracle::count(d.text, patterns[p]);
          inst += c;
          with += c > 0;
        }
      CHECK(rep.counts[p][s].instances == inst);
      CHECK(rep.counts[p][s].docs_with_match == with);
      CHECK(rep.counts[p][s].docs_with_match <= rep.total_posts[s]);
    }
  std::array<std::uint64_t, 3> words{};
  for (const auto& d : docs) words[static_cast<std::size_t>(d.section)] += oracle::words(d.text);
  CHECK(rep.total_words == words);
}

TEST_CASE("count reports merge independently of sharding", "[corpus]") {
  std::mt19937_64 gen(23);
  const auto patterns = exprs(builtin_stack_patterns());
  std::vector<CorpusDoc> docs;
  for (int i = 0; i < 200; ++i) docs.push_back(doc(random_text(gen, 20), static_cast<Section>(gen() % 3)));
  const auto whole = count_patterns(docs, patterns);
  for (int trial = 0; trial < 5; ++trial) {
    CountReport merged(patterns);
    std::size_t i = 0;
    while (i < docs.size()) {
      const auto len = 1 + gen() % 50;
      std::vector<CorpusDoc> shard(docs.begin() + i, docs.begin() + std::min(docs.size(), i + len));
      merged.merge(count_patterns(shard, patterns));
      i += len;
    }
    CHECK(merged == whole);
  }
  CHECK_THROWS_AS(CountReport({"a"}).merge(CountReport({"b"})), PreconditionError);
}

TEST_CASE("published Stack Exchange totals", "[corpus]") {
  const auto rows = published_stack_exchange_counts();
  REQUIRE(rows.size() == 12);
  std::vector<PatternSpec> specs;
  for (const auto& r : rows) specs.push_back({r.expression, r.group});
  const auto totals = group_totals(replay_published_counts(rows), specs);
  REQUIRE(totals.size() == 2);
  CHECK(totals[0].group == "hedge");
  CHECK(totals[0].instances[0] == 1106442 + 84239 + 70606 + 21803 + 233686);
  CHECK(totals[0].instances[0] == 1516776);
  CHECK(totals[0].instances[1] == 2214539);
  CHECK(totals[1].instances[0] == 1907691);
  CHECK(totals[1].instances[1] == 526374);
}

TEST_CASE("normalize_rates", "[corpus]") {
  CountReport rep({"x"});
  rep.at(0, Section::Question).instances = 1;
  rep.total_posts[0] = 1000;
  rep.total_words[0] = 1000000;
  auto rows = normalize_rates(rep, {Section::Question});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].per_thousand_posts == 1.0);
  CHECK(rows[0].per_million_words == 1.0);
  rep.at(0, Section::Question).instances = 0;
  rows = normalize_rates(rep, {Section::Question});
  CHECK(rows[0].per_thousand_posts == 0.0);
  CHECK(rows[0].per_million_words == 0.0);
  CHECK_THROWS_AS(normalize_rates(rep, {Section::Answer}), PreconditionError);
}

TEST_CASE("published rates are consistent with back-solved totals", "[corpus]") {
  const auto rows = published_stack_exchange_counts();
  // back-solve the question-side totals from the first row, then recompute forward
  const double posts = rows[0].question_instances / rows[0].question_per_thousand_posts * 1000.0;
  const double words = rows[0].question_instances / rows[0].question_per_million_words * 1e6;
  CHECK_THAT(posts, WithinAbs(2.951e7, 0.001e7));
  CHECK_THAT(words, WithinAbs(6.821e9, 0.001e9));
  const auto P = static_cast<std::uint64_t>(std::llround(posts)), W = static_cast<std::uint64_t>(std::llround(words));
  CHECK_THAT(per_thousand(rows[0].question_instances, P), WithinAbs(37.5, 1e-6));
  CHECK_THAT(per_million(rows[0].question_instances, W), WithinAbs(162.2, 1e-6));
  for (const auto& r : rows) {
    CHECK_THAT(per_thousand(r.question_instances, P), WithinAbs(r.question_per_thousand_posts, 0.15));
    CHECK_THAT(per_million(r.question_instances, W), WithinAbs(r.question_per_million_words, 0.5));
  }
}

TEST_CASE("pct_histogram", "[corpus]") {
  auto h = pct_histogram({doc("90% sure, 100% done, 350% wrong")});
  CHECK(h.bins[90] == 1);
  CHECK(h.bins[100] == 1);
  CHECK(h.total() == 2);

  CHECK(pct_histogram({doc("width:100%")}, PctOptions{true}).total() == 0);
  CHECK(pct_histogram({doc("width:100%")}, PctOptions{false}).bins[100] == 1);
  CHECK(pct_histogram({doc("width: 100%")}, PctOptions{true}).bins[100] == 1);
  CHECK(pct_histogram({}).total() == 0);
  CHECK(pct_histogram({doc("3.5% and 0% and 007%")}).bins[0] == 1);
  CHECK(pct_histogram({doc("3.5% and 0% and 007%")}).bins[7] == 1);

  std::mt19937_64 gen(31);
  for (bool css : {false, true}) {
    std::vector<CorpusDoc> docs;
    std::array<std::uint64_t, 101> want{};
    for (int i = 0; i < 300; ++i) {
      docs.push_back(doc(random_text(gen, 30)));
      const auto o = oracle::pct_histogram(docs.back().text, css);
      for (int b = 0; b <= 100; ++b) want[b] += o[b];
    }
    CHECK(pct_histogram(docs, PctOptions{css}).bins == want);
  }
}

TEST_CASE("sample_matches", "[corpus]") {
  std::vector<CorpusDoc> docs;
  for (int i = 0; i < 10; ++i) docs.push_back(doc("doc " + std::to_string(i) + ": I think so", Section::Answer));
  auto all = sample_matches(docs, "i think", 10, 5, 1);
  REQUIRE(all.size() == 10);
  CHECK(all[3].match_index == 3);
  CHECK(all[3].section == Section::Answer);
  CHECK(all[3].excerpt == "c 3: I think so");
  CHECK(sample_matches(docs, "i think", 3, 5, 9) == sample_matches(docs, "i think", 3, 5, 9));
  CHECK(sample_matches(docs, "i think", 20, 5, 9).size() == 10);
  CHECK_THROWS_AS(sample_matches(docs, "i think", 0, 5, 9), PreconditionError);

  std::array<int, 10> freq{};
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) ++freq[sample_matches(docs, "i think", 1, 0, static_cast<std::uint64_t>(t))[0].match_index];
  for (int f : freq) CHECK_THAT(f / double(trials), WithinAbs(0.1, 0.01));

  // excerpts never split a multi-byte character
  const auto s = sample_matches({doc("\xC3\xA9\xC3\xA9\xC3\xA9 I think \xC3\xA9\xC3\xA9")}, "i think", 1, 2, 0);
  REQUIRE(s.size() == 1);
  CHECK(valid_utf8(s[0].excerpt));
}

TEST_CASE("split_qa_posts and JSON lines", "[corpus]") {
  auto posts = split_qa_posts("Q:\n\nHow?\n\nA:\n\nLike this.\n\nA:\n\nOr that.");
  REQUIRE(posts.size() == 3);
  CHECK(posts[0].section == Section::Question);
  CHECK(posts[1].section == Section::Answer);
  CHECK(posts[2].section == Section::Answer);
  CHECK(trim(posts[2].text) == "Or that.");
  posts = split_qa_posts("plain text");
  REQUIRE(posts.size() == 1);
  CHECK(posts[0].section == Section::Other);

  CorpusConfig field;
  field.mode = SectionMode::Field;
  field.text_field = "body";
  field.section_field = "meta.kind";
  auto d = docs_from_json_line(R"({"body":"I think","meta":{"kind":"question"}})", field);
  REQUIRE(d);
  CHECK((*d)[0].section == Section::Question);
  CHECK_FALSE(docs_from_json_line("{not json", CorpusConfig{}));
  CHECK_FALSE(docs_from_json_line("{\"text\":\"\xFF\"}", CorpusConfig{}));
  CHECK_FALSE(docs_from_json_line(R"({"other":"x"})", CorpusConfig{}));
}

TEST_CASE("corpus files: plain, gzip, threads and skips", "[corpus]") {
  testing::TempDir dir;
  std::mt19937_64 gen(41);
  std::string content;
  std::vector<CorpusDoc> expected_docs;
  for (int i = 0; i < 5000; ++i) {
    const auto q = random_text(gen, 10), a = random_text(gen, 10);
    const nlohmann::json j = {{"text", "Q:\n" + q + "\nA:\n" + a}};
    content += j.dump() + "\n";
    expected_docs.push_back({q, Section::Question});
    expected_docs.push_back({a, Section::Answer});
  }
  content += "{broken\n";
  const auto plain = dir / "c.jsonl";
  std::ofstream(plain, std::ios::binary) << content;
  const auto gz = dir / "c.jsonl.gz";
  {
    gzFile f = gzopen(gz.string().c_str(), "wb");
    gzwrite(f, content.data(), static_cast<unsigned>(content.size()));
    gzclose(f);
  }
  const auto patterns = exprs(builtin_stack_patterns());
  auto want = count_patterns(expected_docs, patterns);
  want.skipped_docs = 1;
  const auto one = count_corpus_file(plain, CorpusConfig{}, patterns, 1);
  CHECK(one == want);
  CHECK(count_corpus_file(plain, CorpusConfig{}, patterns, 3) == one);
  CHECK(count_corpus_file(gz, CorpusConfig{}, patterns, 2) == one);

  std::size_t n = 0, skipped = 0;
  for_each_corpus_doc(gz, CorpusConfig{}, [&](const CorpusDoc&) { ++n; }, [&] { ++skipped; });
  CHECK(n == 10000);
  CHECK(skipped == 1);
  CHECK_THROWS_AS(count_corpus_file(dir / "missing.jsonl", CorpusConfig{}, patterns), Error);
}

TEST_CASE("pattern files", "[corpus]") {
  const auto specs = parse_patterns("# comment\ni think\thedge\r\n\ni know\tbooster\nbare\n");
  REQUIRE(specs.size() == 3);
  CHECK(specs[1].group == "booster");
  CHECK(specs[2].group.empty());
  const auto shipped = parse_patterns(read_file(testing::data_dir() / "patterns.txt"));
  CHECK(shipped.size() == 12);
}

#pragma once

#include <json.hpp>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "aho_corasick.hpp"
#include "error.hpp"
#include "util.hpp"

namespace epiprobe {

enum class Section { Question = 0, Answer = 1, Other = 2 };
inline constexpr std::size_t kSectionCount = 3;

inline std::string_view to_string(Section s) {
  switch (s) {
    case Section::Question: return "question";
    case Section::Answer: return "answer";
    case Section::Other: return "other";
  }
  return "other";
}

struct CorpusDoc {
  std::string text;
  Section section = Section::Other;
};

// ---------------------------------------------------------------------------
// Text folding: ASCII lowercase, curly single quotes to '\''.

struct FoldedText {
  std::string text;
  std::vector<std::size_t> origin;  // origin[i] = byte offset in the source of folded byte i; only filled on request
};

inline FoldedText fold_text(std::string_view s, bool keep_origin = false) {
  FoldedText f;
  f.text.reserve(s.size());
  if (keep_origin) f.origin.reserve(s.size() + 1);
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    // U+2018 / U+2019 are E2 80 98 / E2 80 99
    if (c == 0xE2 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80 &&
        (static_cast<unsigned char>(s[i + 2]) == 0x98 || static_cast<unsigned char>(s[i + 2]) == 0x99)) {
      f.text.push_back('\'');
      if (keep_origin) f.origin.push_back(i);
      i += 3;
      continue;
    }
    f.text.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    if (keep_origin) f.origin.push_back(i);
    ++i;
  }
  if (keep_origin) f.origin.push_back(s.size());
  return f;
}

inline std::string fold_pattern(std::string_view p) { return fold_text(p).text; }

// ASCII letters, digits and '_' are word characters; everything else, including
// non-ASCII bytes, separates words.
inline bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && (std::isalnum(u) || c == '_');
}

inline bool at_word_boundaries(std::string_view text, std::size_t start, std::size_t end) {
  return (start == 0 || !is_word_byte(text[start - 1])) && (end == text.size() || !is_word_byte(text[end]));
}

inline std::size_t count_words(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    const bool sp = is_space(c);
    if (!sp && !in_word) ++n;
    in_word = !sp;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Count report

struct PatternCounts {
  std::uint64_t instances = 0;
  std::uint64_t docs_with_match = 0;
};

struct CountReport {
  std::vector<std::string> patterns;
  std::vector<std::array<PatternCounts, kSectionCount>> counts;  // [pattern][section]
  std::array<std::uint64_t, kSectionCount> total_posts{};
  std::array<std::uint64_t, kSectionCount> total_words{};
  std::uint64_t skipped_docs = 0;

  CountReport() = default;
  explicit CountReport(std::vector<std::string> pats) : patterns(std::move(pats)), counts(patterns.size()) {}

  const PatternCounts& at(std::size_t p, Section s) const { return counts[p][static_cast<std::size_t>(s)]; }
  PatternCounts& at(std::size_t p, Section s) { return counts[p][static_cast<std::size_t>(s)]; }

  // Commutative, associative merge of reports over the same pattern list.
  CountReport& merge(const CountReport& o) {
    if (o.patterns != patterns) throw PreconditionError("merging count reports over different patterns");
    for (std::size_t p = 0; p < counts.size(); ++p)
      for (std::size_t s = 0; s < kSectionCount; ++s) {
        counts[p][s].instances += o.counts[p][s].instances;
        counts[p][s].docs_with_match += o.counts[p][s].docs_with_match;
      }
    for (std::size_t s = 0; s < kSectionCount; ++s) {
      total_posts[s] += o.total_posts[s];
      total_words[s] += o.total_words[s];
    }
    skipped_docs += o.skipped_docs;
    return *this;
  }

  friend bool operator==(const CountReport& a, const CountReport& b) {
    if (a.patterns != b.patterns || a.total_posts != b.total_posts || a.total_words != b.total_words || a.skipped_docs != b.skipped_docs)
      return false;
    for (std::size_t p = 0; p < a.counts.size(); ++p)
      for (std::size_t s = 0; s < kSectionCount; ++s)
        if (a.counts[p][s].instances != b.counts[p][s].instances || a.counts[p][s].docs_with_match != b.counts[p][s].docs_with_match)
          return false;
    return true;
  }
};

// Streaming multi-pattern counter: case-insensitive, word-bounded, leftmost
// non-overlapping per pattern, one automaton pass per document.
class PatternCounter {
 public:
  explicit PatternCounter(const std::vector<std::string>& patterns) : report_(patterns), automaton_(folded(patterns)) {
    last_end_.resize(patterns.size());
    hits_.resize(patterns.size());
  }

  void add(const CorpusDoc& doc) {
    const auto sec = static_cast<std::size_t>(doc.section);
    ++report_.total_posts[sec];
    report_.total_words[sec] += count_words(doc.text);
    const auto text = fold_text(doc.text).text;
    std::fill(last_end_.begin(), last_end_.end(), 0);
    std::fill(hits_.begin(), hits_.end(), 0);
    automaton_.scan(text, [&](const AhoCorasick::Match& m) {
      const auto start = m.end - automaton_.pattern_length(m.pattern);
      if (start < last_end_[m.pattern] || !at_word_boundaries(text, start, m.end)) return;
      last_end_[m.pattern] = m.end;
      ++hits_[m.pattern];
    });
    for (std::size_t p = 0; p < hits_.size(); ++p) {
      if (!hits_[p]) continue;
      report_.counts[p][sec].instances += hits_[p];
      ++report_.counts[p][sec].docs_with_match;
    }
  }

  void skip() { ++report_.skipped_docs; }

  const CountReport& report() const { return report_; }

 private:
  static std::vector<std::string> folded(const std::vector<std::string>& patterns) {
    std::vector<std::string> out;
    for (const auto& p : patterns) {
      if (p.empty()) throw PreconditionError("empty pattern");
      out.push_back(fold_pattern(p));
    }
    return out;
  }

  CountReport report_;
  AhoCorasick automaton_;
  std::vector<std::size_t> last_end_;
  std::vector<std::uint64_t> hits_;
};

inline CountReport count_patterns(const std::vector<CorpusDoc>& docs, const std::vector<std::string>& patterns) {
  if (patterns.empty()) throw PreconditionError("count_patterns: no patterns");
  PatternCounter counter(patterns);
  for (const auto& d : docs) counter.add(d);
  return counter.report();
}

struct RateRow {
  std::string pattern;
  Section section = Section::Other;
  std::uint64_t instances = 0;
  double per_thousand_posts = 0.0;
  double per_million_words = 0.0;
};

inline double per_thousand(std::uint64_t instances, std::uint64_t posts) {
  return static_cast<double>(instances) / static_cast<double>(posts) * 1000.0;
}
inline double per_million(std::uint64_t instances, std::uint64_t words) {
  return static_cast<double>(instances) / static_cast<double>(words) * 1e6;
}

// Rates for each pattern in each requested section.
inline std::vector<RateRow> normalize_rates(const CountReport& report, const std::vector<Section>& sections) {
  for (auto s : sections) {
    const auto i = static_cast<std::size_t>(s);
    if (report.total_posts[i] == 0 || report.total_words[i] == 0)
      throw PreconditionError("normalize_rates: section '" + std::string(to_string(s)) + "' has no posts or words");
  }
  std::vector<RateRow> out;
  for (std::size_t p = 0; p < report.patterns.size(); ++p)
    for (auto s : sections) {
      const auto i = static_cast<std::size_t>(s);
      const auto n = report.counts[p][i].instances;
      out.push_back({report.patterns[p], s, n, per_thousand(n, report.total_posts[i]), per_million(n, report.total_words[i])});
    }
  return out;
}

// Sections that received at least one post.
inline std::vector<Section> populated_sections(const CountReport& report) {
  std::vector<Section> out;
  for (auto s : {Section::Question, Section::Answer, Section::Other})
    if (report.total_posts[static_cast<std::size_t>(s)] > 0) out.push_back(s);
  return out;
}

// ---------------------------------------------------------------------------
// Pattern groups (hedge / booster) and the Stack Exchange reference counts.

struct PatternSpec {
  std::string expression;
  std::string group;  // free-form label, e.g. "hedge" / "booster"
};

inline std::vector<PatternSpec> builtin_stack_patterns() {
  return {{"i think", "hedge"},       {"it could be", "hedge"},   {"it might be", "hedge"},    {"maybe it's", "hedge"},
          {"it should be", "hedge"},  {"i know", "booster"},      {"i'm certain", "booster"},  {"i am certain", "booster"},
          {"i'm sure", "booster"},    {"i am sure", "booster"},   {"it must be", "booster"},   {"evidently it's", "booster"}};
}

// "expression[\tgroup]" per line; '#' comments and blank lines ignored.
inline std::vector<PatternSpec> parse_patterns(std::string_view text) {
  std::vector<PatternSpec> out;
  std::size_t lineno = 0;
  for (const auto& raw : split(text, '\n')) {
    ++lineno;
    auto line = std::string_view(raw);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty() || trim(line).front() == '#') continue;
    const auto tab = line.find('\t');
    PatternSpec p;
    p.expression = std::string(trim(line.substr(0, tab)));
    if (tab != std::string_view::npos) p.group = std::string(trim(line.substr(tab + 1)));
    if (p.expression.empty()) throw ParseError("empty pattern", lineno);
    out.push_back(std::move(p));
  }
  return out;
}

struct GroupTotal {
  std::string group;
  std::array<std::uint64_t, kSectionCount> instances{};
};

// Sums instances per group label, in first-appearance order.
inline std::vector<GroupTotal> group_totals(const CountReport& report, const std::vector<PatternSpec>& specs) {
  if (specs.size() != report.patterns.size()) throw PreconditionError("group_totals: pattern list mismatch");
  std::vector<GroupTotal> out;
  for (std::size_t p = 0; p < specs.size(); ++p) {
    auto it = std::find_if(out.begin(), out.end(), [&](const GroupTotal& g) { return g.group == specs[p].group; });
    if (it == out.end()) it = out.insert(out.end(), GroupTotal{specs[p].group, {}});
    for (std::size_t s = 0; s < kSectionCount; ++s) it->instances[s] += report.counts[p][s].instances;
  }
  return out;
}

// Published per-expression counts for the Stack Exchange section of the Pile.
struct PublishedCountRow {
  std::string expression;
  std::string group;
  std::uint64_t question_instances;
  double question_per_thousand_posts;
  double question_per_million_words;
  std::uint64_t answer_instances;
  double answer_per_thousand_posts;
  double answer_per_million_words;
};

inline std::vector<PublishedCountRow> published_stack_exchange_counts() {
  return {
      {"i think", "hedge", 1106442, 37.5, 162.2, 1536543, 52.0, 302.7},
      {"it could be", "hedge", 84239, 2.9, 12.3, 143670, 4.1, 28.3},
      {"it might be", "hedge", 70606, 2.4, 10.3, 170803, 4.9, 33.6},
      {"maybe it's", "hedge", 21803, 0.7, 3.2, 17233, 0.5, 3.4},
      {"it should be", "hedge", 233686, 7.9, 34.3, 346290, 10.0, 68.2},
      {"i know", "booster", 1672756, 56.6, 245.2, 350241, 10.1, 69.0},
      {"i'm certain", "booster", 5975, 0.2, 0.9, 2758, 0.1, 0.5},
      {"i am certain", "booster", 4638, 0.1, 0.7, 1607, 0.0, 0.3},
      {"i'm sure", "booster", 119224, 4.0, 17.5, 76009, 2.2, 15.0},
      {"i am sure", "booster", 52089, 1.8, 7.6, 22983, 0.7, 4.5},
      {"it must be", "booster", 52976, 1.8, 7.8, 72724, 2.1, 14.3},
      {"evidently it's", "booster", 33, 0.0, 0.0, 52, 0.0, 0.0},
  };
}

// Builds a CountReport carrying the published instance counts (totals left at zero).
inline CountReport replay_published_counts(const std::vector<PublishedCountRow>& rows) {
  std::vector<std::string> pats;
  for (const auto& r : rows) pats.push_back(r.expression);
  CountReport rep(pats);
  for (std::size_t p = 0; p < rows.size(); ++p) {
    rep.at(p, Section::Question).instances = rows[p].question_instances;
    rep.at(p, Section::Answer).instances = rows[p].answer_instances;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Percentage histogram

struct PctHistogram {
  std::array<std::uint64_t, 101> bins{};

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto b : bins) t += b;
    return t;
  }
  PctHistogram& merge(const PctHistogram& o) {
    for (std::size_t i = 0; i < bins.size(); ++i) bins[i] += o.bins[i];
    return *this;
  }
  friend bool operator==(const PctHistogram&, const PctHistogram&) = default;
};

struct PctOptions {
  // Skip numerals glued to a preceding ':' ("width:100%").
  bool css_filter = false;
};

// Calls on_pct(value, numeral_start) for each maximal digit run followed by '%'
// whose value is at most 100. Fractional parts ("12.5%") do not count.
template <typename F>
void scan_percentages(std::string_view text, const PctOptions& opts, F&& on_pct) {
  auto digit = [](char c) { return c >= '0' && c <= '9'; };
  std::size_t i = 0;
  while (i < text.size()) {
    if (!digit(text[i])) {
      ++i;
      continue;
    }
    const auto start = i;
    std::uint32_t value = 0;
    while (i < text.size() && digit(text[i])) {
      if (value <= 1000) value = value * 10 + static_cast<std::uint32_t>(text[i] - '0');
      ++i;
    }
    if (i >= text.size() || text[i] != '%') continue;
    if (value > 100) continue;
    if (start >= 2 && text[start - 1] == '.' && digit(text[start - 2])) continue;
    if (opts.css_filter && start >= 1 && text[start - 1] == ':') continue;
    on_pct(static_cast<int>(value), start);
  }
}

inline void add_to_histogram(PctHistogram& h, std::string_view text, const PctOptions& opts = {}) {
  scan_percentages(text, opts, [&](int v, std::size_t) { ++h.bins[static_cast<std::size_t>(v)]; });
}

inline PctHistogram pct_histogram(const std::vector<CorpusDoc>& docs, const PctOptions& opts = {}) {
  PctHistogram h;
  for (const auto& d : docs) add_to_histogram(h, d.text, opts);
  return h;
}

// ---------------------------------------------------------------------------
// Match sampling for qualitative coding

struct MatchSample {
  std::string excerpt;
  Section section = Section::Other;
  std::uint64_t match_index = 0;  // 0-based position of the match in the stream

  friend bool operator==(const MatchSample&, const MatchSample&) = default;
};

namespace detail {

// Moves a byte offset back (or forward) onto a UTF-8 code point boundary.
inline std::size_t utf8_floor(std::string_view s, std::size_t i) {
  while (i > 0 && i < s.size() && (static_cast<unsigned char>(s[i]) & 0xC0) == 0x80) --i;
  return i;
}
inline std::size_t utf8_ceil(std::string_view s, std::size_t i) {
  while (i < s.size() && (static_cast<unsigned char>(s[i]) & 0xC0) == 0x80) ++i;
  return i;
}

}  // namespace detail

// Uniform reservoir sample (Algorithm R) of a single pattern's matches.
class MatchSampler {
 public:
  MatchSampler(const std::string& pattern, std::size_t n, std::size_t context_chars, std::uint64_t seed)
      : automaton_({fold_pattern(pattern)}), n_(n), context_(context_chars), rng_(make_rng(seed)) {
    if (n == 0) throw PreconditionError("sample_matches: n must be >= 1");
    if (pattern.empty()) throw PreconditionError("sample_matches: empty pattern");
  }

  void add(const CorpusDoc& doc) {
    const auto folded = fold_text(doc.text, true);
    std::size_t last_end = 0;
    automaton_.scan(folded.text, [&](const AhoCorasick::Match& m) {
      const auto start = m.end - automaton_.pattern_length(0);
      if (start < last_end || !at_word_boundaries(folded.text, start, m.end)) return;
      last_end = m.end;
      const auto k = seen_++;
      std::optional<std::size_t> slot;
      if (sample_.size() < n_) {
        slot = sample_.size();
        sample_.emplace_back();
      } else if (auto j = uniform_index(rng_, k + 1); j < n_) {
        slot = j;
      }
      if (!slot) return;
      const auto os = folded.origin[start], oe = folded.origin[m.end];
      const auto from = detail::utf8_floor(doc.text, os > context_ ? os - context_ : 0);
      const auto to = detail::utf8_ceil(doc.text, std::min(doc.text.size(), oe + context_));
      sample_[*slot] = MatchSample{doc.text.substr(from, to - from), doc.section, k};
    });
  }

  std::uint64_t matches_seen() const { return seen_; }
  const std::vector<MatchSample>& sample() const { return sample_; }

 private:
  AhoCorasick automaton_;
  std::size_t n_;
  std::size_t context_;
  Rng rng_;
  std::uint64_t seen_ = 0;
  std::vector<MatchSample> sample_;
};

inline std::vector<MatchSample> sample_matches(const std::vector<CorpusDoc>& docs, const std::string& pattern, std::size_t n,
                                               std::size_t context_chars, std::uint64_t seed) {
  MatchSampler s(pattern, n, context_chars, seed);
  for (const auto& d : docs) s.add(d);
  return s.sample();
}

// ---------------------------------------------------------------------------
// JSONL corpus input (plain or gzip) and section extraction

enum class SectionMode {
  QASplit,  // Stack Exchange dumps: "Q:\n\n<question>\n\nA:\n\n<answer>..." -> one post per block
  Field,    // section taken from a JSON field
  None,     // every document is a single "other" post
};

struct CorpusConfig {
  std::string text_field = "text";
  SectionMode mode = SectionMode::QASplit;
  std::string section_field = "section";
  std::string question_value = "question";
  std::string answer_value = "answer";
};

// Splits a Stack Exchange style document into question and answer posts. A
// line consisting of "Q:" opens the question; each "A:" line opens an answer.
// Documents not starting with "Q:" are returned whole as "other".
inline std::vector<CorpusDoc> split_qa_posts(std::string_view text) {
  std::vector<CorpusDoc> out;
  const auto lines = split(text, '\n');
  std::size_t first = 0;
  while (first < lines.size() && trim(lines[first]).empty()) ++first;
  if (first == lines.size() || trim(lines[first]) != "Q:") {
    out.push_back({std::string(text), Section::Other});
    return out;
  }
  CorpusDoc cur{"", Section::Question};
  auto flush = [&] {
    out.push_back(std::move(cur));
    cur = CorpusDoc{};
  };
  for (std::size_t i = first + 1; i < lines.size(); ++i) {
    if (trim(lines[i]) == "A:") {
      flush();
      cur.section = Section::Answer;
      continue;
    }
    if (!cur.text.empty()) cur.text.push_back('\n');
    cur.text += lines[i];
  }
  flush();
  return out;
}

// Extracts posts from one JSONL line. Returns nullopt for lines that must be
// skipped (invalid JSON, missing text, invalid UTF-8).
inline std::optional<std::vector<CorpusDoc>> docs_from_json_line(std::string_view line, const CorpusConfig& cfg) {
  if (!valid_utf8(line)) return std::nullopt;
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  const nlohmann::json* cur = &j;
  for (const auto& part : split(cfg.text_field, '.')) {
    if (!cur->is_object() || !cur->contains(part)) return std::nullopt;
    cur = &(*cur)[part];
  }
  if (!cur->is_string()) return std::nullopt;
  auto text = cur->get<std::string>();
  switch (cfg.mode) {
    case SectionMode::QASplit: return split_qa_posts(text);
    case SectionMode::None: return std::vector<CorpusDoc>{{std::move(text), Section::Other}};
    case SectionMode::Field: {
      Section s = Section::Other;
      const nlohmann::json* f = &j;
      bool found = true;
      for (const auto& part : split(cfg.section_field, '.')) {
        if (!f->is_object() || !f->contains(part)) {
          found = false;
          break;
        }
        f = &(*f)[part];
      }
      if (found && f->is_string()) {
        const auto v = f->get<std::string>();
        if (v == cfg.question_value) s = Section::Question;
        else if (v == cfg.answer_value) s = Section::Answer;
      }
      return std::vector<CorpusDoc>{{std::move(text), s}};
    }
  }
  return std::nullopt;
}

// Line reader over plain or gzip-compressed files (zlib detects the format).
class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path) : file_(gzopen(path.string().c_str(), "rb"), &gzclose) {
    if (!file_) throw Error("cannot open " + path.string());
    gzbuffer(file_.get(), 1 << 17);
  }

  bool next(std::string& line) {
    line.clear();
    for (;;) {
      if (pos_ < len_) {
        const auto* start = buf_.data() + pos_;
        const auto* nl = static_cast<const char*>(std::memchr(start, '\n', len_ - pos_));
        if (nl) {
          line.append(start, nl);
          pos_ += static_cast<std::size_t>(nl - start) + 1;
          if (!line.empty() && line.back() == '\r') line.pop_back();
          return true;
        }
        line.append(start, len_ - pos_);
        pos_ = len_;
      }
      const int n = gzread(file_.get(), buf_.data(), static_cast<unsigned>(buf_.size()));
      if (n < 0) throw Error("read error in compressed input");
      if (n == 0) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return !line.empty();
      }
      len_ = static_cast<std::size_t>(n);
      pos_ = 0;
    }
  }

 private:
  std::unique_ptr<gzFile_s, int (*)(gzFile)> file_;
  std::array<char, 1 << 16> buf_{};
  std::size_t pos_ = 0;
  std::size_t len_ = 0;
};

// Streams a JSONL corpus through `on_doc`; undecodable lines go to `on_skip`.
inline void for_each_corpus_doc(const std::filesystem::path& path, const CorpusConfig& cfg,
                                const std::function<void(const CorpusDoc&)>& on_doc, const std::function<void()>& on_skip) {
  LineReader reader(path);
  std::string line;
  while (reader.next(line)) {
    if (trim(line).empty()) continue;
    auto docs = docs_from_json_line(line, cfg);
    if (!docs) {
      on_skip();
      continue;
    }
    for (const auto& d : *docs) on_doc(d);
  }
}

// Counts a JSONL corpus with `threads` workers. Lines are processed in batches;
// each worker owns a PatternCounter and the results are merged, so the output
// does not depend on the thread count.
inline CountReport count_corpus_file(const std::filesystem::path& path, const CorpusConfig& cfg, const std::vector<std::string>& patterns,
                                     std::size_t threads = 1) {
  threads = std::max<std::size_t>(1, threads);
  std::vector<PatternCounter> counters;
  for (std::size_t t = 0; t < threads; ++t) counters.emplace_back(patterns);
  LineReader reader(path);
  constexpr std::size_t kBatch = 4096;
  std::vector<std::string> batch;
  auto process = [&](std::size_t t) {
    for (std::size_t i = t; i < batch.size(); i += threads) {
      if (trim(batch[i]).empty()) continue;
      auto docs = docs_from_json_line(batch[i], cfg);
      if (!docs) {
        counters[t].skip();
        continue;
      }
      for (const auto& d : *docs) counters[t].add(d);
    }
  };
  auto run_batch = [&] {
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(process, t);
    process(0);
    for (auto& th : pool) th.join();
    batch.clear();
  };
  std::string line;
  while (reader.next(line)) {
    batch.push_back(std::move(line));
    if (batch.size() == kBatch) run_batch();
  }
  if (!batch.empty()) run_batch();
  CountReport total(patterns);
  for (const auto& c : counters) total.merge(c.report());
  return total;
}

}  // namespace epiprobe

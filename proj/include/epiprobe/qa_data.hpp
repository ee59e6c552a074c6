#pragma once

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "error.hpp"
#include "util.hpp"

namespace epiprobe {

struct QAItem {
  std::string id;
  std::string question;
  std::vector<std::string> gold_aliases;  // first element is the primary answer
  std::string dataset;

  const std::string& primary_answer() const { return gold_aliases.front(); }

  friend bool operator==(const QAItem&, const QAItem&) = default;
};

struct Vocabulary {
  std::string name;
  std::unordered_set<std::string> tokens;

  Vocabulary(std::string name, std::unordered_set<std::string> tokens) : name(std::move(name)), tokens(std::move(tokens)) {
    if (this->tokens.empty()) throw PreconditionError("vocabulary '" + this->name + "' is empty");
  }

  bool contains(const std::string& tok) const { return tokens.count(tok) != 0; }
};

using Tokenizer = std::function<std::vector<std::string>(std::string_view)>;

// Splits on whitespace; every ASCII punctuation character becomes its own token.
inline std::vector<std::string> default_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (is_space(c)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

inline QAItem make_item(std::string id, std::string question, std::vector<std::string> aliases, std::string dataset = {}) {
  if (question.empty()) throw PreconditionError("item '" + id + "': empty question");
  if (aliases.empty()) throw PreconditionError("item '" + id + "': no gold answers");
  return QAItem{std::move(id), std::move(question), std::move(aliases), std::move(dataset)};
}

// ---------------------------------------------------------------------------
// JSONL ingestion

struct FieldMap {
  std::string question = "question";
  std::string answers = "answers";
  std::string id;  // empty: use the 1-based line number
};

struct QALoadResult {
  std::vector<QAItem> items;
  std::size_t rejected = 0;
  std::vector<std::string> warnings;
};

namespace detail {

// Resolves a dotted path ("answer.aliases") inside a JSON object.
inline const nlohmann::json* json_path(const nlohmann::json& root, std::string_view path) {
  const nlohmann::json* cur = &root;
  for (const auto& part : split(path, '.')) {
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(part);
    if (it == cur->end()) return nullptr;
    cur = &*it;
  }
  return cur;
}

}  // namespace detail

inline QALoadResult parse_qa_jsonl(std::string_view text, const FieldMap& fields = {}, std::string dataset = {}) {
  QALoadResult result;
  std::set<std::string> ids;
  std::size_t lineno = 0;
  for (const auto& raw : split(text, '\n')) {
    ++lineno;
    if (trim(raw).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!obj.is_object()) throw ParseError("expected a JSON object", lineno);
    const auto* q = detail::json_path(obj, fields.question);
    if (!q || !q->is_string()) throw ParseError("missing string field '" + fields.question + "'", lineno);
    const auto* a = detail::json_path(obj, fields.answers);
    if (!a) throw ParseError("missing field '" + fields.answers + "'", lineno);

    std::vector<std::string> aliases;
    if (a->is_string()) {
      aliases.push_back(a->get<std::string>());
    } else if (a->is_array()) {
      for (const auto& v : *a) {
        if (!v.is_string()) throw ParseError("non-string answer in '" + fields.answers + "'", lineno);
        auto s = v.get<std::string>();
        if (!trim(s).empty() && std::find(aliases.begin(), aliases.end(), s) == aliases.end()) aliases.push_back(std::move(s));
      }
    } else {
      throw ParseError("field '" + fields.answers + "' must be a string or array", lineno);
    }

    std::string id = std::to_string(lineno);
    if (!fields.id.empty()) {
      const auto* idv = detail::json_path(obj, fields.id);
      if (idv && idv->is_string()) id = idv->get<std::string>();
      else if (idv && idv->is_number_integer()) id = std::to_string(idv->get<long long>());
    }

    if (aliases.empty()) {
      ++result.rejected;
      result.warnings.push_back("line " + std::to_string(lineno) + ": item '" + id + "' has no answers; rejected");
      continue;
    }
    if (q->get<std::string>().empty()) throw ParseError("empty question", lineno);
    if (!ids.insert(id).second) throw ParseError("duplicate id '" + id + "'", lineno);
    result.items.push_back(QAItem{std::move(id), q->get<std::string>(), std::move(aliases), dataset});
  }
  for (const auto& w : result.warnings) warn(w);
  return result;
}

inline QALoadResult load_qa_jsonl(const std::filesystem::path& path, const FieldMap& fields = {}, std::string dataset = {}) {
  if (dataset.empty()) dataset = path.stem().string();
  return parse_qa_jsonl(read_file(path), fields, std::move(dataset));
}

inline std::string item_to_json(const QAItem& item) {
  nlohmann::json j = {{"id", item.id}, {"question", item.question}, {"answers", item.gold_aliases}, {"dataset", item.dataset}};
  return j.dump();
}

inline std::string items_to_jsonl(const std::vector<QAItem>& items) {
  std::string out;
  for (const auto& it : items) out += item_to_json(it) + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// CountryQA

inline std::vector<QAItem> generate_country_qa(const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) throw PreconditionError("generate_country_qa: no country/capital pairs");
  std::vector<QAItem> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [country, capital] = pairs[i];
    out.push_back(make_item("country-" + std::to_string(i + 1), "What is the capital of " + country + "?", {capital}, "countryqa"));
  }
  return out;
}

// "country,capital" rows; an optional header row starting with "country" is skipped.
inline std::vector<std::pair<std::string, std::string>> parse_country_csv(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t lineno = 0;
  for (const auto& raw : split(text, '\n')) {
    ++lineno;
    auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto comma = line.find(',');
    if (comma == std::string_view::npos) throw ParseError("expected country,capital", lineno);
    auto country = std::string(trim(line.substr(0, comma)));
    auto capital = std::string(trim(line.substr(comma + 1)));
    if (lineno == 1 && to_lower_ascii(country) == "country") continue;
    if (country.empty() || capital.empty()) throw ParseError("empty country or capital", lineno);
    out.emplace_back(std::move(country), std::move(capital));
  }
  return out;
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::unordered_set<std::string> toks;
  for (auto& line : read_lines(path))
    if (!line.empty()) toks.insert(std::move(line));
  return Vocabulary(path.filename().string(), std::move(toks));
}

// ---------------------------------------------------------------------------
// Answerability filter and sampling

inline std::vector<QAItem> filter_answerable(const std::vector<QAItem>& items, const Vocabulary& vocab,
                                             const Tokenizer& tokenize = default_tokenize) {
  std::vector<QAItem> out;
  for (const auto& item : items) {
    const auto toks = tokenize(item.primary_answer());
    if (toks.size() != 1 || !vocab.contains(toks.front())) continue;
    QAItem kept = item;
    kept.gold_aliases.clear();
    kept.gold_aliases.push_back(item.primary_answer());
    for (std::size_t i = 1; i < item.gold_aliases.size(); ++i) {
      const auto atoks = tokenize(item.gold_aliases[i]);
      const bool in_vocab = !atoks.empty() && std::all_of(atoks.begin(), atoks.end(), [&](const auto& t) { return vocab.contains(t); });
      if (in_vocab) kept.gold_aliases.push_back(item.gold_aliases[i]);
    }
    out.push_back(std::move(kept));
  }
  return out;
}

// Uniform sample without replacement. Items are put in id order first, so the
// result depends only on the id multiset, n and seed.
inline std::vector<QAItem> sample_subset(const std::vector<QAItem>& items, std::size_t n, std::uint64_t seed) {
  if (n > items.size())
    throw PreconditionError("sample_subset: n=" + std::to_string(n) + " exceeds " + std::to_string(items.size()) + " items");
  std::vector<QAItem> pool = items;
  std::stable_sort(pool.begin(), pool.end(), [](const QAItem& a, const QAItem& b) { return a.id < b.id; });
  auto rng = make_rng(seed);
  // partial Fisher-Yates: the first n slots end up uniformly sampled
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + uniform_index(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  return pool;
}

}  // namespace epiprobe

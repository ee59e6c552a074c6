#pragma once

#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "completion.hpp"
#include "error.hpp"
#include "qa_data.hpp"
#include "typology.hpp"
#include "util.hpp"

namespace epiprobe {

struct PromptStyle {
  // "Q: ...\nA:" when true, "Q: ... A:" otherwise.
  bool newline_before_answer = true;
};

// "Q: {question}\nA: {surface}" for markers, "Q: {question}\nA:" for the
// standard method. Never ends in whitespace.
inline std::string build_prompt(const QAItem& item, const MarkerTemplate& tmpl, const PromptStyle& style = {}) {
  std::string out = "Q: ";
  out += trim(item.question);
  out += style.newline_before_answer ? "\nA:" : " A:";
  const auto surface = trim(tmpl.surface);
  if (!surface.empty()) {
    out += ' ';
    out += surface;
  }
  return out;
}

struct RunParams {
  int max_tokens = 10;
  double temperature = 1.0;
  int top_k = 5;
  PromptStyle style;
};

struct ProbeRecord {
  std::string item_id;
  std::string template_id;
  std::optional<int> stated_pct;
  std::string prompt;
  std::optional<Completion> completion;  // absent when the backend call failed
  std::optional<std::string> error;
  std::string model_id;
  std::int64_t timestamp = 0;  // producer-reported creation time of the completion

  friend bool operator==(const ProbeRecord&, const ProbeRecord&) = default;
};

struct RunManifest {
  std::string dataset;
  std::string registry_digest;
  std::string items_digest;
  std::string model_id;
  RunParams params;
  std::uint64_t seed = 0;
  std::string tool_version{kToolVersion};
  std::size_t records = 0;
  std::size_t failures = 0;
  std::string kind = "verbal";  // verbal | numeric
  std::vector<int> grid;        // numeric runs only
};

struct RunResult {
  std::vector<ProbeRecord> records;
  RunManifest manifest;
};

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const ProbeRecord& r) {
  nlohmann::json j = {{"item_id", r.item_id}, {"template_id", r.template_id}, {"prompt", r.prompt},
                      {"model_id", r.model_id}, {"timestamp", r.timestamp}};
  j["stated_pct"] = r.stated_pct ? nlohmann::json(*r.stated_pct) : nlohmann::json(nullptr);
  j["completion"] = r.completion ? to_json(*r.completion) : nlohmann::json(nullptr);
  j["error"] = r.error ? nlohmann::json(*r.error) : nlohmann::json(nullptr);
  return j;
}

inline ProbeRecord probe_record_from_json(const nlohmann::json& j) {
  ProbeRecord r;
  r.item_id = j.at("item_id").get<std::string>();
  r.template_id = j.at("template_id").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  r.model_id = j.value("model_id", std::string());
  r.timestamp = j.value("timestamp", std::int64_t{0});
  if (j.contains("stated_pct") && !j["stated_pct"].is_null()) r.stated_pct = j["stated_pct"].get<int>();
  if (j.contains("completion") && !j["completion"].is_null()) r.completion = completion_from_json(j["completion"]);
  if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
  return r;
}

inline nlohmann::json to_json(const RunManifest& m) {
  return {{"dataset", m.dataset},
          {"registry_digest", m.registry_digest},
          {"items_digest", m.items_digest},
          {"model_id", m.model_id},
          {"max_tokens", m.params.max_tokens},
          {"temperature", m.params.temperature},
          {"top_k", m.params.top_k},
          {"prompt_convention", m.params.style.newline_before_answer ? "Q: {question}\\nA: {marker}" : "Q: {question} A: {marker}"},
          {"newline_before_answer", m.params.style.newline_before_answer},
          {"seed", m.seed},
          {"tool_version", m.tool_version},
          {"records", m.records},
          {"failures", m.failures},
          {"kind", m.kind},
          {"grid", m.grid}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.dataset = j.value("dataset", std::string());
  m.registry_digest = j.value("registry_digest", std::string());
  m.items_digest = j.value("items_digest", std::string());
  m.model_id = j.value("model_id", std::string());
  m.params.max_tokens = j.value("max_tokens", 10);
  m.params.temperature = j.value("temperature", 1.0);
  m.params.top_k = j.value("top_k", 5);
  m.params.style.newline_before_answer = j.value("newline_before_answer", true);
  m.seed = j.value("seed", std::uint64_t{0});
  m.tool_version = j.value("tool_version", std::string(kToolVersion));
  m.records = j.value("records", std::size_t{0});
  m.failures = j.value("failures", std::size_t{0});
  m.kind = j.value("kind", std::string("verbal"));
  m.grid = j.value("grid", std::vector<int>{});
  return m;
}

inline std::string records_to_jsonl(const std::vector<ProbeRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + '\n';
  return out;
}

inline std::vector<ProbeRecord> records_from_jsonl(std::string_view text) {
  std::vector<ProbeRecord> out;
  std::size_t lineno = 0;
  for (const auto& line : split(text, '\n')) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(probe_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad probe record: ") + e.what(), lineno);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Execution

namespace detail {

struct ProbeJob {
  const QAItem* item;
  const MarkerTemplate* tmpl;
};

// Per-record request seed; independent of scheduling order.
inline std::uint64_t record_seed(std::uint64_t run_seed, const std::string& item_id, const std::string& template_id) {
  return splitmix64(run_seed ^ fnv1a64(item_id + '\x1f' + template_id));
}

inline std::vector<ProbeRecord> execute(const std::vector<ProbeJob>& jobs, Backend& backend, const RunParams& params,
                                        std::uint64_t seed) {
  std::vector<ProbeRecord> records(jobs.size());
  std::atomic<std::size_t> next{0};
  const auto model = backend.model_id();
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
      const auto& job = jobs[i];
      ProbeRecord& rec = records[i];
      rec.item_id = job.item->id;
      rec.template_id = job.tmpl->id;
      rec.stated_pct = job.tmpl->stated_pct;
      rec.prompt = build_prompt(*job.item, *job.tmpl, params.style);
      rec.model_id = model;
      CompletionRequest req;
      req.prompt = rec.prompt;
      req.max_tokens = params.max_tokens;
      req.temperature = params.temperature;
      req.top_k_alternatives = params.top_k;
      req.model_id = model;
      req.seed = record_seed(seed, rec.item_id, rec.template_id);
      req.tag = ProbeTag{job.item->id, job.tmpl->id, job.tmpl->features};
      try {
        rec.completion = backend.complete(req);
        rec.timestamp = rec.completion->created;
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
    }
  };
  const auto n_threads = std::max<std::size_t>(1, std::min(backend.max_concurrency(), jobs.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  return records;
}

inline RunManifest base_manifest(const std::vector<QAItem>& items, const std::vector<MarkerTemplate>& templates,
                                 const Backend& backend, const RunParams& params, std::uint64_t seed) {
  RunManifest m;
  m.dataset = items.empty() ? "" : items.front().dataset;
  m.registry_digest = registry_digest(templates);
  m.items_digest = sha256_hex(items_to_jsonl(items));
  m.model_id = backend.model_id();
  m.params = params;
  m.seed = seed;
  return m;
}

}  // namespace detail

// One record per (item, prompt variant): every template plus the standard
// method, ordered item-major. Backend failures become error records.
inline RunResult run_experiment(const std::vector<QAItem>& items, const std::vector<MarkerTemplate>& templates, Backend& backend,
                                const RunParams& params, std::uint64_t seed) {
  if (items.empty()) throw PreconditionError("run_experiment: no items");
  if (templates.empty()) throw PreconditionError("run_experiment: no templates");
  std::vector<MarkerTemplate> variants;
  for (const auto& t : templates)
    if (!t.is_standard()) variants.push_back(t);
  variants.push_back(standard_method());

  std::vector<detail::ProbeJob> jobs;
  jobs.reserve(items.size() * variants.size());
  for (const auto& item : items)
    for (const auto& t : variants) jobs.push_back({&item, &t});

  RunResult out;
  out.records = detail::execute(jobs, backend, params, seed);
  out.manifest = detail::base_manifest(items, templates, backend, params, seed);
  out.manifest.records = out.records.size();
  for (const auto& r : out.records) out.manifest.failures += r.error ? 1 : 0;
  return out;
}

// Items x numeric templates x grid values; stated_pct set on every record.
inline RunResult run_numeric(const std::vector<QAItem>& items, const std::vector<MarkerTemplate>& numeric_templates,
                             const NumericGrid& grid, Backend& backend, const RunParams& params, std::uint64_t seed) {
  if (grid.values.empty()) throw PreconditionError("run_numeric: empty grid");
  if (items.empty()) throw PreconditionError("run_numeric: no items");
  if (numeric_templates.empty()) throw PreconditionError("run_numeric: no templates");
  std::vector<MarkerTemplate> expanded;
  for (const auto& t : numeric_templates) {
    auto e = expand_numeric(t, grid);
    expanded.insert(expanded.end(), e.begin(), e.end());
  }
  std::vector<detail::ProbeJob> jobs;
  for (const auto& item : items)
    for (const auto& t : expanded) jobs.push_back({&item, &t});

  RunResult out;
  out.records = detail::execute(jobs, backend, params, seed);
  out.manifest = detail::base_manifest(items, numeric_templates, backend, params, seed);
  out.manifest.kind = "numeric";
  out.manifest.grid = grid.values;
  out.manifest.records = out.records.size();
  for (const auto& r : out.records) out.manifest.failures += r.error ? 1 : 0;
  return out;
}

}  // namespace epiprobe

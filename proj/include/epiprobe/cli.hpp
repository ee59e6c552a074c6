#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <functional>
#include <set>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "cache.hpp"
#include "completion.hpp"
#include "corpus.hpp"
#include "error.hpp"
#include "http_backend.hpp"
#include "mock_backend.hpp"
#include "probe.hpp"
#include "qa_data.hpp"
#include "report.hpp"
#include "scoring.hpp"
#include "stats.hpp"
#include "teach.hpp"
#include "typology.hpp"
#include "util.hpp"

namespace epiprobe::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Option groups shared by several subcommands

struct BackendOptions {
  std::string kind = "mock";  // mock | http
  std::string mock_spec;
  std::string endpoint = "https://api.openai.com/v1";
  std::string model;
  std::string api_key_env = "EPISTEMIC_PROBE_API_KEY";
  bool text_only = false;
  std::size_t concurrency = 4;
  double requests_per_second = 0.0;
  int max_attempts = 5;
  std::string cache_dir;
};

struct DatasetOptions {
  std::string path;
  std::string countries;  // "country,capital" CSV, alternative to path
  std::string question_field = "question";
  std::string answers_field = "answers";
  std::string id_field = "id";
  std::string vocab;
  std::size_t sample = 0;
};

struct ParamOptions {
  int max_tokens = 10;
  double temperature = 1.0;
  int top_k = 5;
  bool space_before_answer = false;

  RunParams params() const {
    RunParams p;
    p.max_tokens = max_tokens;
    p.temperature = temperature;
    p.top_k = top_k;
    p.style.newline_before_answer = !space_before_answer;
    return p;
  }
};

inline void add_backend_options(CLI::App* cmd, BackendOptions& o) {
  cmd->add_option("--backend", o.kind, "Backend kind")->check(CLI::IsMember({"mock", "http"}))->capture_default_str();
  cmd->add_option("--mock-spec", o.mock_spec, "MockModelSpec JSON (mock backend)");
  cmd->add_option("--endpoint", o.endpoint, "OpenAI-compatible base URL (http backend)")->capture_default_str();
  cmd->add_option("--model", o.model, "Model name (http backend)");
  cmd->add_option("--api-key-env", o.api_key_env, "Environment variable holding the API key")->capture_default_str();
  cmd->add_flag("--text-only", o.text_only, "Endpoint returns no logprobs");
  cmd->add_option("--concurrency", o.concurrency, "Concurrent requests")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--rps", o.requests_per_second, "Request rate limit, 0 = unlimited")->capture_default_str();
  cmd->add_option("--max-attempts", o.max_attempts, "Attempts per request")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--cache-dir", o.cache_dir, "Completion cache directory (disabled when empty)");
}

inline void add_dataset_options(CLI::App* cmd, DatasetOptions& o) {
  cmd->add_option("--dataset", o.path, "QA items as JSONL");
  cmd->add_option("--countries", o.countries, "country,capital CSV (builds CountryQA items)");
  cmd->add_option("--question-field", o.question_field, "JSON path of the question")->capture_default_str();
  cmd->add_option("--answers-field", o.answers_field, "JSON path of the answer or alias list")->capture_default_str();
  cmd->add_option("--id-field", o.id_field, "JSON path of the item id")->capture_default_str();
  cmd->add_option("--vocab", o.vocab, "Vocabulary file; keeps items with single-token answers");
  cmd->add_option("--sample", o.sample, "Sample this many items (0 = all)")->capture_default_str();
}

inline void add_param_options(CLI::App* cmd, ParamOptions& o) {
  cmd->add_option("--max-tokens", o.max_tokens, "Tokens generated per prompt")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--temperature", o.temperature, "Sampling temperature")->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd->add_option("--top-k", o.top_k, "Alternatives returned per step")->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd->add_flag("--space-before-answer", o.space_before_answer, "Use 'Q: ... A:' instead of a newline before 'A:'");
}

inline std::shared_ptr<Backend> make_backend(const BackendOptions& o) {
  std::shared_ptr<Backend> b;
  if (o.kind == "mock") {
    if (o.mock_spec.empty()) throw ValidationError("--mock-spec is required for the mock backend");
    b = std::make_shared<MockBackend>(load_mock_spec(o.mock_spec), o.concurrency);
  } else {
    HttpBackendConfig cfg;
    cfg.base_url = o.endpoint;
    cfg.model = o.model;
    cfg.api_key_env = o.api_key_env;
    cfg.supports_logprobs = !o.text_only;
    cfg.concurrency = o.concurrency;
    cfg.requests_per_second = o.requests_per_second;
    cfg.max_attempts = o.max_attempts;
    if (cfg.model.empty()) throw ValidationError("--model is required for the http backend");
    b = std::make_shared<HttpBackend>(cfg);
  }
  if (!o.cache_dir.empty()) b = std::make_shared<CachedBackend>(b, o.cache_dir);
  return b;
}

inline nlohmann::json backend_json(const BackendOptions& o) {
  // the key itself is never recorded, only the variable that holds it
  nlohmann::json j = {{"kind", o.kind}};
  if (o.kind == "mock") j["mock_spec"] = o.mock_spec;
  else j.update({{"endpoint", o.endpoint}, {"model", o.model}, {"api_key_env", o.api_key_env}, {"text_only", o.text_only}});
  return j;
}

inline std::vector<QAItem> load_items(const DatasetOptions& o, std::uint64_t seed) {
  std::vector<QAItem> items;
  if (!o.countries.empty()) {
    items = generate_country_qa(parse_country_csv(read_file(o.countries)));
  } else {
    if (o.path.empty()) throw ValidationError("--dataset or --countries is required");
    FieldMap fm{o.question_field, o.answers_field, o.id_field};
    items = load_qa_jsonl(o.path, fm).items;
  }
  if (!o.vocab.empty()) items = filter_answerable(items, load_vocabulary(o.vocab));
  if (o.sample > 0) items = sample_subset(items, o.sample, seed);
  if (items.empty()) throw ValidationError("dataset yields no items");
  return items;
}

inline std::vector<MarkerTemplate> load_templates(const std::string& path, const std::string& only, bool numeric) {
  auto t = path.empty() ? (numeric ? builtin_numeric_templates() : builtin_registry()) : load_registry(path);
  if (!only.empty()) {
    std::vector<MarkerTemplate> sel;
    for (const auto& id : split(only, ',')) {
      auto it = std::find_if(t.begin(), t.end(), [&](const MarkerTemplate& m) { return m.id == trim(id); });
      if (it == t.end()) throw ValidationError("unknown template '" + std::string(trim(id)) + "'");
      sel.push_back(*it);
    }
    t = std::move(sel);
  }
  return t;
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

// Files written for every probe run.
inline void persist_run(const fs::path& out, const RunResult& run, const std::vector<QAItem>& items, const std::vector<MarkerTemplate>& templates,
                        const nlohmann::json& extra) {
  fs::create_directories(out);
  auto manifest = to_json(run.manifest);
  manifest.update(extra);
  write_json(out / "manifest.json", manifest);
  write_file_atomic(out / "records.jsonl", records_to_jsonl(run.records));
  write_file_atomic(out / "items.jsonl", items_to_jsonl(items));
  write_file_atomic(out / "templates.tsv", serialize_registry(templates));
}

struct LoadedRun {
  RunManifest manifest;
  std::vector<QAItem> items;
  std::vector<MarkerTemplate> templates;
  std::vector<ProbeRecord> records;
};

inline LoadedRun load_run(const fs::path& dir) {
  LoadedRun r;
  r.manifest = manifest_from_json(read_json(dir / "manifest.json"));
  r.items = parse_qa_jsonl(read_file(dir / "items.jsonl"), FieldMap{"question", "answers", "id"}, r.manifest.dataset).items;
  r.templates = load_registry(dir / "templates.tsv");
  r.records = records_from_jsonl(read_file(dir / "records.jsonl"));
  return r;
}

// Persisted scores when present, otherwise scored on the fly from the records.
inline std::vector<ScoredResult> load_scores(const fs::path& dir, const LoadedRun& run) {
  if (fs::exists(dir / "scored.jsonl")) return scored_from_jsonl(read_file(dir / "scored.jsonl"));
  return score_records(run.records, run.items).results;
}

inline TeachConfig teach_config_from_json(const nlohmann::json& j) {
  TeachConfig c;
  c.direction = parse_direction(j.value("direction", std::string("certainty")));
  c.threshold = j.value("threshold", 0.5);
  c.placement = parse_placement(j.value("placement", std::string("suffix")));
  c.ordering = parse_ordering(j.value("ordering", std::string("ascending")));
  c.marker = find_marker_pair(builtin_marker_pairs(), j.value("marker", std::string("undoubtedly")));
  c.seed = j.value("seed", std::uint64_t{0});
  c.check();
  return c;
}

inline std::vector<std::string> input_list(const std::vector<std::string>& inputs) {
  if (inputs.empty()) throw ValidationError("--input is required");
  for (const auto& p : inputs)
    if (!fs::exists(p)) throw ValidationError("input not found: " + p);
  return inputs;
}

struct CorpusOptions {
  std::vector<std::string> inputs;
  std::string mode = "qa-split";
  CorpusConfig cfg;

  CorpusConfig config() const {
    auto c = cfg;
    c.mode = mode == "field" ? SectionMode::Field : mode == "none" ? SectionMode::None : SectionMode::QASplit;
    return c;
  }
};

inline void add_corpus_options(CLI::App* cmd, CorpusOptions& o) {
  cmd->add_option("--input", o.inputs, "JSONL corpus files (plain or gzip)")->required();
  cmd->add_option("--section-mode", o.mode, "How posts and sections are extracted")
      ->check(CLI::IsMember({"qa-split", "field", "none"}))
      ->capture_default_str();
  cmd->add_option("--text-field", o.cfg.text_field, "JSON path of the document text")->capture_default_str();
  cmd->add_option("--section-field", o.cfg.section_field, "JSON path of the section label (field mode)")->capture_default_str();
  cmd->add_option("--question-value", o.cfg.question_value, "Section label of questions (field mode)")->capture_default_str();
  cmd->add_option("--answer-value", o.cfg.answer_value, "Section label of answers (field mode)")->capture_default_str();
}

// ---------------------------------------------------------------------------

class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(int argc, const char* const* argv) {
    CLI::App app{"Probe language models with epistemic markers, score the answers, and analyze corpora.", "epiprobe"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.set_config("--config", "", "TOML config file; command-line flags take precedence");
    app.require_subcommand(1);
    build(app);
    auto prev = set_warning_sink([this](std::string_view m) { err_ << "warning: " << m << "\n"; });
    int rc = 0;
    if (argc > 1 && argv[1][0] != '-' && !app.get_subcommand_no_throw(argv[1])) {
      err_ << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
      set_warning_sink(std::move(prev));
      return 2;
    }
    try {
      app.parse(argc, argv);
      if (action_) action_();
    } catch (const CLI::CallForHelp& e) {
      rc = app.exit(e, out_, err_);
    } catch (const CLI::CallForAllHelp& e) {
      rc = app.exit(e, out_, err_);
    } catch (const CLI::CallForVersion& e) {
      rc = app.exit(e, out_, err_);
    } catch (const CLI::ParseError& e) {
      rc = app.exit(e, out_, err_);
      err_ << "\n" << app.help();
      if (rc == 0) rc = 2;
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << "\n";
      rc = 1;
    }
    set_warning_sink(std::move(prev));
    return rc;
  }

 private:
  void build(CLI::App& app) {
    build_templates(app);
    build_eval(app);
    build_numeric(app);
    build_corpus(app);
    build_teach(app);
    build_cache(app);
    build_mock(app);
  }

  // -- templates -------------------------------------------------------------
  void build_templates(CLI::App& app) {
    auto* t = app.add_subcommand("templates", "Inspect and validate the marker registry");
    t->require_subcommand(1);
    auto* list = t->add_subcommand("list", "Print the registry as a table");
    list->add_option("--templates", templates_path_, "Registry TSV (default: built-in)");
    list->add_flag("--numeric", numeric_, "List the numeric templates instead");
    list->callback([this] {
      action_ = [this] {
        const auto ts = load_templates(templates_path_, "", numeric_);
        out_ << "id\tstrength\tshield\tevidential\tfactive\tsourced\tfirst_person\tsurface\n";
        for (const auto& m : ts)
          out_ << m.id << '\t' << to_string(m.features.strength) << '\t' << to_string(m.features.shield) << '\t' << m.features.evidential << '\t'
               << m.features.factive << '\t' << m.features.sourced << '\t' << m.features.first_person << '\t' << m.surface << '\n';
      };
    });
    auto* val = t->add_subcommand("validate", "Check registry invariants");
    val->add_option("--templates", templates_path_, "Registry TSV (default: built-in)");
    val->add_flag("--numeric", numeric_, "Validate the numeric templates instead");
    val->callback([this] {
      action_ = [this] {
        const auto ts = load_templates(templates_path_, "", numeric_);
        const auto rep = validate_registry(ts);
        for (const auto& w : rep.warnings) warn(w);
        for (const auto& v : rep.violations) out_ << (v.template_id.empty() ? "(registry)" : v.template_id) << ": " << v.rule << ": " << v.message << "\n";
        out_ << ts.size() << " templates, " << rep.violations.size() << " violations\n";
        if (!rep.ok()) throw ValidationError("registry has violations");
      };
    });
  }

  // -- eval ------------------------------------------------------------------
  void build_eval(CLI::App& app) {
    auto* e = app.add_subcommand("eval", "Run, score and report marker experiments");
    e->require_subcommand(1);

    auto* run = e->add_subcommand("run", "Query the backend for every item x template (plus the standard prompt)");
    add_dataset_options(run, data_);
    add_backend_options(run, backend_);
    add_param_options(run, params_);
    run->add_option("--templates", templates_path_, "Registry TSV (default: built-in)");
    run->add_option("--only", only_, "Comma-separated template ids");
    run->add_option("--seed", seed_, "Run seed")->capture_default_str();
    run->add_option("--out", out_dir_, "Output directory")->required();
    run->callback([this] { action_ = [this] { eval_run(); }; });

    auto* score = e->add_subcommand("score", "Score the records of a run");
    score->add_option("--run", run_dir_, "Run directory")->required()->check(CLI::ExistingDirectory);
    score->add_flag("--negation-guard", negation_guard_, "Reject answers directly preceded by a negation");
    score->callback([this] { action_ = [this] { eval_score(); }; });

    auto* report = e->add_subcommand("report", "Aggregate scored results");
    report->add_option("--run", run_dir_, "Run directory")->required()->check(CLI::ExistingDirectory);
    report->add_option("--by", by_, "Grouping")
        ->check(CLI::IsMember({"strength", "factive", "evidential", "shield", "sourced", "pronoun", "template"}))
        ->capture_default_str();
    report->add_option("--resamples", resamples_, "Bootstrap resamples")->check(CLI::Range(1000, 10000000))->capture_default_str();
    report->add_option("--seed", report_seed_, "Bootstrap seed (default: the run seed)");
    report->add_flag("--no-charts", no_charts_, "Skip SVG output");
    report->callback([this] { action_ = [this] { eval_report(); }; });
  }

  void eval_run() {
    const auto items = load_items(data_, seed_);
    const auto templates = load_templates(templates_path_, only_, false);
    auto backend = make_backend(backend_);
    const auto run = run_experiment(items, templates, *backend, params_.params(), seed_);
    persist_run(out_dir_, run, items, templates, {{"backend", backend_json(backend_)}});
    out_ << run.records.size() << " records (" << run.manifest.failures << " failed) written to " << out_dir_ << "\n";
  }

  void eval_score() {
    const auto run = load_run(run_dir_);
    MatchOptions mo;
    mo.negation_guard = negation_guard_;
    const auto scored = score_records(run.records, run.items, mo);
    write_file_atomic(fs::path(run_dir_) / "scored.jsonl", scored_to_jsonl(scored.results));
    std::size_t correct = 0;
    for (const auto& r : scored.results) correct += r.correct;
    out_ << "scored " << scored.results.size() << " records, " << correct << " correct, " << scored.skipped_errors << " failed records skipped\n";
  }

  void eval_report() {
    const fs::path dir = run_dir_;
    const auto run = load_run(dir);
    const auto results = load_scores(dir, run);
    require_results(results);
    BootstrapOptions boot{resamples_, 0.95, report_seed_ ? *report_seed_ : run.manifest.seed};
    std::string csv;
    if (by_ == "template") {
      const auto rows = aggregate_by_template(results, boot);
      csv = template_report_csv(rows);
      write_json(dir / "report.json", template_report_json(rows));
      write_file_atomic(dir / "top10.md", top_templates_table(rows, run.templates));
      if (!no_charts_) {
        std::vector<FeatureAggregate> top;
        for (const auto& r : top_templates(rows)) top.push_back(r.stats);
        fs::create_directories(dir / "charts");
        write_file_atomic(dir / "charts" / "template.svg", bar_chart_svg(top, "Top templates by accuracy"));
      }
      out_ << top_templates_table(rows, run.templates);
    } else {
      const auto cmp = aggregate_by_feature(results, run.templates, feature_split(*parse_feature_axis(by_)), boot);
      csv = feature_report_csv(cmp);
      write_json(dir / "report.json", feature_report_json(by_, cmp));
      if (!no_charts_) {
        fs::create_directories(dir / "charts");
        write_file_atomic(dir / "charts" / (by_ + ".svg"), bar_chart_svg({cmp.a, cmp.b}, "Accuracy by " + by_));
      }
    }
    write_file_atomic(dir / "report.csv", csv);
    out_ << csv;
  }

  // -- numeric ---------------------------------------------------------------
  void build_numeric(CLI::App& app) {
    auto* n = app.add_subcommand("numeric", "Numeric-certainty experiments");
    n->require_subcommand(1);
    auto* run = n->add_subcommand("run", "Query every item x numeric template x grid value");
    add_dataset_options(run, data_);
    add_backend_options(run, backend_);
    add_param_options(run, params_);
    run->add_option("--templates", templates_path_, "Numeric template TSV (default: built-in)");
    run->add_option("--only", only_, "Comma-separated template ids");
    run->add_option("--grid", grid_, "Stated percentages")->delimiter(',');
    run->add_option("--seed", seed_, "Run seed")->capture_default_str();
    run->add_option("--out", out_dir_, "Output directory")->required();
    run->callback([this] { action_ = [this] { numeric_run(); }; });

    auto* rep = n->add_subcommand("report", "Accuracy curves per template and ECE");
    rep->add_option("--run", run_dir_, "Run directory")->required()->check(CLI::ExistingDirectory);
    rep->add_flag("--no-charts", no_charts_, "Skip SVG output");
    rep->callback([this] { action_ = [this] { numeric_report_cmd(); }; });
  }

  void numeric_run() {
    const auto items = load_items(data_, seed_);
    const auto templates = load_templates(templates_path_, only_, true);
    const NumericGrid grid = grid_.empty() ? NumericGrid::standard() : NumericGrid(grid_);
    auto backend = make_backend(backend_);
    const auto run = run_numeric(items, templates, grid, *backend, params_.params(), seed_);
    persist_run(out_dir_, run, items, templates, {{"backend", backend_json(backend_)}});
    out_ << run.records.size() << " records (" << run.manifest.failures << " failed) written to " << out_dir_ << "\n";
  }

  void numeric_report_cmd() {
    const fs::path dir = run_dir_;
    const auto run = load_run(dir);
    const auto rep = numeric_report(load_scores(dir, run));
    const auto csv = numeric_report_csv(rep);
    write_file_atomic(dir / "report.csv", csv);
    write_json(dir / "report.json", numeric_report_json(rep));
    if (!no_charts_) {
      fs::create_directories(dir / "charts");
      write_file_atomic(dir / "charts" / "numeric.svg", curve_chart_svg(rep, "Accuracy by stated confidence"));
    }
    out_ << csv;
    for (const auto& c : rep.curves) out_ << "ECE " << c.template_id << " = " << fmt_num(c.ece) << "\n";
    out_ << "ECE overall = " << fmt_num(rep.overall_ece) << "\n";
  }

  // -- corpus ----------------------------------------------------------------
  void build_corpus(CLI::App& app) {
    auto* c = app.add_subcommand("corpus", "Count markers and percentages in JSONL corpora");
    c->require_subcommand(1);

    auto* count = c->add_subcommand("count", "Count expressions per section with rates");
    add_corpus_options(count, corpus_);
    count->add_option("--patterns", patterns_path_, "Expressions, one per line ('expr<TAB>group'); default: built-in hedges and boosters");
    count->add_option("--threads", threads_, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    count->add_option("--out", out_dir_, "Output directory (default: print CSV only)");
    count->callback([this] { action_ = [this] { corpus_count(); }; });

    auto* hist = c->add_subcommand("pct-hist", "Histogram of integer percentages 0..100");
    add_corpus_options(hist, corpus_);
    hist->add_flag("--css-filter", css_filter_, "Ignore numerals directly preceded by ':'");
    hist->add_option("--out", out_dir_, "Output directory (default: print CSV only)");
    hist->callback([this] { action_ = [this] { corpus_hist(); }; });

    auto* sample = c->add_subcommand("sample", "Reservoir-sample matches of one expression");
    add_corpus_options(sample, corpus_);
    sample->add_option("--pattern", pattern_, "Expression")->required();
    sample->add_option("-n,--n", sample_n_, "Sample size")->check(CLI::PositiveNumber)->capture_default_str();
    sample->add_option("--context", context_, "Characters of context on each side")->capture_default_str();
    sample->add_option("--seed", seed_, "Sampling seed")->capture_default_str();
    sample->add_option("--out", out_dir_, "Output directory (default: print JSONL only)");
    sample->callback([this] { action_ = [this] { corpus_sample(); }; });
  }

  void corpus_count() {
    const auto specs = patterns_path_.empty() ? builtin_stack_patterns() : parse_patterns(read_file(patterns_path_));
    std::vector<std::string> pats;
    for (const auto& s : specs) pats.push_back(s.expression);
    CountReport total(pats);
    for (const auto& in : input_list(corpus_.inputs)) total.merge(count_corpus_file(in, corpus_.config(), pats, threads_));
    if (total.skipped_docs) warn(std::to_string(total.skipped_docs) + " undecodable documents skipped");
    const auto csv = count_report_csv(total, specs);
    if (!out_dir_.empty()) {
      fs::create_directories(out_dir_);
      write_file_atomic(fs::path(out_dir_) / "counts.csv", csv);
      write_json(fs::path(out_dir_) / "counts.json", count_report_json(total));
    }
    out_ << csv;
  }

  void corpus_hist() {
    PctHistogram h;
    PctOptions opts{css_filter_};
    std::uint64_t skipped = 0;
    for (const auto& in : input_list(corpus_.inputs))
      for_each_corpus_doc(in, corpus_.config(), [&](const CorpusDoc& d) { add_to_histogram(h, d.text, opts); }, [&] { ++skipped; });
    if (skipped) warn(std::to_string(skipped) + " undecodable documents skipped");
    const auto csv = histogram_csv(h);
    if (!out_dir_.empty()) {
      fs::create_directories(fs::path(out_dir_) / "charts");
      write_file_atomic(fs::path(out_dir_) / "pct_histogram.csv", csv);
      write_file_atomic(fs::path(out_dir_) / "charts" / "pct_histogram.svg", histogram_svg(h, "Frequency of integer percentages"));
    }
    out_ << csv;
  }

  void corpus_sample() {
    MatchSampler sampler(pattern_, sample_n_, context_, seed_);
    for (const auto& in : input_list(corpus_.inputs))
      for_each_corpus_doc(in, corpus_.config(), [&](const CorpusDoc& d) { sampler.add(d); }, [] {});
    std::string jsonl;
    for (const auto& s : sampler.sample())
      jsonl += nlohmann::json{{"excerpt", s.excerpt}, {"section", to_string(s.section)}, {"match_index", s.match_index}}.dump() + "\n";
    if (!out_dir_.empty()) {
      fs::create_directories(out_dir_);
      write_file_atomic(fs::path(out_dir_) / "samples.jsonl", jsonl);
    }
    out_ << jsonl;
    err_ << sampler.sample().size() << " of " << sampler.matches_seen() << " matches sampled\n";
  }

  // -- teach -----------------------------------------------------------------
  void add_teach_config_options(CLI::App* cmd) {
    cmd->add_option("--direction", direction_, "Which side of the threshold gets the marker")
        ->check(CLI::IsMember({"certainty", "uncertainty"}));
    cmd->add_option("--threshold", threshold_, "Confidence threshold in (0,1)")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--placement", placement_, "Marker placement")->check(CLI::IsMember({"prefix", "suffix"}));
    cmd->add_option("--ordering", ordering_, "Example ordering")->check(CLI::IsMember({"ascending", "descending", "random"}));
    cmd->add_option("--marker", marker_, "Marker pair id");
  }

  TeachConfig teach_config(const nlohmann::json& base) const {
    auto j = base;
    if (direction_) j["direction"] = *direction_;
    if (threshold_) j["threshold"] = *threshold_;
    if (placement_) j["placement"] = *placement_;
    if (ordering_) j["ordering"] = *ordering_;
    if (marker_) j["marker"] = *marker_;
    if (!j.contains("seed")) j["seed"] = seed_;
    return teach_config_from_json(j);
  }

  void build_teach(CLI::App& app) {
    auto* t = app.add_subcommand("teach", "Few-shot sets that teach confidence-conditioned markers");
    t->require_subcommand(1);

    auto* b = t->add_subcommand("build", "Build a decile-balanced few-shot pool from a scored run");
    b->add_option("--run", run_dir_, "Scored run directory")->required()->check(CLI::ExistingDirectory);
    b->add_option("--template", pool_template_, "Template whose results supply probabilities")->capture_default_str();
    b->add_option("--total", pool_total_, "Examples in the pool")->check(CLI::PositiveNumber)->capture_default_str();
    b->add_option("--buckets", pool_buckets_, "Probability buckets")->check(CLI::PositiveNumber)->capture_default_str();
    b->add_option("--seed", seed_, "Selection seed")->capture_default_str();
    b->add_option("--out", out_dir_, "Output directory")->required();
    add_teach_config_options(b);
    b->callback([this] { action_ = [this] { teach_build(); }; });

    auto* r = t->add_subcommand("run", "Prompt the backend with the few-shot pool");
    r->add_option("--pool", pool_dir_, "Directory written by 'teach build'")->required()->check(CLI::ExistingDirectory);
    add_dataset_options(r, data_);
    add_backend_options(r, backend_);
    add_param_options(r, params_);
    r->add_option("--seed", seed_, "Run seed")->capture_default_str();
    r->add_option("--out", out_dir_, "Output directory")->required();
    add_teach_config_options(r);
    r->callback([this] { action_ = [this] { teach_run(); }; });

    auto* ev = t->add_subcommand("evaluate", "Emission F1 and conditional accuracy/entropy");
    ev->add_option("--run", run_dir_, "Directory written by 'teach run'")->required()->check(CLI::ExistingDirectory);
    add_teach_config_options(ev);
    ev->callback([this] { action_ = [this] { teach_evaluate(); }; });
  }

  void teach_build() {
    const fs::path dir = run_dir_;
    const auto run = load_run(dir);
    const auto cfg = teach_config(nlohmann::json::object());
    const auto candidates = fewshot_candidates(load_scores(dir, run), run.items, pool_template_);
    const auto pool = attach_markers(build_fewshot_pool(candidates, pool_buckets_, pool_total_, seed_), cfg);
    fs::create_directories(out_dir_);
    std::string jsonl;
    std::size_t marked = 0;
    for (const auto& e : pool) {
      jsonl += to_json(e).dump() + "\n";
      marked += e.marker_attached;
    }
    write_file_atomic(fs::path(out_dir_) / "fewshot.jsonl", jsonl);
    write_json(fs::path(out_dir_) / "teach_config.json", to_json(cfg));
    out_ << pool.size() << " examples, " << marked << " with marker '" << cfg.marker.form(cfg.placement) << "'\n";
  }

  void teach_run() {
    const fs::path pool_dir = pool_dir_;
    const auto cfg = teach_config(read_json(pool_dir / "teach_config.json"));
    std::vector<FewShotExample> pool;
    for (const auto& line : split(read_file(pool_dir / "fewshot.jsonl"), '\n'))
      if (!trim(line).empty()) pool.push_back(fewshot_from_json(nlohmann::json::parse(line)));
    // re-apply the rule so flag overrides of threshold/placement take effect
    pool = attach_markers(pool, cfg);
    std::set<std::string> in_pool;
    for (const auto& e : pool) in_pool.insert(e.item_id);
    std::vector<QAItem> queries;
    for (auto& it : load_items(data_, seed_))
      if (!in_pool.count(it.id)) queries.push_back(std::move(it));
    if (queries.empty()) throw ValidationError("no query items outside the few-shot pool");

    auto backend = make_backend(backend_);
    const auto params = params_.params();
    std::vector<ProbeRecord> records(queries.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < queries.size(); i = next.fetch_add(1)) {
        auto& rec = records[i];
        rec.item_id = queries[i].id;
        rec.template_id = "teach-" + cfg.marker.id;
        rec.prompt = render_fewshot_prompt(pool, cfg, queries[i]);
        rec.model_id = backend->model_id();
        CompletionRequest req;
        req.prompt = rec.prompt;
        req.max_tokens = params.max_tokens;
        req.temperature = params.temperature;
        req.top_k_alternatives = params.top_k;
        req.model_id = rec.model_id;
        req.seed = detail::record_seed(seed_, rec.item_id, rec.template_id);
        req.tag = ProbeTag{rec.item_id, rec.template_id, {}};
        try {
          rec.completion = backend->complete(req);
          rec.timestamp = rec.completion->created;
        } catch (const std::exception& e) {
          rec.error = e.what();
        }
      }
    };
    std::vector<std::thread> pool_threads;
    const auto n = std::max<std::size_t>(1, std::min(backend->max_concurrency(), queries.size()));
    for (std::size_t t = 1; t < n; ++t) pool_threads.emplace_back(worker);
    worker();
    for (auto& th : pool_threads) th.join();

    std::string emissions;
    std::size_t failures = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!records[i].completion) {
        ++failures;
        continue;
      }
      emissions += to_json(emission_record(queries[i].id, *records[i].completion, queries[i].gold_aliases, cfg)).dump() + "\n";
    }
    fs::create_directories(out_dir_);
    write_file_atomic(fs::path(out_dir_) / "records.jsonl", records_to_jsonl(records));
    write_file_atomic(fs::path(out_dir_) / "emissions.jsonl", emissions);
    write_json(fs::path(out_dir_) / "teach_config.json", to_json(cfg));
    write_json(fs::path(out_dir_) / "manifest.json", {{"kind", "teach"},
                                                      {"backend", backend_json(backend_)},
                                                      {"seed", seed_},
                                                      {"records", records.size()},
                                                      {"failures", failures},
                                                      {"pool_size", pool.size()},
                                                      {"tool_version", kToolVersion}});
    out_ << records.size() << " queries (" << failures << " failed) written to " << out_dir_ << "\n";
  }

  void teach_evaluate() {
    const fs::path dir = run_dir_;
    const auto cfg = teach_config(read_json(dir / "teach_config.json"));
    std::vector<EmissionRecord> recs;
    for (const auto& line : split(read_file(dir / "emissions.jsonl"), '\n'))
      if (!trim(line).empty()) recs.push_back(emission_record_from_json(nlohmann::json::parse(line)));
    auto j = to_json(evaluate_emission(recs, cfg));
    j["config"] = to_json(cfg);
    write_json(dir / "teach_report.json", j);
    out_ << j.dump(2) << "\n";
  }

  // -- cache -----------------------------------------------------------------
  void build_cache(CLI::App& app) {
    auto* c = app.add_subcommand("cache", "Completion cache maintenance");
    c->require_subcommand(1);
    auto* stats = c->add_subcommand("stats", "Entry count and size");
    stats->add_option("--cache-dir", cache_dir_, "Cache directory")->required();
    stats->callback([this] {
      action_ = [this] {
        const auto s = cache_dir_stats(cache_dir_);
        out_ << s.entries << " entries, " << s.bytes << " bytes\n";
      };
    });
    auto* clear = c->add_subcommand("clear", "Delete every entry");
    clear->add_option("--cache-dir", cache_dir_, "Cache directory")->required();
    clear->callback([this] { action_ = [this] { out_ << clear_cache_dir(cache_dir_) << " entries removed\n"; }; });
  }

  // -- mock ------------------------------------------------------------------
  void build_mock(CLI::App& app) {
    auto* m = app.add_subcommand("mock", "Offline mock model utilities");
    m->require_subcommand(1);
    auto* synth = m->add_subcommand("synth", "Write a synthetic benchmark and matching MockModelSpec");
    synth->add_option("-n,--n", synth_n_, "Items")->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--seed", seed_, "Seed")->capture_default_str();
    synth->add_option("--factive", factive_factor_, "Gold-probability factor for factive templates")->capture_default_str();
    synth->add_option("--evidential", evidential_factor_, "Gold-probability factor for evidential templates")->capture_default_str();
    synth->add_option("--out", out_dir_, "Output directory")->required();
    synth->callback([this] {
      action_ = [this] {
        const auto b = make_synthetic_benchmark(synth_n_, seed_, {{"factive", "true", factive_factor_}, {"evidential", "true", evidential_factor_}});
        fs::create_directories(out_dir_);
        write_json(fs::path(out_dir_) / "mock_spec.json", to_json(b.spec));
        write_file_atomic(fs::path(out_dir_) / "synthetic_qa.jsonl", items_to_jsonl(b.items));
        out_ << b.items.size() << " items written to " << out_dir_ << "\n";
      };
    });
  }

  std::ostream& out_;
  std::ostream& err_;
  std::function<void()> action_;

  BackendOptions backend_;
  DatasetOptions data_;
  ParamOptions params_;
  CorpusOptions corpus_;
  std::string templates_path_, only_, out_dir_, run_dir_, by_ = "strength", cache_dir_, patterns_path_, pattern_;
  std::string pool_dir_, pool_template_{kStandardId};
  bool numeric_ = false, negation_guard_ = false, no_charts_ = false, css_filter_ = false;
  std::uint64_t seed_ = 0;
  std::optional<std::uint64_t> report_seed_;
  std::size_t resamples_ = kDefaultBootstrapResamples, threads_ = 1, sample_n_ = 100, context_ = 200;
  std::size_t pool_total_ = 48, pool_buckets_ = 10, synth_n_ = 100;
  std::vector<int> grid_;
  std::optional<std::string> direction_, placement_, ordering_, marker_;
  std::optional<double> threshold_;
  double factive_factor_ = 0.5, evidential_factor_ = 1.3;
};

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return Cli(out, err).run(argc, argv);
}

}  // namespace epiprobe::cli

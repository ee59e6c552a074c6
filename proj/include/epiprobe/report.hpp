#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"
#include "scoring.hpp"
#include "stats.hpp"
#include "typology.hpp"

namespace epiprobe {

inline std::string fmt_num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  return "\"" + replace_all(std::string(s), "\"", "\"\"") + "\"";
}

inline void require_results(const std::vector<ScoredResult>& results) {
  if (results.empty()) throw PreconditionError("nothing to report");
}

namespace detail {

inline nlohmann::json opt_json(const std::optional<double>& o) { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); }

inline nlohmann::json aggregate_json(const FeatureAggregate& a) {
  return {{"group", a.label},
          {"n", a.n},
          {"accuracy", a.accuracy},
          {"ci_low", a.ci_low},
          {"ci_high", a.ci_high},
          {"mean_prob_on_gold_all", opt_json(a.mean_prob_on_gold)},
          {"mean_prob_on_gold_correct", opt_json(a.mean_prob_on_gold_correct)},
          {"mean_alt_entropy", opt_json(a.mean_alt_entropy)}};
}

inline std::string aggregate_row(const FeatureAggregate& a, const std::optional<double>& p) {
  return csv_field(a.label) + "," + std::to_string(a.n) + "," + fmt_num(a.accuracy) + "," + fmt_num(a.ci_low) + "," + fmt_num(a.ci_high) +
         "," + (p ? fmt_num(*p) : "") + "\n";
}

}  // namespace detail

inline constexpr std::string_view kAggregateCsvHeader = "group,n,accuracy,ci_low,ci_high,p_value\n";

// ---------------------------------------------------------------------------
// Feature comparison

inline std::string feature_report_csv(const GroupComparison& c) {
  return std::string(kAggregateCsvHeader) + detail::aggregate_row(c.a, c.p_value) + detail::aggregate_row(c.b, c.p_value);
}

inline nlohmann::json feature_report_json(const std::string& axis, const GroupComparison& c) {
  return {{"by", axis},
          {"groups", {detail::aggregate_json(c.a), detail::aggregate_json(c.b)}},
          {"t", c.t},
          {"p_value", c.p_value},
          {"accuracy_diff", c.diff},
          {"accuracy_diff_ci", {c.diff_ci.low, c.diff_ci.high}}};
}

// ---------------------------------------------------------------------------
// Per-template report

inline std::string template_report_csv(const std::vector<TemplateAggregate>& rows) {
  std::string out(kAggregateCsvHeader);
  for (const auto& r : rows) out += detail::aggregate_row(r.stats, r.p_vs_standard);
  return out;
}

inline nlohmann::json template_report_json(const std::vector<TemplateAggregate>& rows, std::size_t top_k = 10) {
  nlohmann::json all = nlohmann::json::array(), top = nlohmann::json::array();
  auto row = [](const TemplateAggregate& r) {
    auto j = detail::aggregate_json(r.stats);
    j["p_vs_standard"] = detail::opt_json(r.p_vs_standard);
    return j;
  };
  for (const auto& r : rows) all.push_back(row(r));
  for (const auto& r : top_templates(rows, top_k)) top.push_back(row(r));
  return {{"by", "template"}, {"templates", all}, {"top", top}};
}

// Markdown table of the k most accurate templates.
inline std::string top_templates_table(const std::vector<TemplateAggregate>& rows, const std::vector<MarkerTemplate>& registry,
                                       std::size_t k = 10) {
  std::map<std::string, std::string> surface;
  for (const auto& t : registry) surface[t.id] = t.surface;
  std::string out = "| rank | template | surface | n | accuracy | 95% CI |\n|---|---|---|---|---|---|\n";
  std::size_t rank = 0;
  for (const auto& r : top_templates(rows, k)) {
    const auto& id = r.stats.label;
    const auto s = id == kStandardId ? std::string("(standard)") : surface.count(id) ? surface[id] : std::string();
    char acc[64];
    std::snprintf(acc, sizeof acc, "%.3f | [%.3f, %.3f]", r.stats.accuracy, r.stats.ci_low, r.stats.ci_high);
    out += "| " + std::to_string(++rank) + " | " + id + " | " + s + " | " + std::to_string(r.stats.n) + " | " + acc + " |\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Numeric runs: per-template accuracy curves over the stated percentages.

struct CurvePoint {
  int pct = 0;
  std::size_t n = 0;
  double accuracy = 0.0;
};

struct NumericCurve {
  std::string template_id;  // base template, without the "-<pct>" suffix
  std::vector<CurvePoint> points;
  double ece = 0.0;
};

struct NumericReport {
  std::vector<NumericCurve> curves;
  std::vector<CalibrationBin> overall_bins;
  double overall_ece = 0.0;
};

inline std::string base_template_id(const ScoredResult& r) {
  if (!r.stated_pct) return r.template_id;
  const auto suffix = "-" + std::to_string(*r.stated_pct);
  const auto& id = r.template_id;
  if (id.size() > suffix.size() && id.compare(id.size() - suffix.size(), suffix.size(), suffix) == 0) return id.substr(0, id.size() - suffix.size());
  return id;
}

inline NumericReport numeric_report(const std::vector<ScoredResult>& results) {
  require_results(results);
  std::map<std::string, std::vector<ScoredResult>> by_base;
  for (const auto& r : results) {
    if (!r.stated_pct) throw PreconditionError("numeric report: result for '" + r.template_id + "' has no stated percentage");
    by_base[base_template_id(r)].push_back(r);
  }
  NumericReport rep;
  for (const auto& [id, rs] : by_base) {
    NumericCurve c;
    c.template_id = id;
    for (const auto& b : calibration_bins(rs)) c.points.push_back({b.stated_pct, b.n, b.accuracy});
    c.ece = ece(rs);
    rep.curves.push_back(std::move(c));
  }
  rep.overall_bins = calibration_bins(results);
  rep.overall_ece = ece(results);
  return rep;
}

inline std::string numeric_report_csv(const NumericReport& rep) {
  std::string out = "template,pct,n,accuracy\n";
  for (const auto& c : rep.curves)
    for (const auto& p : c.points) out += csv_field(c.template_id) + "," + std::to_string(p.pct) + "," + std::to_string(p.n) + "," + fmt_num(p.accuracy) + "\n";
  return out;
}

inline nlohmann::json numeric_report_json(const NumericReport& rep) {
  nlohmann::json curves = nlohmann::json::array();
  for (const auto& c : rep.curves) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : c.points) pts.push_back({{"pct", p.pct}, {"n", p.n}, {"accuracy", p.accuracy}});
    curves.push_back({{"template", c.template_id}, {"points", pts}, {"ece", c.ece}});
  }
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : rep.overall_bins) bins.push_back({{"pct", b.stated_pct}, {"n", b.n}, {"accuracy", b.accuracy}});
  return {{"curves", curves}, {"overall", {{"bins", bins}, {"ece", rep.overall_ece}}}};
}

// ---------------------------------------------------------------------------
// Corpus outputs

inline std::string count_report_csv(const CountReport& report, const std::vector<PatternSpec>& specs) {
  const auto sections = populated_sections(report);
  std::string out = "expression,group,section,instances,docs_with_match,per_thousand_posts,per_million_words\n";
  if (sections.empty()) return out;
  const auto rates = normalize_rates(report, sections);
  std::size_t i = 0;
  for (std::size_t p = 0; p < report.patterns.size(); ++p)
    for (auto s : sections) {
      const auto& r = rates[i++];
      out += csv_field(report.patterns[p]) + "," + csv_field(p < specs.size() ? specs[p].group : "") + "," + std::string(to_string(s)) + "," +
             std::to_string(r.instances) + "," + std::to_string(report.at(p, s).docs_with_match) + "," + fmt_num(r.per_thousand_posts) +
             "," + fmt_num(r.per_million_words) + "\n";
    }
  for (const auto& g : group_totals(report, specs)) {
    if (g.group.empty()) continue;
    for (auto s : sections) {
      const auto si = static_cast<std::size_t>(s);
      out += "TOTAL," + csv_field(g.group) + "," + std::string(to_string(s)) + "," + std::to_string(g.instances[si]) + ",," +
             fmt_num(per_thousand(g.instances[si], report.total_posts[si])) + "," + fmt_num(per_million(g.instances[si], report.total_words[si])) + "\n";
    }
  }
  return out;
}

inline nlohmann::json count_report_json(const CountReport& report) {
  nlohmann::json pats = nlohmann::json::array();
  for (std::size_t p = 0; p < report.patterns.size(); ++p) {
    nlohmann::json per;
    for (auto s : {Section::Question, Section::Answer, Section::Other})
      per[std::string(to_string(s))] = {{"instances", report.at(p, s).instances}, {"docs_with_match", report.at(p, s).docs_with_match}};
    pats.push_back({{"pattern", report.patterns[p]}, {"sections", per}});
  }
  nlohmann::json totals;
  for (auto s : {Section::Question, Section::Answer, Section::Other}) {
    const auto i = static_cast<std::size_t>(s);
    totals[std::string(to_string(s))] = {{"posts", report.total_posts[i]}, {"words", report.total_words[i]}};
  }
  return {{"patterns", pats}, {"totals", totals}, {"skipped_docs", report.skipped_docs}};
}

inline std::string histogram_csv(const PctHistogram& h) {
  std::string out = "value,count\n";
  for (std::size_t v = 0; v < h.bins.size(); ++v) out += std::to_string(v) + "," + std::to_string(h.bins[v]) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// SVG charts (deliberately plain)

namespace svg {

inline std::string esc(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

inline std::string open(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) + "\" viewBox=\"0 0 " + num(w) + " " + num(h) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

inline std::string text(double x, double y, std::string_view s, std::string_view anchor = "middle") {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + std::string(anchor) + "\">" + esc(s) + "</text>\n";
}

inline std::string line(double x1, double y1, double x2, double y2, std::string_view stroke = "black", double width = 1) {
  return "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) + "\" stroke=\"" + std::string(stroke) +
         "\" stroke-width=\"" + num(width) + "\"/>\n";
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};
  return colors[i % 8];
}

}  // namespace svg

// Bars with bootstrap CI whiskers, y axis fixed to [0,1].
inline std::string bar_chart_svg(const std::vector<FeatureAggregate>& groups, std::string_view title) {
  const double w = 120.0 + 90.0 * static_cast<double>(groups.size()), h = 320, top = 40, bottom = 270, left = 50;
  auto y = [&](double v) { return bottom - v * (bottom - top); };
  std::string out = svg::open(w, h) + svg::text(w / 2, 20, title);
  out += svg::line(left, top, left, bottom) + svg::line(left, bottom, w - 20, bottom);
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) out += svg::text(left - 6, y(t) + 4, svg::num(t), "end");
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    const double x = left + 30 + 90.0 * static_cast<double>(i);
    out += "<rect x=\"" + svg::num(x) + "\" y=\"" + svg::num(y(g.accuracy)) + "\" width=\"50\" height=\"" + svg::num(bottom - y(g.accuracy)) +
           "\" fill=\"" + svg::palette(i) + "\"/>\n";
    out += svg::line(x + 25, y(g.ci_low), x + 25, y(g.ci_high), "black", 1.5);
    out += svg::line(x + 18, y(g.ci_low), x + 32, y(g.ci_low)) + svg::line(x + 18, y(g.ci_high), x + 32, y(g.ci_high));
    out += svg::text(x + 25, bottom + 16, g.label) + svg::text(x + 25, bottom + 30, "n=" + std::to_string(g.n));
  }
  return out + "</svg>\n";
}

// One accuracy line per template across the stated percentages, with the
// diagonal of perfect calibration.
inline std::string curve_chart_svg(const NumericReport& rep, std::string_view title) {
  const double w = 640, h = 400, left = 50, right = 440, top = 40, bottom = 350;
  auto x = [&](double pct) { return left + pct / 100.0 * (right - left); };
  auto y = [&](double v) { return bottom - v * (bottom - top); };
  std::string out = svg::open(w, h) + svg::text(w / 2, 20, title);
  out += svg::line(left, top, left, bottom) + svg::line(left, bottom, right, bottom);
  out += svg::line(x(0), y(0), x(100), y(1), "#bbbbbb");
  for (int t = 0; t <= 100; t += 25) {
    out += svg::text(x(t), bottom + 14, std::to_string(t) + "%");
    out += svg::text(left - 6, y(t / 100.0) + 4, svg::num(t / 100.0), "end");
  }
  for (std::size_t i = 0; i < rep.curves.size(); ++i) {
    const auto& c = rep.curves[i];
    std::string pts;
    for (const auto& p : c.points) pts += svg::num(x(p.pct)) + "," + svg::num(y(p.accuracy)) + " ";
    out += "<polyline fill=\"none\" stroke=\"" + std::string(svg::palette(i)) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    out += "<rect x=\"455\" y=\"" + svg::num(top + 16.0 * static_cast<double>(i)) + "\" width=\"10\" height=\"10\" fill=\"" + svg::palette(i) + "\"/>\n";
    out += svg::text(470, top + 9 + 16.0 * static_cast<double>(i), c.template_id, "start");
  }
  return out + "</svg>\n";
}

inline std::string histogram_svg(const PctHistogram& hist, std::string_view title) {
  const double w = 660, h = 320, left = 60, top = 40, bottom = 280, bw = 5;
  std::uint64_t peak = 1;
  for (auto b : hist.bins) peak = std::max(peak, b);
  std::string out = svg::open(w, h) + svg::text(w / 2, 20, title);
  out += svg::line(left, top, left, bottom) + svg::line(left, bottom, left + 101 * bw + 5, bottom);
  out += svg::text(left - 6, top + 4, std::to_string(peak), "end") + svg::text(left - 6, bottom, "0", "end");
  for (std::size_t v = 0; v < hist.bins.size(); ++v) {
    const double bh = static_cast<double>(hist.bins[v]) / static_cast<double>(peak) * (bottom - top);
    if (bh > 0)
      out += "<rect x=\"" + svg::num(left + bw * static_cast<double>(v)) + "\" y=\"" + svg::num(bottom - bh) + "\" width=\"" + svg::num(bw - 1) +
             "\" height=\"" + svg::num(bh) + "\" fill=\"#4c72b0\"/>\n";
    if (v % 10 == 0) out += svg::text(left + bw * static_cast<double>(v) + 2, bottom + 14, std::to_string(v));
  }
  return out + "</svg>\n";
}

}  // namespace epiprobe

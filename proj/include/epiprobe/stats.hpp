#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "error.hpp"
#include "scoring.hpp"
#include "typology.hpp"
#include "util.hpp"

namespace epiprobe {

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw PreconditionError("mean of empty list");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Linear-interpolated quantile of sorted data (Hyndman-Fan type 7).
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw PreconditionError("quantile of empty list");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

inline constexpr std::size_t kDefaultBootstrapResamples = 10000;

// Percentile bootstrap interval of the mean. Each resample draws n indices
// with uniform_index from one seeded stream.
inline Interval bootstrap_ci(const std::vector<double>& values, std::size_t n_resamples = kDefaultBootstrapResamples,
                             double level = 0.95, std::uint64_t seed = 0) {
  if (values.empty()) throw PreconditionError("bootstrap_ci: no values");
  if (n_resamples < 1000) throw PreconditionError("bootstrap_ci: need at least 1000 resamples");
  if (!(level > 0.0 && level < 1.0)) throw PreconditionError("bootstrap_ci: level must be in (0,1)");
  auto rng = make_rng(seed);
  const auto n = values.size();
  std::vector<double> means(n_resamples);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += values[uniform_index(rng, n)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double alpha = (1.0 - level) / 2.0;
  return {sorted_quantile(means, alpha), sorted_quantile(means, 1.0 - alpha)};
}

// Percentile bootstrap interval of mean(a) - mean(b), resampling each group independently.
inline Interval bootstrap_diff_ci(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t n_resamples = kDefaultBootstrapResamples, double level = 0.95,
                                  std::uint64_t seed = 0) {
  if (a.empty() || b.empty()) throw PreconditionError("bootstrap_diff_ci: empty group");
  if (n_resamples < 1000) throw PreconditionError("bootstrap_diff_ci: need at least 1000 resamples");
  auto rng = make_rng(seed);
  std::vector<double> diffs(n_resamples);
  for (auto& d : diffs) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sa += a[uniform_index(rng, a.size())];
    for (std::size_t i = 0; i < b.size(); ++i) sb += b[uniform_index(rng, b.size())];
    d = sa / static_cast<double>(a.size()) - sb / static_cast<double>(b.size());
  }
  std::sort(diffs.begin(), diffs.end());
  const double alpha = (1.0 - level) / 2.0;
  return {sorted_quantile(diffs, alpha), sorted_quantile(diffs, 1.0 - alpha)};
}

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

// Two-sided Welch unequal-variance t-test.
inline TTestResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw PreconditionError("welch_t_test: each sample needs at least 2 values");
  auto var = [](const std::vector<double>& v, double m) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
  };
  const double ma = mean_of(a), mb = mean_of(b);
  const double va = var(a, ma) / static_cast<double>(a.size());
  const double vb = var(b, mb) / static_cast<double>(b.size());
  const double se2 = va + vb;
  TTestResult r;
  if (se2 == 0.0) {
    // both samples constant
    r.t = ma == mb ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
    r.df = static_cast<double>(a.size() + b.size() - 2);
    r.p = ma == mb ? 1.0 : 0.0;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 / (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw PreconditionError("pearson: length mismatch");
  if (x.size() < 2) throw PreconditionError("pearson: need at least 2 points");
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw PreconditionError("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Calibration against injected confidences

struct CalibrationBin {
  int stated_pct = 0;
  std::size_t n = 0;
  double accuracy = 0.0;
};

inline std::vector<CalibrationBin> calibration_bins(const std::vector<ScoredResult>& results) {
  std::map<int, std::pair<std::size_t, std::size_t>> bins;  // pct -> (n, correct)
  for (const auto& r : results) {
    if (!r.stated_pct) throw PreconditionError("ece: result for '" + r.template_id + "' has no stated percentage");
    auto& b = bins[*r.stated_pct];
    ++b.first;
    b.second += r.correct ? 1 : 0;
  }
  std::vector<CalibrationBin> out;
  for (const auto& [pct, nc] : bins)
    out.push_back({pct, nc.first, static_cast<double>(nc.second) / static_cast<double>(nc.first)});
  return out;
}

// Bins are the distinct stated percentages; ECE = sum_b (n_b/N) |acc_b - pct_b/100|.
inline double ece(const std::vector<ScoredResult>& results) {
  if (results.empty()) throw PreconditionError("ece: no results");
  double total = 0.0;
  for (const auto& b : calibration_bins(results))
    total += static_cast<double>(b.n) * std::abs(b.accuracy - b.stated_pct / 100.0);
  return total / static_cast<double>(results.size());
}

// ---------------------------------------------------------------------------
// Group aggregation

struct FeatureAggregate {
  std::string label;
  std::size_t n = 0;
  double accuracy = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::optional<double> mean_prob_on_gold;          // over all results carrying a score
  std::optional<double> mean_prob_on_gold_correct;  // over correct results only
  std::optional<double> mean_alt_entropy;
};

struct GroupComparison {
  FeatureAggregate a;
  FeatureAggregate b;
  double t = 0.0;
  double p_value = 1.0;
  double diff = 0.0;  // accuracy(a) - accuracy(b)
  Interval diff_ci;
};

struct BootstrapOptions {
  std::size_t n_resamples = kDefaultBootstrapResamples;
  double level = 0.95;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<double> correctness(const std::vector<const ScoredResult*>& rs) {
  std::vector<double> v;
  v.reserve(rs.size());
  for (const auto* r : rs) v.push_back(r->correct ? 1.0 : 0.0);
  return v;
}

template <typename Get>
std::optional<double> optional_mean(const std::vector<const ScoredResult*>& rs, Get get) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto* r : rs)
    if (auto v = get(*r)) {
      s += *v;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

}  // namespace detail

inline FeatureAggregate aggregate_group(std::string label, const std::vector<const ScoredResult*>& group, const BootstrapOptions& boot) {
  if (group.empty()) throw PreconditionError("aggregate: group '" + label + "' is empty");
  FeatureAggregate agg;
  agg.label = std::move(label);
  agg.n = group.size();
  const auto v = detail::correctness(group);
  std::size_t correct = 0;
  for (const auto* r : group) correct += r->correct ? 1 : 0;
  agg.accuracy = static_cast<double>(correct) / static_cast<double>(group.size());
  const auto ci = bootstrap_ci(v, boot.n_resamples, boot.level, boot.seed);
  // a percentile interval can miss the point estimate on tiny skewed samples
  agg.ci_low = std::min(ci.low, agg.accuracy);
  agg.ci_high = std::max(ci.high, agg.accuracy);
  agg.mean_prob_on_gold = detail::optional_mean(group, [](const ScoredResult& r) { return r.prob_on_gold; });
  agg.mean_prob_on_gold_correct = detail::optional_mean(
      group, [](const ScoredResult& r) { return r.correct ? r.prob_on_gold : std::optional<double>{}; });
  agg.mean_alt_entropy = detail::optional_mean(group, [](const ScoredResult& r) { return r.alt_entropy; });
  return agg;
}

inline GroupComparison compare_groups(const std::string& label_a, const std::vector<const ScoredResult*>& a,
                                      const std::string& label_b, const std::vector<const ScoredResult*>& b,
                                      const BootstrapOptions& boot) {
  GroupComparison c;
  c.a = aggregate_group(label_a, a, {boot.n_resamples, boot.level, splitmix64(boot.seed ^ 0xA)});
  c.b = aggregate_group(label_b, b, {boot.n_resamples, boot.level, splitmix64(boot.seed ^ 0xB)});
  const auto va = detail::correctness(a), vb = detail::correctness(b);
  if (va.size() >= 2 && vb.size() >= 2) {
    const auto t = welch_t_test(va, vb);
    c.t = t.t;
    c.p_value = t.p;
  }
  c.diff = c.a.accuracy - c.b.accuracy;
  c.diff_ci = bootstrap_diff_ci(va, vb, boot.n_resamples, boot.level, splitmix64(boot.seed ^ 0xD));
  return c;
}

// Splits results by a binary feature of their template; results whose template
// is unknown (e.g. the standard method) or outside both groups are ignored.
inline GroupComparison aggregate_by_feature(const std::vector<ScoredResult>& results, const std::vector<MarkerTemplate>& templates,
                                            const FeatureSplit& split, const BootstrapOptions& boot = {}) {
  std::unordered_map<std::string, const MarkerTemplate*> by_id;
  for (const auto& t : templates) by_id.emplace(t.id, &t);
  std::vector<const ScoredResult*> ga, gb;
  for (const auto& r : results) {
    auto it = by_id.find(r.template_id);
    if (it == by_id.end() || it->second->is_standard()) continue;
    const auto side = split.classify(it->second->features);
    if (!side) continue;
    (*side == 0 ? ga : gb).push_back(&r);
  }
  if (ga.empty() || gb.empty())
    throw PreconditionError("aggregate_by_feature: group '" + (ga.empty() ? split.label_a : split.label_b) + "' is empty");
  return compare_groups(split.label_a, ga, split.label_b, gb, boot);
}

struct TemplateAggregate {
  FeatureAggregate stats;  // label = template id
  std::optional<double> p_vs_standard;
};

// Per-template accuracy with CIs and a Welch test against the standard method when present.
inline std::vector<TemplateAggregate> aggregate_by_template(const std::vector<ScoredResult>& results, const BootstrapOptions& boot = {}) {
  std::map<std::string, std::vector<const ScoredResult*>> groups;
  for (const auto& r : results) groups[r.template_id].push_back(&r);
  std::optional<std::vector<double>> standard;
  if (auto it = groups.find(std::string(kStandardId)); it != groups.end()) standard = detail::correctness(it->second);
  std::vector<TemplateAggregate> out;
  for (const auto& [id, group] : groups) {
    TemplateAggregate ta;
    ta.stats = aggregate_group(id, group, {boot.n_resamples, boot.level, splitmix64(boot.seed ^ fnv1a64(id))});
    if (standard && id != kStandardId && group.size() >= 2 && standard->size() >= 2)
      ta.p_vs_standard = welch_t_test(detail::correctness(group), *standard).p;
    out.push_back(std::move(ta));
  }
  return out;
}

// Highest accuracy first; ties broken by template id.
inline std::vector<TemplateAggregate> top_templates(std::vector<TemplateAggregate> all, std::size_t k = 10) {
  std::sort(all.begin(), all.end(), [](const TemplateAggregate& x, const TemplateAggregate& y) {
    if (x.stats.accuracy != y.stats.accuracy) return x.stats.accuracy > y.stats.accuracy;
    return x.stats.label < y.stats.label;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

// ---------------------------------------------------------------------------
// Published per-group accuracies (six models, averaged over the four datasets)

struct PublishedGroupAccuracy {
  std::string group;  // Boosters, Hedges, Factive, Non-factive, Evidential, Non-evidential
  std::string model;
  double accuracy;
  int significance_stars;  // 0..3 for p < .05 / .01 / .001 against the paired group
};

inline const std::vector<PublishedGroupAccuracy>& published_group_accuracies() {
  static const std::vector<PublishedGroupAccuracy> rows = [] {
    const std::array<const char*, 6> models{"ada", "babbage", "curie", "davinci", "instruct", "gpt-4"};
    struct Row {
      const char* group;
      std::array<double, 6> acc;
      std::array<int, 6> stars;
    };
    const Row table[] = {
        {"Boosters", {0.091, 0.257, 0.313, 0.392, 0.589, 0.793}, {0, 0, 0, 0, 0, 0}},
        {"Hedges", {0.079, 0.272, 0.333, 0.468, 0.642, 0.822}, {0, 0, 3, 3, 3, 3}},
        {"Factive", {0.078, 0.237, 0.293, 0.347, 0.555, 0.771}, {0, 0, 0, 0, 0, 0}},
        {"Non-factive", {0.085, 0.276, 0.336, 0.468, 0.641, 0.821}, {1, 3, 3, 3, 3, 3}},
        {"Evidential", {0.087, 0.281, 0.347, 0.449, 0.640, 0.820}, {2, 3, 3, 1, 3, 3}},
        {"Non-evidential", {0.080, 0.250, 0.301, 0.433, 0.601, 0.799}, {0, 0, 0, 0, 0, 0}},
    };
    std::vector<PublishedGroupAccuracy> out;
    for (const auto& r : table)
      for (std::size_t m = 0; m < models.size(); ++m) out.push_back({r.group, models[m], r.acc[m], r.stars[m]});
    return out;
  }();
  return rows;
}

inline double published_accuracy(std::string_view group, std::string_view model) {
  for (const auto& r : published_group_accuracies())
    if (r.group == group && r.model == model) return r.accuracy;
  throw PreconditionError("no published accuracy for " + std::string(group) + "/" + std::string(model));
}

}  // namespace epiprobe

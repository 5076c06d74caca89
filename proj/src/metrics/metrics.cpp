#include "tripcast/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "tripcast/core/error.hpp"

namespace tripcast {

const std::array<double, kQuantileLevels>& quantile_levels() noexcept {
  static const auto levels = [] {
    std::array<double, kQuantileLevels> l{};
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = 0.05 * double(i + 1);
    return l;
  }();
  return levels;
}

double empirical_quantile(std::span<const double> sorted, double level) {
  if (sorted.empty()) throw DataError("quantile of an empty sample");
  if (!(level >= 0.0 && level <= 1.0)) throw DataError("quantile level outside [0, 1]");
  const double pos = level * double(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - double(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

QuantileSummary summarize(std::span<const double> samples) {
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  QuantileSummary out;
  const auto& levels = quantile_levels();
  for (std::size_t i = 0; i < levels.size(); ++i) out.q[i] = empirical_quantile(s, levels[i]);
  out.median = out.q[9];
  out.lo95 = empirical_quantile(s, 0.025);
  out.hi95 = empirical_quantile(s, 0.975);
  return out;
}

QuantileSummary summarize(std::span<const float> samples) {
  const std::vector<double> d(samples.begin(), samples.end());
  return summarize(std::span<const double>(d));
}

double squared_error(std::span<const double> prediction, std::span<const double> target) {
  if (prediction.size() != target.size())
    throw ShapeError("squared_error: " + std::to_string(prediction.size()) + " predictions vs " +
                     std::to_string(target.size()) + " targets");
  double total = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double e = prediction[i] - target[i];
    total += e * e;
  }
  return total;
}

double mse(std::span<const double> prediction, std::span<const double> target) {
  if (target.empty()) throw DataError("mse: no slots");
  return squared_error(prediction, target) / double(target.size());
}

double pinball(double q, double x, double alpha) noexcept {
  return (alpha - (q >= x ? 1.0 : 0.0)) * (x - q);
}

double SacrpsTerms::value() const {
  if (denominator == 0.0)
    throw DataError("SACRPS undefined: every target is exactly 0, so the normaliser sum |x| vanishes");
  return numerator / denominator;
}

SacrpsTerms sacrps_terms(const std::array<double, kQuantileLevels>& quantiles, double target) {
  SacrpsTerms t;
  const auto& levels = quantile_levels();
  for (std::size_t i = 0; i < levels.size(); ++i) t.numerator += 2.0 * pinball(quantiles[i], target, levels[i]);
  t.denominator = double(kQuantileLevels) * std::abs(target);
  return t;
}

double sacrps(std::span<const std::array<double, kQuantileLevels>> quantiles,
              std::span<const double> targets) {
  if (quantiles.size() != targets.size())
    throw ShapeError("sacrps: " + std::to_string(quantiles.size()) + " quantile vectors vs " +
                     std::to_string(targets.size()) + " targets");
  SacrpsTerms total;
  for (std::size_t i = 0; i < targets.size(); ++i) total += sacrps_terms(quantiles[i], targets[i]);
  return total.value();
}

double crps_gaussian(double mu, double sigma, double x) {
  if (sigma < 0.0) throw DataError("crps_gaussian: negative sigma");
  if (sigma == 0.0) return std::abs(x - mu);
  const double z = (x - mu) / sigma;
  const double pdf = std::exp(-0.5 * z * z) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  return sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - std::numbers::inv_sqrtpi);
}

double SampleMetrics::sacrps_value() const {
  return sacrps.denominator == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                                   : sacrps.numerator / sacrps.denominator;
}

std::vector<SampleMetrics> per_sample_metrics(std::span<const ForecastResult> results) {
  std::vector<SampleMetrics> rows;
  for (const auto& r : results) {
    if (r.slots.empty()) continue;
    SampleMetrics m;
    m.subject_id = r.subject_id;
    m.stay_id = r.stay_id;
    for (const auto& slot : r.slots) {
      const auto q = summarize(std::span<const float>(slot.samples));
      m.sacrps += sacrps_terms(q.q, slot.truth);
      const double e = q.median - double(slot.truth);
      m.squared_error += e * e;
      ++m.slots;
    }
    rows.push_back(std::move(m));
  }
  return rows;
}

GlobalMetrics global_metrics(std::span<const ForecastResult> results) {
  GlobalMetrics g;
  SacrpsTerms total;
  double se = 0.0;
  for (const auto& r : results) {
    if (r.slots.empty()) continue;
    ++g.samples;
    for (const auto& slot : r.slots) {
      const auto q = summarize(std::span<const float>(slot.samples));
      const auto& levels = quantile_levels();
      for (std::size_t i = 0; i < levels.size(); ++i)
        total.numerator += 2.0 * pinball(q.q[i], slot.truth, levels[i]);
      total.denominator += double(kQuantileLevels) * std::abs(double(slot.truth));
      se += (q.median - slot.truth) * (q.median - slot.truth);
      ++g.slots;
    }
  }
  if (g.slots == 0) throw DataError("no forecast slots to score");
  g.sacrps = total.value();
  g.mse = se / double(g.slots);
  return g;
}

GlobalMetrics aggregate(std::span<const SampleMetrics> rows) {
  GlobalMetrics g;
  SacrpsTerms total;
  double se = 0.0;
  for (const auto& r : rows) {
    ++g.samples;
    g.slots += r.slots;
    total += r.sacrps;
    se += r.squared_error;
  }
  if (g.slots == 0) throw DataError("no forecast slots to score");
  g.sacrps = total.value();
  g.mse = se / double(g.slots);
  return g;
}

Distribution describe(std::span<const double> values) {
  std::vector<double> v;
  for (double x : values)
    if (std::isfinite(x)) v.push_back(x);
  Distribution d;
  d.count = v.size();
  if (v.empty()) return d;
  std::sort(v.begin(), v.end());
  d.min = v.front();
  d.max = v.back();
  d.q1 = empirical_quantile(v, 0.25);
  d.median = empirical_quantile(v, 0.5);
  d.q3 = empirical_quantile(v, 0.75);
  return d;
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  bool any = false;
  for (double x : values) {
    if (!std::isfinite(x)) continue;
    if (!any) {
      h.lo = h.hi = x;
      any = true;
    }
    h.lo = std::min(h.lo, x);
    h.hi = std::max(h.hi, x);
  }
  for (double x : values) {
    if (!std::isfinite(x)) {
      ++h.skipped;
      continue;
    }
    std::size_t k = 0;
    if (h.hi > h.lo) k = static_cast<std::size_t>((x - h.lo) / (h.hi - h.lo) * double(bins));
    ++h.counts[std::min(k, bins - 1)];
  }
  return h;
}

}  // namespace tripcast

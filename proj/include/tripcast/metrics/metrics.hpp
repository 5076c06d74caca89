#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tripcast/diffusion/diffusion.hpp"

namespace tripcast {

inline constexpr std::size_t kQuantileLevels = 19;

/// 0.05, 0.10, ..., 0.95.
const std::array<double, kQuantileLevels>& quantile_levels() noexcept;

/// Linear interpolation between order statistics of an ascending sample:
/// position (n - 1) * level.
double empirical_quantile(std::span<const double> sorted, double level);

struct QuantileSummary {
  std::array<double, kQuantileLevels> q{};
  double median = 0.0;
  double lo95 = 0.0;  // 0.025 quantile
  double hi95 = 0.0;  // 0.975 quantile
};

QuantileSummary summarize(std::span<const double> samples);
QuantileSummary summarize(std::span<const float> samples);

/// Sum of squared differences.
double squared_error(std::span<const double> prediction, std::span<const double> target);
/// squared_error divided by the number of slots.
double mse(std::span<const double> prediction, std::span<const double> target);

/// (alpha - [q >= x]) (x - q).
double pinball(double q, double x, double alpha) noexcept;

/// SACRPS in sum form: numerator sum over slots and levels of
/// 2 pinball(q_i, x, 0.05 i); denominator 19 sum |x|.
struct SacrpsTerms {
  double numerator = 0.0;
  double denominator = 0.0;
  /// numerator / denominator; throws DataError when the denominator is 0.
  double value() const;
  SacrpsTerms& operator+=(const SacrpsTerms& o) {
    numerator += o.numerator;
    denominator += o.denominator;
    return *this;
  }
};

SacrpsTerms sacrps_terms(const std::array<double, kQuantileLevels>& quantiles, double target);
double sacrps(std::span<const std::array<double, kQuantileLevels>> quantiles,
              std::span<const double> targets);

/// Closed-form CRPS of N(mu, sigma^2) at x; sigma = 0 gives |x - mu|.
double crps_gaussian(double mu, double sigma, double x);

struct SampleMetrics {
  std::string subject_id;
  std::string stay_id;
  std::size_t slots = 0;
  SacrpsTerms sacrps;
  double squared_error = 0.0;  // of the medians
  double sacrps_value() const;  // NaN when every target is exactly 0
  double mse() const { return slots ? squared_error / double(slots) : 0.0; }
};

/// Scores every forecast in standardised space. Forecasts without slots
/// are skipped.
std::vector<SampleMetrics> per_sample_metrics(std::span<const ForecastResult> results);

struct GlobalMetrics {
  std::size_t samples = 0;
  std::size_t slots = 0;
  double sacrps = 0.0;  // pooled sum form
  double mse = 0.0;     // averaged over slots
};

/// Pools every valid slot of every forecast directly.
GlobalMetrics global_metrics(std::span<const ForecastResult> results);
/// The same numbers regrouped from per-sample numerators and denominators.
GlobalMetrics aggregate(std::span<const SampleMetrics> rows);

struct Distribution {
  std::size_t count = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Summary of the finite values.
Distribution describe(std::span<const double> values);

struct Histogram {
  double lo = 0.0, hi = 0.0;
  std::vector<std::size_t> counts;
  std::size_t skipped = 0;  // non-finite inputs
  double edge(std::size_t i) const { return lo + (hi - lo) * double(i) / double(counts.size()); }
};

/// Equal-width bins over [min, max] of the finite values.
Histogram histogram(std::span<const double> values, std::size_t bins);

}  // namespace tripcast

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tripcast/core/checkpoint.hpp"
#include "tripcast/data/catalog.hpp"
#include "tripcast/data/pipeline.hpp"

namespace tripcast {

/// Moments of a generated vital sign.
struct VitalSpec {
  double mean = 0.0;
  double std = 1.0;
};

struct SynthConfig {
  std::size_t subjects = 200;
  /// Each subject gets 1..max_stays_per_subject stays.
  std::size_t max_stays_per_subject = 2;
  double duration_minutes = 60.0;

  /// Poisson event rates (events per minute): one rate per vital sign, and
  /// one pooled rate shared by the active non-target features.
  double vital_rate = 0.1;
  double nontarget_rate = 0.1;
  /// The first `active_nontarget` non-target numeric features of the
  /// catalog plus `active_yes_no` yes/no features receive events.
  std::size_t active_nontarget = 16;
  std::size_t active_yes_no = 4;
  /// Fraction of pooled non-target events that go to yes/no features.
  double yes_no_share = 0.15;

  VitalSpec hr{90.82, 21.56};
  VitalSpec sbp{117.74, 27.95};
  VitalSpec dbp{60.34, 16.86};
  double age_mean = 65.43;
  double age_std = 16.35;

  /// Vital dynamics: z(t) = sqrt(1-w)(cos phi b1 + sin phi b2) + sqrt(w) a(t)
  /// with a unit-variance AR(1) a(t) and a slowly drifting phase phi, which
  /// keeps every marginal at unit variance. A sudden-change stay makes phi
  /// jump once inside the window.
  double ar_weight = 0.2;
  double ar_rho_per_minute = 0.9;
  double drift_std = 0.01;
  double sudden_change_prob = 0.2;

  /// Planted cases.
  double minor_fraction = 0.05;
  double empty_conditional_fraction = 0.02;
  double empty_target_fraction = 0.02;
  double outlier_fraction = 0.03;
};

/// Bookkeeping of what was planted, sufficient to predict the pipeline's
/// discard counters exactly.
struct SynthTruth {
  std::size_t subjects = 0;
  std::size_t minor_subjects = 0;
  std::size_t stays = 0;
  std::size_t stays_minor = 0;
  std::size_t stays_empty_conditional = 0;
  std::size_t stays_empty_target = 0;
  std::size_t stays_regular = 0;
  std::size_t records = 0;
  std::size_t records_minor = 0;
  std::size_t records_outlier = 0;
  std::size_t records_after_window = 0;

  Manifest to_manifest() const;
};

struct SynthOutput {
  std::vector<EventRecord> records;
  SynthTruth truth;
};

/// Generates an event log. Outliers are planted only on non-anchor numeric
/// events of adult stays, so they never change whether a window is empty.
SynthOutput synth_generate(const SynthConfig& config, const FeatureCatalog& catalog,
                           std::uint64_t seed);

/// Writes `{path}` (CSV) and `{path}.truth` (key = value).
void write_synth(const std::filesystem::path& path, const SynthOutput& output,
                 const FeatureCatalog& catalog);

}  // namespace tripcast

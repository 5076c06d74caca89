#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "tripcast/core/checkpoint.hpp"
#include "tripcast/data/catalog.hpp"
#include "tripcast/data/triplet.hpp"

namespace tripcast {

/// One row of the event log. A missing age or value is NaN.
struct EventRecord {
  std::string subject_id;
  std::string stay_id;
  double age = std::numeric_limits<double>::quiet_NaN();
  std::int32_t feature_id = 0;
  double minute = 0.0;
  double value = std::numeric_limits<double>::quiet_NaN();
};

/// Record and stay counters filled in by the pipeline stages. At the stay
/// level: stays_in = samples + empty_conditional + empty_target + underage +
/// other.
struct DiscardReport {
  std::size_t records_in = 0;
  std::size_t records_underage = 0;
  std::size_t records_missing_age = 0;
  std::size_t records_outlier = 0;
  std::size_t records_null_value = 0;
  std::size_t records_after_window = 0;
  std::size_t records_unfitted_feature = 0;

  std::size_t stays_in = 0;
  std::size_t samples = 0;
  std::size_t stays_empty_conditional = 0;
  std::size_t stays_empty_target = 0;
  std::size_t stays_underage = 0;
  std::size_t stays_other = 0;

  Manifest to_manifest() const;
};

/// Parses an event CSV with header `subject_id,stay_id,age,feature,minute,value`
/// (columns may appear in any order). Empty age or value cells mean missing.
/// Records are returned stably ordered by (stay_id, minute).
std::vector<EventRecord> load_events(const std::filesystem::path& path,
                                     const FeatureCatalog& catalog);
void write_events(const std::filesystem::path& path, const std::vector<EventRecord>& records,
                  const FeatureCatalog& catalog);

/// Keeps records with age >= 18. Records without an age are dropped and counted.
std::vector<EventRecord> filter_adults(std::vector<EventRecord> records, DiscardReport& report);

/// Drops numeric values outside the catalog range and null values of any kind.
std::vector<EventRecord> filter_outliers(std::vector<EventRecord> records,
                                         const FeatureCatalog& catalog, DiscardReport& report);

/// A stay's first 40 minutes before standardisation.
struct RawWindow {
  std::string subject_id;
  std::string stay_id;
  std::vector<WindowEvent> conditional;  // minutes [0, 30), all features
  std::vector<WindowEvent> target;       // minutes [30, 40), target features
};

/// One window per stay (records must be grouped by stay, as load_events
/// returns them). Stays with an empty conditional or target part are
/// discarded and counted.
std::vector<RawWindow> extract_windows(const std::vector<EventRecord>& records,
                                       const FeatureCatalog& catalog, DiscardReport& report);

struct SplitManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
  std::vector<std::string> warnings;
};

/// Shuffles the distinct subjects with a seeded Fisher-Yates pass; the
/// first round(0.2 n) form the test split, then round(0.2 m) of the
/// remaining m form the validation split. Each set is returned sorted.
SplitManifest split_by_subject(const std::vector<std::string>& subject_ids, std::uint64_t seed);

/// Population mean/std of each numeric feature over the raw values in the
/// given (training) windows. Throws DataError for a feature whose observed
/// values are all equal. Unobserved features stay unfitted.
FeatureCatalog fit_catalog_stats(const std::vector<RawWindow>& train, FeatureCatalog catalog);

/// Standardises a window and fixes its capacity. The conditional selection
/// draws from a stream derived from (seed, stay_id). Events of unfitted
/// features are dropped and counted.
IcuSample build_sample(const RawWindow& window, const FeatureCatalog& catalog,
                       std::size_t capacity, std::size_t target_capacity, std::uint64_t seed,
                       DiscardReport* report = nullptr);

struct PipelineOptions {
  std::size_t capacity = kConditionalCapacity;
  std::size_t target_capacity = kTargetCapacity;
  std::uint64_t seed = 0;
};

struct PipelineResult {
  DiscardReport report;
  SplitManifest split;
  FeatureCatalog catalog;
  TripletDataset train, valid, test;
};

/// load_events -> filter_adults -> filter_outliers -> extract_windows ->
/// split_by_subject -> fit_catalog_stats (training windows) -> build_sample.
PipelineResult run_pipeline(const std::filesystem::path& events, const FeatureCatalog& catalog,
                            const PipelineOptions& options);

/// Writes train.bin, valid.bin, test.bin, catalog.csv and manifest.txt.
void write_pipeline_outputs(const std::filesystem::path& out_dir, const PipelineResult& result,
                            const PipelineOptions& options, const Manifest& extra = {});

}  // namespace tripcast

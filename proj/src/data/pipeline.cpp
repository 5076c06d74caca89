#include "tripcast/data/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "tripcast/core/error.hpp"
#include "tripcast/core/rng.hpp"
#include "tripcast/data/csv.hpp"

namespace tripcast {

Manifest DiscardReport::to_manifest() const {
  return {
      {"records_in", std::to_string(records_in)},
      {"records_underage", std::to_string(records_underage)},
      {"records_missing_age", std::to_string(records_missing_age)},
      {"records_outlier", std::to_string(records_outlier)},
      {"records_null_value", std::to_string(records_null_value)},
      {"records_after_window", std::to_string(records_after_window)},
      {"records_unfitted_feature", std::to_string(records_unfitted_feature)},
      {"stays_in", std::to_string(stays_in)},
      {"samples", std::to_string(samples)},
      {"stays_empty_conditional", std::to_string(stays_empty_conditional)},
      {"stays_empty_target", std::to_string(stays_empty_target)},
      {"stays_underage", std::to_string(stays_underage)},
      {"stays_other", std::to_string(stays_other)},
  };
}

std::vector<EventRecord> load_events(const std::filesystem::path& path,
                                     const FeatureCatalog& catalog) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open event log " + path.string());
  const std::string where = path.string();
  std::string line;
  if (!std::getline(in, line)) throw ParseError(where + ":1: missing header");

  const std::vector<std::string> expected{"subject_id", "stay_id", "age",
                                          "feature",    "minute",  "value"};
  const auto header = csv::split(csv::chomp(line));
  std::vector<int> column(expected.size(), -1);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto it = std::find(expected.begin(), expected.end(), header[c]);
    if (it == expected.end())
      throw ParseError(where + ":1: unknown column '" + header[c] + "'");
    auto& slot = column[static_cast<std::size_t>(it - expected.begin())];
    if (slot >= 0) throw ParseError(where + ":1: duplicate column '" + header[c] + "'");
    slot = static_cast<int>(c);
  }
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (column[i] < 0) throw ParseError(where + ":1: missing column '" + expected[i] + "'");

  std::map<std::string, std::int32_t> ids;
  for (const Feature& f : catalog.features()) ids.emplace(f.name, f.id);

  std::vector<EventRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = csv::chomp(line);
    if (line.empty()) continue;
    const std::string at = where + ":" + std::to_string(lineno);
    const auto cells = csv::split(line);
    if (cells.size() != header.size())
      throw ParseError(at + ": expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(cells.size()));
    auto cell = [&](int i) -> const std::string& { return cells[static_cast<std::size_t>(column[i])]; };
    EventRecord r;
    r.subject_id = cell(0);
    r.stay_id = cell(1);
    if (r.subject_id.empty() || r.stay_id.empty())
      throw ParseError(at + ": empty subject_id or stay_id");
    if (!cell(2).empty()) r.age = csv::parse_double(cell(2), at, "age");
    const auto id = ids.find(cell(3));
    if (id == ids.end()) throw ParseError(at + ": unknown feature '" + cell(3) + "'");
    r.feature_id = id->second;
    r.minute = csv::parse_double(cell(4), at, "minute");
    if (r.minute < 0) throw ParseError(at + ": negative minute " + cell(4));
    if (!cell(5).empty()) r.value = csv::parse_double(cell(5), at, "value");
    records.push_back(std::move(r));
  }
  std::stable_sort(records.begin(), records.end(), [](const EventRecord& a, const EventRecord& b) {
    if (a.stay_id != b.stay_id) return a.stay_id < b.stay_id;
    return a.minute < b.minute;
  });
  return records;
}

void write_events(const std::filesystem::path& path, const std::vector<EventRecord>& records,
                  const FeatureCatalog& catalog) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write event log " + path.string());
  out << "subject_id,stay_id,age,feature,minute,value\n";
  char buf[64];
  for (const EventRecord& r : records) {
    out << r.subject_id << ',' << r.stay_id << ',';
    if (!std::isnan(r.age)) {
      std::snprintf(buf, sizeof buf, "%.2f", r.age);
      out << buf;
    }
    out << ',' << catalog.at(r.feature_id).name << ',';
    std::snprintf(buf, sizeof buf, "%.3f", r.minute);
    out << buf << ',';
    if (!std::isnan(r.value)) {
      std::snprintf(buf, sizeof buf, "%.2f", r.value);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing event log " + path.string());
}

std::vector<EventRecord> filter_adults(std::vector<EventRecord> records, DiscardReport& report) {
  std::erase_if(records, [&](const EventRecord& r) {
    if (std::isnan(r.age)) {
      ++report.records_missing_age;
      return true;
    }
    if (r.age < 18.0) {
      ++report.records_underage;
      return true;
    }
    return false;
  });
  return records;
}

std::vector<EventRecord> filter_outliers(std::vector<EventRecord> records,
                                         const FeatureCatalog& catalog, DiscardReport& report) {
  std::erase_if(records, [&](const EventRecord& r) {
    if (std::isnan(r.value)) {
      ++report.records_null_value;
      return true;
    }
    const Feature& f = catalog.at(r.feature_id);
    if (f.kind == FeatureKind::numeric && (r.value < f.min || r.value > f.max)) {
      ++report.records_outlier;
      return true;
    }
    return false;
  });
  return records;
}

std::vector<RawWindow> extract_windows(const std::vector<EventRecord>& records,
                                       const FeatureCatalog& catalog, DiscardReport& report) {
  std::vector<RawWindow> windows;
  std::set<std::string> seen;
  for (std::size_t begin = 0; begin < records.size();) {
    std::size_t end = begin;
    while (end < records.size() && records[end].stay_id == records[begin].stay_id) ++end;
    if (!seen.insert(records[begin].stay_id).second)
      throw DataError("extract_windows: records of stay " + records[begin].stay_id +
                      " are not contiguous");
    RawWindow w;
    w.subject_id = records[begin].subject_id;
    w.stay_id = records[begin].stay_id;
    for (std::size_t i = begin; i < end; ++i) {
      const EventRecord& r = records[i];
      if (r.minute >= kWindowMinutes) {
        ++report.records_after_window;
        continue;
      }
      if (r.minute < kConditionalMinutes) {
        w.conditional.push_back({r.feature_id, r.minute, r.value});
      } else if (catalog.at(r.feature_id).is_target) {
        w.target.push_back({r.feature_id, r.minute, r.value});
      }
    }
    if (w.conditional.empty()) ++report.stays_empty_conditional;
    else if (w.target.empty()) ++report.stays_empty_target;
    else windows.push_back(std::move(w));
    begin = end;
  }
  return windows;
}

SplitManifest split_by_subject(const std::vector<std::string>& subject_ids, std::uint64_t seed) {
  std::vector<std::string> subjects(subject_ids.begin(), subject_ids.end());
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());

  SplitManifest m;
  m.seed = seed;
  Rng rng = Rng(seed).fork(fnv1a64("split_by_subject"));
  for (std::size_t i = subjects.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(subjects[i - 1], subjects[j]);
  }
  const std::size_t n = subjects.size();
  const auto n_test = static_cast<std::size_t>(std::floor(0.2 * double(n) + 0.5));
  const std::size_t rest = n - n_test;
  const auto n_valid = static_cast<std::size_t>(std::floor(0.2 * double(rest) + 0.5));
  m.test.assign(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_test));
  m.valid.assign(subjects.begin() + static_cast<std::ptrdiff_t>(n_test),
                 subjects.begin() + static_cast<std::ptrdiff_t>(n_test + n_valid));
  m.train.assign(subjects.begin() + static_cast<std::ptrdiff_t>(n_test + n_valid), subjects.end());
  for (auto* set : {&m.train, &m.valid, &m.test}) std::sort(set->begin(), set->end());
  if (m.test.empty()) m.warnings.push_back("test split is empty (" + std::to_string(n) + " subjects)");
  if (m.valid.empty())
    m.warnings.push_back("validation split is empty (" + std::to_string(n) + " subjects)");
  return m;
}

FeatureCatalog fit_catalog_stats(const std::vector<RawWindow>& train, FeatureCatalog catalog) {
  std::vector<std::vector<double>> values(catalog.size() + 1);
  for (const RawWindow& w : train)
    for (const auto* part : {&w.conditional, &w.target})
      for (const WindowEvent& e : *part) values[static_cast<std::size_t>(e.feature_id)].push_back(e.raw);

  std::vector<Feature> features = catalog.features();
  for (Feature& f : features) {
    f.fitted = false;
    f.mean = 0.0;
    f.std = 1.0;
    if (f.kind != FeatureKind::numeric) continue;
    const auto& v = values[static_cast<std::size_t>(f.id)];
    if (v.empty()) continue;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double std = std::sqrt(ss / double(v.size()));
    if (!(std > 0.0))
      throw DataError("feature '" + f.name + "' is constant (" + std::to_string(mean) +
                      ") over the training split; cannot standardise");
    f.mean = mean;
    f.std = std;
    f.fitted = true;
  }
  return FeatureCatalog(std::move(features));
}

IcuSample build_sample(const RawWindow& window, const FeatureCatalog& catalog,
                       std::size_t capacity, std::size_t target_capacity, std::uint64_t seed,
                       DiscardReport* report) {
  auto usable = [&](const std::vector<WindowEvent>& events) {
    std::vector<WindowEvent> out;
    for (const WindowEvent& e : events) {
      const Feature& f = catalog.at(e.feature_id);
      if (f.kind == FeatureKind::numeric && !f.fitted) {
        if (report) ++report->records_unfitted_feature;
        continue;
      }
      out.push_back(e);
    }
    return out;
  };
  IcuSample s;
  s.subject_id = window.subject_id;
  s.stay_id = window.stay_id;
  const auto cond_events = usable(window.conditional);
  const auto target_events = usable(window.target);
  const auto cond = events_to_triplets(cond_events, catalog);
  Rng rng = Rng(seed).fork(fnv1a64(window.stay_id));
  const auto targets = catalog.target_ids();
  s.conditional = select_conditional(cond, targets, capacity, rng);
  s.target = pack_target(events_to_triplets(target_events, catalog), target_capacity);
  return s;
}

PipelineResult run_pipeline(const std::filesystem::path& events, const FeatureCatalog& catalog,
                            const PipelineOptions& options) {
  PipelineResult result;
  DiscardReport& report = result.report;
  auto records = load_events(events, catalog);
  report.records_in = records.size();

  std::map<std::string, std::size_t> stays_before;
  for (const EventRecord& r : records) stays_before[r.stay_id] += 1;
  report.stays_in = stays_before.size();

  std::map<std::string, std::size_t> underage_records, missing_age_records;
  for (const EventRecord& r : records) {
    if (std::isnan(r.age)) ++missing_age_records[r.stay_id];
    else if (r.age < 18.0) ++underage_records[r.stay_id];
  }
  records = filter_adults(std::move(records), report);
  records = filter_outliers(std::move(records), catalog, report);

  std::set<std::string> remaining;
  for (const EventRecord& r : records) remaining.insert(r.stay_id);
  // A stay that vanished entirely is attributed to the age filter when age
  // removed records from it, otherwise it surfaces as an empty window.
  std::size_t vanished_empty = 0;
  for (const auto& [stay, n] : stays_before) {
    if (remaining.count(stay)) continue;
    if (underage_records.count(stay)) ++report.stays_underage;
    else if (missing_age_records.count(stay)) ++report.stays_other;
    else ++vanished_empty;
  }
  report.stays_empty_conditional += vanished_empty;

  auto windows = extract_windows(records, catalog, report);

  std::vector<std::string> subjects;
  for (const RawWindow& w : windows) subjects.push_back(w.subject_id);
  result.split = split_by_subject(subjects, options.seed);

  const std::set<std::string> train_set(result.split.train.begin(), result.split.train.end());
  const std::set<std::string> valid_set(result.split.valid.begin(), result.split.valid.end());
  const std::set<std::string> test_set(result.split.test.begin(), result.split.test.end());
  for (const auto& s : train_set)
    if (valid_set.count(s) || test_set.count(s))
      throw DataError("subject " + s + " appears in more than one split");
  for (const auto& s : valid_set)
    if (test_set.count(s)) throw DataError("subject " + s + " appears in more than one split");

  std::vector<RawWindow> train_windows;
  for (const RawWindow& w : windows)
    if (train_set.count(w.subject_id)) train_windows.push_back(w);
  result.catalog = fit_catalog_stats(train_windows, catalog);

  const std::uint64_t hash = result.catalog.hash();
  for (auto* ds : {&result.train, &result.valid, &result.test}) {
    ds->catalog_hash = hash;
    ds->capacity = static_cast<std::uint32_t>(options.capacity);
    ds->target_capacity = static_cast<std::uint32_t>(options.target_capacity);
  }
  for (const RawWindow& w : windows) {
    IcuSample s = build_sample(w, result.catalog, options.capacity, options.target_capacity,
                               options.seed, &report);
    if (s.conditional_count() == 0) {
      ++report.stays_empty_conditional;
      continue;
    }
    if (s.target_count() == 0) {
      ++report.stays_empty_target;
      continue;
    }
    validate_sample(s, result.catalog, options.capacity, options.target_capacity);
    ++report.samples;
    if (train_set.count(w.subject_id)) result.train.samples.push_back(std::move(s));
    else if (valid_set.count(w.subject_id)) result.valid.samples.push_back(std::move(s));
    else result.test.samples.push_back(std::move(s));
  }
  return result;
}

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

}  // namespace

void write_pipeline_outputs(const std::filesystem::path& out_dir, const PipelineResult& result,
                            const PipelineOptions& options, const Manifest& extra) {
  std::filesystem::create_directories(out_dir);
  write_dataset(out_dir / "train.bin", result.train);
  write_dataset(out_dir / "valid.bin", result.valid);
  write_dataset(out_dir / "test.bin", result.test);
  result.catalog.save(out_dir / "catalog.csv");
  Manifest m = result.report.to_manifest();
  m["seed"] = std::to_string(options.seed);
  m["capacity"] = std::to_string(options.capacity);
  m["target_capacity"] = std::to_string(options.target_capacity);
  m["catalog_hash"] = hex64(result.catalog.hash());
  m["train_subjects"] = join(result.split.train);
  m["valid_subjects"] = join(result.split.valid);
  m["test_subjects"] = join(result.split.test);
  m["train_samples"] = std::to_string(result.train.samples.size());
  m["valid_samples"] = std::to_string(result.valid.samples.size());
  m["test_samples"] = std::to_string(result.test.samples.size());
  for (const auto& [k, v] : extra) m[k] = v;
  write_manifest(out_dir / "manifest.txt", m);
}

}  // namespace tripcast

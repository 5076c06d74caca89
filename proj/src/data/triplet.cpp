#include "tripcast/data/triplet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "tripcast/core/error.hpp"

namespace tripcast {

std::size_t IcuSample::conditional_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(conditional.begin(), conditional.end(), [](const Triplet& t) { return t.mask; }));
}

std::size_t IcuSample::target_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(target.begin(), target.end(), [](const Triplet& t) { return t.mask; }));
}

double standardize(double raw, std::int32_t feature_id, const FeatureCatalog& catalog) {
  const Feature& f = catalog.at(feature_id);
  if (f.kind == FeatureKind::yes_no) return 1.0;
  if (!f.fitted) throw DataError("feature '" + f.name + "' has no fitted statistics");
  return (raw - f.mean) / f.std;
}

double destandardize(double value, std::int32_t feature_id, const FeatureCatalog& catalog) {
  const Feature& f = catalog.at(feature_id);
  if (f.kind == FeatureKind::yes_no) return 1.0;
  if (!f.fitted) throw DataError("feature '" + f.name + "' has no fitted statistics");
  return value * f.std + f.mean;
}

std::vector<Triplet> events_to_triplets(std::span<const WindowEvent> events,
                                        const FeatureCatalog& catalog) {
  std::vector<std::size_t> order(events.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (events[a].time != events[b].time) return events[a].time < events[b].time;
    return events[a].feature_id < events[b].feature_id;
  });
  std::vector<Triplet> out;
  out.reserve(events.size());
  for (std::size_t i : order) {
    const WindowEvent& e = events[i];
    if (!catalog.contains(e.feature_id))
      throw DataError("event at minute " + std::to_string(e.time) + ": unknown feature id " +
                      std::to_string(e.feature_id));
    const Feature& f = catalog.at(e.feature_id);
    if (f.kind == FeatureKind::numeric && (e.raw < f.min || e.raw > f.max))
      throw DataError("feature '" + f.name + "': value " + std::to_string(e.raw) +
                      " outside valid range");
    out.push_back({e.feature_id, static_cast<float>(e.time),
                   static_cast<float>(standardize(e.raw, e.feature_id, catalog)), 1});
  }
  return out;
}

std::vector<WindowEvent> triplets_to_events(std::span<const Triplet> triplets,
                                            const FeatureCatalog& catalog) {
  std::vector<WindowEvent> out;
  for (const Triplet& t : triplets) {
    if (!t.mask) continue;
    out.push_back({t.feature_id, static_cast<double>(t.time),
                   destandardize(t.value, t.feature_id, catalog)});
  }
  return out;
}

namespace {

bool by_time(const Triplet& a, const Triplet& b) {
  if (a.time != b.time) return a.time < b.time;
  return a.feature_id < b.feature_id;
}

}  // namespace

std::vector<Triplet> select_conditional(std::span<const Triplet> triplets,
                                        std::span<const std::int32_t> target_features,
                                        std::size_t capacity, Rng& rng) {
  std::vector<Triplet> valid;
  for (const Triplet& t : triplets)
    if (t.mask) valid.push_back(t);

  std::vector<Triplet> chosen;
  if (valid.size() <= capacity) {
    chosen = std::move(valid);
  } else {
    std::vector<Triplet> same, rest;
    for (const Triplet& t : valid) {
      const bool is_target = std::find(target_features.begin(), target_features.end(),
                                       t.feature_id) != target_features.end();
      (is_target ? same : rest).push_back(t);
    }
    if (same.size() >= capacity) {
      std::stable_sort(same.begin(), same.end(), by_time);
      chosen.assign(same.end() - static_cast<std::ptrdiff_t>(capacity), same.end());
    } else {
      chosen = std::move(same);
      // Partial Fisher-Yates: the first `need` entries become a uniform
      // draw without replacement.
      const std::size_t need = capacity - chosen.size();
      for (std::size_t i = 0; i < need; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(rest.size() - i));
        std::swap(rest[i], rest[j]);
        chosen.push_back(rest[i]);
      }
    }
  }
  std::stable_sort(chosen.begin(), chosen.end(), by_time);
  chosen.resize(capacity, Triplet{});
  return chosen;
}

std::vector<Triplet> pack_target(std::vector<Triplet> triplets, std::size_t capacity) {
  std::erase_if(triplets, [](const Triplet& t) { return !t.mask; });
  std::stable_sort(triplets.begin(), triplets.end(), by_time);
  if (triplets.size() > capacity) triplets.resize(capacity);
  triplets.resize(capacity, Triplet{});
  return triplets;
}

void validate_sample(const IcuSample& sample, const FeatureCatalog& catalog, std::size_t capacity,
                     std::size_t target_capacity) {
  const std::string who = "sample " + sample.stay_id + ": ";
  if (sample.conditional.size() != capacity)
    throw DataError(who + "conditional array has " + std::to_string(sample.conditional.size()) +
                    " slots, expected " + std::to_string(capacity));
  if (sample.target.size() != target_capacity)
    throw DataError(who + "target array has " + std::to_string(sample.target.size()) +
                    " slots, expected " + std::to_string(target_capacity));
  auto check = [&](const std::vector<Triplet>& slots, double lo, double hi, bool target) {
    bool padding_seen = false;
    for (const Triplet& t : slots) {
      if (!t.mask) {
        if (t.value != 0.0f || t.feature_id != kPaddingFeature)
          throw DataError(who + "padding slot carries data");
        padding_seen = true;
        continue;
      }
      if (padding_seen) throw DataError(who + "valid slot after padding");
      if (!catalog.contains(t.feature_id))
        throw DataError(who + "unknown feature id " + std::to_string(t.feature_id));
      if (!(t.time >= lo && t.time < hi))
        throw DataError(who + "time " + std::to_string(t.time) + " outside window");
      if (target && !catalog.at(t.feature_id).is_target)
        throw DataError(who + "target slot holds non-target feature '" +
                        catalog.at(t.feature_id).name + "'");
      if (!std::isfinite(t.value)) throw DataError(who + "non-finite value");
    }
  };
  check(sample.conditional, 0.0, kConditionalMinutes, false);
  check(sample.target, kConditionalMinutes, kWindowMinutes, true);
  if (sample.target_count() == 0) throw DataError(who + "empty target");
}

namespace {

static_assert(std::endian::native == std::endian::little, "dataset IO assumes little-endian");

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_triplet(std::ostream& out, const Triplet& t) {
  put(out, t.feature_id);
  put(out, t.time);
  put(out, t.value);
  put(out, t.mask);
}

class Reader {
 public:
  Reader(std::istream& in, std::string where) : in_(in), where_(std::move(where)) {}

  template <typename V>
  V get() {
    V v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in_) throw IoError(where_ + ": truncated dataset file");
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 20)) throw IoError(where_ + ": implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) throw IoError(where_ + ": truncated dataset file");
    return s;
  }

  Triplet get_triplet() {
    Triplet t;
    t.feature_id = get<std::int32_t>();
    t.time = get<float>();
    t.value = get<float>();
    t.mask = get<std::uint8_t>();
    return t;
  }

 private:
  std::istream& in_;
  std::string where_;
};

constexpr char kMagic[4] = {'T', 'C', 'D', 'S'};

}  // namespace

void write_dataset(const std::filesystem::path& path, const TripletDataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, 1);
  put(out, dataset.catalog_hash);
  put(out, dataset.capacity);
  put(out, dataset.target_capacity);
  put<std::uint64_t>(out, dataset.samples.size());
  for (const IcuSample& s : dataset.samples) {
    if (s.conditional.size() != dataset.capacity || s.target.size() != dataset.target_capacity)
      throw DataError("sample " + s.stay_id + " does not match the dataset capacities");
    put_string(out, s.subject_id);
    put_string(out, s.stay_id);
    for (const Triplet& t : s.conditional) put_triplet(out, t);
    for (const Triplet& t : s.target) put_triplet(out, t);
  }
  if (!out) throw IoError("failed writing dataset " + path.string());
}

TripletDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(path.string() + ": not a triplet dataset file");
  Reader r(in, path.string());
  if (r.get<std::uint32_t>() != 1) throw IoError(path.string() + ": unsupported version");
  TripletDataset ds;
  ds.catalog_hash = r.get<std::uint64_t>();
  ds.capacity = r.get<std::uint32_t>();
  ds.target_capacity = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    IcuSample s;
    s.subject_id = r.get_string();
    s.stay_id = r.get_string();
    s.conditional.resize(ds.capacity);
    s.target.resize(ds.target_capacity);
    for (auto& t : s.conditional) t = r.get_triplet();
    for (auto& t : s.target) t = r.get_triplet();
    ds.samples.push_back(std::move(s));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw IoError(path.string() + ": trailing bytes after the last sample");
  return ds;
}

}  // namespace tripcast

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tripcast/core/rng.hpp"
#include "tripcast/data/catalog.hpp"

namespace tripcast {

inline constexpr std::size_t kConditionalCapacity = 60;
inline constexpr std::size_t kTargetCapacity = 30;
inline constexpr double kWindowMinutes = 40.0;
inline constexpr double kConditionalMinutes = 30.0;

/// One observed event, or a padding slot when mask == 0. Padding carries
/// feature id 0, time 0 and value 0.
struct Triplet {
  std::int32_t feature_id = kPaddingFeature;
  float time = 0.0f;
  float value = 0.0f;
  std::uint8_t mask = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// An event inside one window before standardisation.
struct WindowEvent {
  std::int32_t feature_id = 0;
  double time = 0.0;
  double raw = 0.0;
};

/// One 40-minute window: `conditional` holds exactly the conditional
/// capacity of triplets (times in [0, 30)), `target` the target capacity
/// (times in [30, 40), target features only). Valid slots come first, in
/// time order.
struct IcuSample {
  std::string subject_id;
  std::string stay_id;
  std::vector<Triplet> conditional;
  std::vector<Triplet> target;

  std::size_t conditional_count() const noexcept;
  std::size_t target_count() const noexcept;
};

/// (raw - mean) / std for numeric features; 1 for a present yes/no event.
double standardize(double raw, std::int32_t feature_id, const FeatureCatalog& catalog);
/// Inverse of standardize for numeric features; 1 for yes/no features.
double destandardize(double value, std::int32_t feature_id, const FeatureCatalog& catalog);

/// One mask=1 triplet per event, sorted by (time, feature_id); ties keep
/// input order.
std::vector<Triplet> events_to_triplets(std::span<const WindowEvent> events,
                                        const FeatureCatalog& catalog);

/// Inverse of events_to_triplets over the valid slots.
std::vector<WindowEvent> triplets_to_events(std::span<const Triplet> triplets,
                                            const FeatureCatalog& catalog);

/// Fills `capacity` slots from `triplets`. When everything fits, everything
/// is kept. Otherwise triplets of target features are kept first (the most
/// recent ones if they alone overflow) and the remaining slots are drawn
/// uniformly without replacement from the rest. Valid slots are returned in
/// time order, padding last.
std::vector<Triplet> select_conditional(std::span<const Triplet> triplets,
                                        std::span<const std::int32_t> target_features,
                                        std::size_t capacity, Rng& rng);

/// Sorted target triplets truncated to the earliest `capacity` and padded.
std::vector<Triplet> pack_target(std::vector<Triplet> triplets, std::size_t capacity);

/// Checks the triplet and sample invariants; throws DataError describing the
/// first violation.
void validate_sample(const IcuSample& sample, const FeatureCatalog& catalog,
                     std::size_t capacity, std::size_t target_capacity);

/// A dataset file: header (catalog hash, capacities) plus samples.
struct TripletDataset {
  std::uint64_t catalog_hash = 0;
  std::uint32_t capacity = kConditionalCapacity;
  std::uint32_t target_capacity = kTargetCapacity;
  std::vector<IcuSample> samples;
};

/// Binary layout (little-endian): "TCDS" | u32 version=1 | u64 catalog_hash |
/// u32 capacity | u32 target_capacity | u64 count | per sample: u32 len +
/// subject_id, u32 len + stay_id, then capacity + target_capacity triplets
/// as (i32 feature_id, f32 time, f32 value, u8 mask).
void write_dataset(const std::filesystem::path& path, const TripletDataset& dataset);
TripletDataset read_dataset(const std::filesystem::path& path);

}  // namespace tripcast

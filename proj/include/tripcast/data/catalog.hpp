#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tripcast {

enum class FeatureKind : std::uint8_t { numeric, yes_no };

/// Feature id 0 is reserved for padding triplets; real features start at 1.
inline constexpr std::int32_t kPaddingFeature = 0;

struct Feature {
  std::int32_t id = 0;
  std::string name;
  FeatureKind kind = FeatureKind::numeric;
  double min = 0.0;
  double max = 0.0;
  bool is_target = false;
  // Standardisation statistics, filled by fit_catalog_stats. Yes/no features
  // are never fitted: a present yes/no event always standardises to 1.
  bool fitted = false;
  double mean = 0.0;
  double std = 1.0;
};

class FeatureCatalog {
 public:
  FeatureCatalog() = default;

  /// Features must carry ids 1..n in order, unique names and exactly three
  /// target features.
  explicit FeatureCatalog(std::vector<Feature> features);

  /// The 129-feature reference catalog (117 numeric, 12 yes/no) with HR, SBP
  /// and DBP as ids 1, 2 and 3.
  static FeatureCatalog reference();

  /// Reads `id,name,kind,min,max,is_target[,mean,std]` rows after a header.
  static FeatureCatalog load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return features_.size(); }
  const std::vector<Feature>& features() const noexcept { return features_; }

  /// Throws DataError for an id outside 1..size().
  const Feature& at(std::int32_t id) const;
  Feature& at(std::int32_t id);
  bool contains(std::int32_t id) const noexcept {
    return id >= 1 && static_cast<std::size_t>(id) <= features_.size();
  }
  std::optional<std::int32_t> find(std::string_view name) const;

  /// Target feature ids in catalog order.
  std::vector<std::int32_t> target_ids() const;

  /// FNV-1a over the canonical text form, statistics included.
  std::uint64_t hash() const;
  std::string to_csv() const;

 private:
  std::vector<Feature> features_;
};

std::string hex64(std::uint64_t value);

}  // namespace tripcast

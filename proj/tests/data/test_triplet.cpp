#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "tripcast/core/error.hpp"
#include "tripcast/data/triplet.hpp"

using namespace tripcast;

namespace {

FeatureCatalog fitted_reference() {
  auto features = FeatureCatalog::reference().features();
  for (Feature& f : features) {
    if (f.kind != FeatureKind::numeric) continue;
    f.fitted = true;
    f.mean = 0.5 * (f.min + f.max);
    f.std = 0.1 * (f.max - f.min);
  }
  features[0].mean = 90.82;
  features[0].std = 21.56;
  features[1].mean = 117.74;
  features[1].std = 27.95;
  return FeatureCatalog(features);
}

Triplet valid(std::int32_t feature, float time, float value = 0.5f) {
  return {feature, time, value, 1};
}

}  // namespace

TEST_CASE("reference catalog layout") {
  const auto cat = FeatureCatalog::reference();
  CHECK(cat.size() == 129);
  std::size_t numeric = 0;
  for (const Feature& f : cat.features()) numeric += f.kind == FeatureKind::numeric;
  CHECK(numeric == 117);
  CHECK(cat.target_ids() == std::vector<std::int32_t>{1, 2, 3});
  CHECK(cat.at(1).name == "HR");
  CHECK(cat.at(2).name == "SBP");
  CHECK(cat.at(3).name == "DBP");
  CHECK(cat.find("losartan").has_value());
  CHECK_THROWS_AS(cat.at(0), DataError);
  CHECK_THROWS_AS(cat.at(130), DataError);
}

TEST_CASE("catalog round-trips through its CSV form") {
  const auto cat = fitted_reference();
  const auto path = std::filesystem::temp_directory_path() / "tripcast_catalog.csv";
  cat.save(path);
  const auto back = FeatureCatalog::load(path);
  CHECK(back.hash() == cat.hash());
  CHECK(back.at(1).mean == 90.82);
  CHECK(back.at(120).kind == FeatureKind::yes_no);
  CHECK_FALSE(back.at(120).fitted);
}

TEST_CASE("the losartan / HR / SBP example becomes three ordered triplets") {
  const auto cat = fitted_reference();
  const auto losartan = *cat.find("losartan");
  // Given out of order on purpose.
  std::vector<WindowEvent> events{{2, 5.0, 130.0}, {losartan, 2.0, 200.0}, {1, 3.0, 90.0}};
  const auto t = events_to_triplets(events, cat);
  REQUIRE(t.size() == 3);
  CHECK(t[0].feature_id == losartan);
  CHECK(t[0].time == 2.0f);
  CHECK(t[1].feature_id == 1);
  CHECK(t[1].time == 3.0f);
  CHECK(t[2].feature_id == 2);
  CHECK(t[2].time == 5.0f);
  for (const auto& x : t) CHECK(x.mask == 1);
  CHECK(t[1].value == doctest::Approx((90.0 - 90.82) / 21.56));

  CHECK(events_to_triplets({}, cat).empty());
  std::vector<WindowEvent> mean_hr{{1, 1.0, 90.82}};
  CHECK(events_to_triplets(mean_hr, cat)[0].value == 0.0f);

  std::vector<WindowEvent> unknown{{999, 1.0, 1.0}};
  CHECK_THROWS_AS(events_to_triplets(unknown, cat), DataError);
}

TEST_CASE("standardize / destandardize") {
  const auto cat = fitted_reference();
  CHECK(standardize(90.82, 1, cat) == doctest::Approx(0.0));
  CHECK(standardize(112.38, 1, cat) == doctest::Approx(1.0).epsilon(1e-12));
  Rng rng(7);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::int32_t id = 1 + static_cast<std::int32_t>(rng.below(117));
    const Feature& f = cat.at(id);
    const double x = rng.uniform(f.min, f.max);
    worst = std::max(worst, std::abs(destandardize(standardize(x, id, cat), id, cat) - x));
  }
  CHECK(worst < 1e-6);
  const auto yes_no = *cat.find("Dialysis");
  CHECK(standardize(1.0, yes_no, cat) == 1.0);

  const auto unfitted = FeatureCatalog::reference();
  CHECK_THROWS_AS(standardize(90, 1, unfitted), DataError);
}

TEST_CASE("sparse matrix -> triplets -> sparse matrix keeps exactly the observed entries") {
  const auto cat = fitted_reference();
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    // Dense view: 129 features x 30 whole minutes, about 1% observed.
    std::map<std::pair<std::int32_t, int>, double> matrix;
    for (std::int32_t f = 1; f <= 117; ++f)
      for (int m = 0; m < 30; ++m)
        if (rng.uniform() < 0.01)
          matrix[{f, m}] = std::round(rng.uniform(cat.at(f).min, cat.at(f).max) * 100) / 100;
    std::vector<WindowEvent> events;
    for (const auto& [key, v] : matrix) events.push_back({key.first, double(key.second), v});
    std::vector<WindowEvent> shuffled = events;
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);

    const auto triplets = events_to_triplets(shuffled, cat);
    std::map<std::pair<std::int32_t, int>, double> back;
    for (const auto& e : triplets_to_events(triplets, cat)) {
      const auto key = std::make_pair(e.feature_id, int(e.time));
      CHECK(back.count(key) == 0);
      back[key] = e.raw;
    }
    REQUIRE(back.size() == matrix.size());
    for (const auto& [key, v] : matrix) {
      CHECK(back.count(key) == 1);
      // Stored as 32-bit standardized values; recovery is exact to the
      // 0.01 recording resolution.
      CHECK(std::round(back[key] * 100) / 100 == doctest::Approx(v).epsilon(1e-12));
    }
  }
}

TEST_CASE("select_conditional pads a small set") {
  std::vector<Triplet> in;
  for (int i = 0; i < 13; ++i) in.push_back(valid(1 + i % 5, float(29 - i)));
  Rng rng(1);
  const std::int32_t targets[] = {1, 2, 3};
  const auto out = select_conditional(in, targets, 60, rng);
  REQUIRE(out.size() == 60);
  std::size_t n_valid = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i < 13) {
      CHECK(out[i].mask == 1);
      if (i) CHECK(out[i - 1].time <= out[i].time);
    } else {
      CHECK(out[i] == Triplet{});
    }
    n_valid += out[i].mask;
  }
  CHECK(n_valid == 13);
}

TEST_CASE("select_conditional keeps target features and samples the rest uniformly") {
  // 80 triplets, 10 of target features (ids 1..3), 70 others (ids 4..20).
  std::vector<Triplet> in;
  for (int i = 0; i < 80; ++i) {
    const std::int32_t f = i < 10 ? 1 + i % 3 : 4 + i % 17;
    in.push_back(valid(f, float(i) * 0.37f, float(i)));
  }
  const std::int32_t targets[] = {1, 2, 3};
  std::vector<int> picked(80, 0);
  const int trials = 4000;
  for (int s = 0; s < trials; ++s) {
    Rng rng(100 + s);
    const auto out = select_conditional(in, targets, 60, rng);
    REQUIRE(out.size() == 60);
    std::set<int> members;
    for (const Triplet& t : out) {
      REQUIRE(t.mask == 1);
      members.insert(int(t.value));
    }
    REQUIRE(members.size() == 60);
    for (int i = 0; i < 10; ++i) CHECK(members.count(i) == 1);
    std::size_t others = 0;
    for (int i = 10; i < 80; ++i) others += members.count(i);
    CHECK(others == 50);
    for (int i : members) ++picked[i];
    for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i - 1].time <= out[i].time);
  }
  // Each of the 70 others should appear with probability 50/70.
  const double p = 50.0 / 70.0, sd = std::sqrt(trials * p * (1 - p));
  for (int i = 10; i < 80; ++i) CHECK(std::abs(picked[i] - trials * p) < 5 * sd);

  Rng a(5), b(5);
  CHECK(select_conditional(in, targets, 60, a) == select_conditional(in, targets, 60, b));
}

TEST_CASE("select_conditional keeps the most recent target triplets when they overflow") {
  std::vector<Triplet> in;
  for (int i = 0; i < 70; ++i) in.push_back(valid(1, float(i) * 0.4f, float(i)));
  for (int i = 0; i < 5; ++i) in.push_back(valid(9, float(i), 100.0f + i));
  const std::int32_t targets[] = {1, 2, 3};
  Rng rng(3);
  const auto out = select_conditional(in, targets, 60, rng);
  for (std::size_t i = 0; i < 60; ++i) {
    CHECK(out[i].feature_id == 1);
    CHECK(out[i].value == float(10 + i));
  }
}

TEST_CASE("pack_target truncates to the earliest slots") {
  std::vector<Triplet> in;
  for (int i = 0; i < 35; ++i) in.push_back(valid(1 + i % 3, 39.0f - float(i) * 0.25f));
  const auto out = pack_target(in, 30);
  REQUIRE(out.size() == 30);
  CHECK(out.front().time == 39.0f - 34 * 0.25f);
  for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i - 1].time <= out[i].time);
  const auto small = pack_target({valid(1, 31.0f)}, 30);
  CHECK(small[0].mask == 1);
  CHECK(small[1] == Triplet{});
}

TEST_CASE("dataset files round-trip and reject corruption") {
  TripletDataset ds;
  ds.catalog_hash = 0xfeedbeefcafe1234ull;
  ds.capacity = 4;
  ds.target_capacity = 2;
  IcuSample s;
  s.subject_id = "P1";
  s.stay_id = "S1";
  s.conditional = {valid(5, 1.5f, -0.25f), valid(1, 2.0f), Triplet{}, Triplet{}};
  s.target = {valid(2, 33.0f, 1.25f), Triplet{}};
  ds.samples = {s, s};
  ds.samples[1].stay_id = "S2";
  const auto path = std::filesystem::temp_directory_path() / "tripcast_ds.bin";
  write_dataset(path, ds);
  const auto back = read_dataset(path);
  CHECK(back.catalog_hash == ds.catalog_hash);
  CHECK(back.capacity == 4);
  CHECK(back.target_capacity == 2);
  REQUIRE(back.samples.size() == 2);
  CHECK(back.samples[1].stay_id == "S2");
  CHECK(back.samples[0].conditional == s.conditional);
  CHECK(back.samples[0].target == s.target);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  CHECK_THROWS_AS(read_dataset(path), IoError);
}

TEST_CASE("validate_sample catches broken invariants") {
  const auto cat = fitted_reference();
  IcuSample s;
  s.stay_id = "S";
  s.conditional = {valid(5, 1.0f), Triplet{}};
  s.target = {valid(1, 31.0f), Triplet{}};
  CHECK_NOTHROW(validate_sample(s, cat, 2, 2));
  auto bad = s;
  bad.target[0].feature_id = 5;
  CHECK_THROWS_AS(validate_sample(bad, cat, 2, 2), DataError);
  bad = s;
  bad.conditional[1].value = 0.5f;
  CHECK_THROWS_AS(validate_sample(bad, cat, 2, 2), DataError);
  bad = s;
  bad.target[0] = Triplet{};
  CHECK_THROWS_AS(validate_sample(bad, cat, 2, 2), DataError);
  bad = s;
  bad.conditional[0].time = 30.0f;
  CHECK_THROWS_AS(validate_sample(bad, cat, 2, 2), DataError);
}

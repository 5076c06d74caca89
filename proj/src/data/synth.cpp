#include "tripcast/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "tripcast/core/error.hpp"
#include "tripcast/core/rng.hpp"

namespace tripcast {

Manifest SynthTruth::to_manifest() const {
  return {
      {"subjects", std::to_string(subjects)},
      {"minor_subjects", std::to_string(minor_subjects)},
      {"stays", std::to_string(stays)},
      {"stays_minor", std::to_string(stays_minor)},
      {"stays_empty_conditional", std::to_string(stays_empty_conditional)},
      {"stays_empty_target", std::to_string(stays_empty_target)},
      {"stays_regular", std::to_string(stays_regular)},
      {"records", std::to_string(records)},
      {"records_minor", std::to_string(records_minor)},
      {"records_outlier", std::to_string(records_outlier)},
      {"records_after_window", std::to_string(records_after_window)},
  };
}

namespace {

enum class StayKind { regular, empty_conditional, empty_target };

double round_to(double v, double step) { return std::round(v / step) * step; }

// Event times of a homogeneous Poisson process on [lo, hi).
std::vector<double> poisson_times(Rng& rng, double rate, double lo, double hi) {
  std::vector<double> times;
  if (rate <= 0.0) return times;
  double t = lo;
  while (true) {
    t += -std::log(1.0 - rng.uniform()) / rate;
    if (t >= hi) break;
    times.push_back(t);
  }
  return times;
}

struct VitalPath {
  double b1, b2, phi0, drift, jump_time, jump;
};

struct Event {
  std::int32_t feature;
  double minute;
  double value;
  bool anchor;
};

class StayBuilder {
 public:
  StayBuilder(const SynthConfig& cfg, const FeatureCatalog& catalog, Rng rng)
      : cfg_(cfg), catalog_(catalog), rng_(rng) {
    const auto targets = catalog.target_ids();
    targets_.assign(targets.begin(), targets.end());
    for (const Feature& f : catalog.features()) {
      if (f.is_target) continue;
      if (f.kind == FeatureKind::numeric && nontarget_.size() < cfg.active_nontarget)
        nontarget_.push_back(f.id);
      if (f.kind == FeatureKind::yes_no && yes_no_.size() < cfg.active_yes_no)
        yes_no_.push_back(f.id);
    }
  }

  std::vector<Event> build(StayKind kind) {
    const double phi0 = rng_.uniform(0.0, 2.0 * std::numbers::pi);
    const double drift = cfg_.drift_std * rng_.normal();
    double jump_time = 1e9, jump = 0.0;
    if (rng_.uniform() < cfg_.sudden_change_prob) {
      jump_time = rng_.uniform(15.0, 40.0);
      jump = (rng_.uniform() < 0.5 ? -1.0 : 1.0) * rng_.uniform(0.5, 1.5) * std::numbers::pi / 2;
    }
    std::vector<Event> events;
    const VitalSpec specs[3] = {cfg_.hr, cfg_.sbp, cfg_.dbp};
    for (std::size_t v = 0; v < targets_.size(); ++v) {
      VitalPath path{rng_.normal(), rng_.normal(), phi0, drift, jump_time, jump};
      std::vector<double> times = poisson_times(rng_, cfg_.vital_rate, 0.0, cfg_.duration_minutes);
      std::vector<bool> anchor(times.size(), false);
      // Anchors guarantee the window parts a stay kind needs are non-empty;
      // they are never turned into outliers.
      if (kind != StayKind::empty_conditional && v == 0) {
        times.push_back(round_to(rng_.uniform(0.0, kConditionalMinutes), 0.001));
        anchor.push_back(true);
      }
      if (kind != StayKind::empty_target && v == 1) {
        times.push_back(round_to(rng_.uniform(kConditionalMinutes, kWindowMinutes), 0.001));
        anchor.push_back(true);
      }
      std::vector<std::size_t> order(times.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] < times[b]; });
      double a = rng_.normal();
      double last = 0.0;
      for (std::size_t i : order) {
        double t = round_to(times[i], 0.001);
        if (t >= cfg_.duration_minutes) t = cfg_.duration_minutes - 0.001;
        if (kind == StayKind::empty_conditional && t < kConditionalMinutes) continue;
        if (kind == StayKind::empty_target && t >= kConditionalMinutes && t < kWindowMinutes)
          continue;
        const double rho = std::pow(cfg_.ar_rho_per_minute, t - last);
        a = rho * a + std::sqrt(1.0 - rho * rho) * rng_.normal();
        last = t;
        const double phi = path.phi0 + path.drift * t + (t >= path.jump_time ? path.jump : 0.0);
        const double z = std::sqrt(1.0 - cfg_.ar_weight) *
                             (std::cos(phi) * path.b1 + std::sin(phi) * path.b2) +
                         std::sqrt(cfg_.ar_weight) * a;
        const Feature& f = catalog_.at(targets_[v]);
        double value = std::clamp(specs[v].mean + specs[v].std * z, f.min, f.max);
        value = std::clamp(round_to(value, 0.01), f.min, f.max);
        events.push_back({targets_[v], t, value, anchor[i]});
      }
    }
    // Pooled non-target events; each active feature keeps a stay-level level.
    std::vector<double> level(nontarget_.size());
    for (double& l : level) l = rng_.normal();
    for (double t : poisson_times(rng_, cfg_.nontarget_rate, 0.0, cfg_.duration_minutes)) {
      t = std::min(round_to(t, 0.001), cfg_.duration_minutes - 0.001);
      if (kind == StayKind::empty_conditional && t < kConditionalMinutes) continue;
      const bool yes_no = !yes_no_.empty() && (nontarget_.empty() || rng_.uniform() < cfg_.yes_no_share);
      if (yes_no) {
        events.push_back({yes_no_[rng_.below(yes_no_.size())], t, 1.0, false});
      } else if (!nontarget_.empty()) {
        const std::size_t k = rng_.below(nontarget_.size());
        const Feature& f = catalog_.at(nontarget_[k]);
        const double mid = 0.5 * (f.min + f.max), spread = 0.08 * (f.max - f.min);
        double value = mid + spread * (0.8 * level[k] + 0.6 * rng_.normal());
        value = std::clamp(round_to(value, 0.01), f.min, f.max);
        events.push_back({nontarget_[k], t, value, false});
      }
    }
    return events;
  }

  Rng& rng() { return rng_; }

 private:
  const SynthConfig& cfg_;
  const FeatureCatalog& catalog_;
  Rng rng_;
  std::vector<std::int32_t> targets_, nontarget_, yes_no_;
};

}  // namespace

SynthOutput synth_generate(const SynthConfig& cfg, const FeatureCatalog& catalog,
                           std::uint64_t seed) {
  if (cfg.subjects == 0) throw ConfigError("synth: subjects must be positive");
  if (cfg.max_stays_per_subject == 0) throw ConfigError("synth: max_stays_per_subject must be positive");
  if (cfg.duration_minutes < kWindowMinutes)
    throw ConfigError("synth: duration_minutes must cover the 40-minute window");
  for (double p : {cfg.minor_fraction, cfg.empty_conditional_fraction, cfg.empty_target_fraction,
                   cfg.outlier_fraction, cfg.sudden_change_prob, cfg.yes_no_share})
    if (p < 0.0 || p > 1.0) throw ConfigError("synth: fractions must lie in [0, 1]");
  if (cfg.empty_conditional_fraction + cfg.empty_target_fraction > 1.0)
    throw ConfigError("synth: empty-window fractions exceed 1");
  if (cfg.vital_rate < 0 || cfg.nontarget_rate < 0) throw ConfigError("synth: negative event rate");
  if (catalog.target_ids().size() != 3) throw ConfigError("synth: catalog needs three targets");

  SynthOutput out;
  SynthTruth& truth = out.truth;
  const Rng root(seed);
  char buf[32];
  std::size_t stay_counter = 0;
  for (std::size_t s = 0; s < cfg.subjects; ++s) {
    Rng subject_rng = root.fork(0x5000000000ull + s);
    std::snprintf(buf, sizeof buf, "P%06zu", s + 1);
    const std::string subject = buf;
    const bool minor = subject_rng.uniform() < cfg.minor_fraction;
    double age = minor ? round_to(subject_rng.uniform(1.0, 17.99), 0.01)
                       : cfg.age_mean + cfg.age_std * subject_rng.normal();
    if (!minor) age = std::clamp(round_to(age, 0.01), 18.0, 100.0);
    if (minor) age = std::min(age, 17.99);
    const std::size_t stays = 1 + subject_rng.below(cfg.max_stays_per_subject);
    ++truth.subjects;
    truth.minor_subjects += minor ? 1 : 0;
    for (std::size_t k = 0; k < stays; ++k) {
      std::snprintf(buf, sizeof buf, "S%07zu", ++stay_counter);
      const std::string stay = buf;
      StayBuilder builder(cfg, catalog, root.fork(0x7000000000ull + stay_counter));
      Rng& rng = builder.rng();
      const double u = rng.uniform();
      StayKind kind = StayKind::regular;
      if (u < cfg.empty_conditional_fraction) kind = StayKind::empty_conditional;
      else if (u < cfg.empty_conditional_fraction + cfg.empty_target_fraction)
        kind = StayKind::empty_target;
      auto events = builder.build(kind);
      ++truth.stays;
      if (minor) ++truth.stays_minor;
      else if (kind == StayKind::empty_conditional) ++truth.stays_empty_conditional;
      else if (kind == StayKind::empty_target) ++truth.stays_empty_target;
      else ++truth.stays_regular;
      for (Event& e : events) {
        const Feature& f = catalog.at(e.feature);
        if (!minor && !e.anchor && f.kind == FeatureKind::numeric &&
            rng.uniform() < cfg.outlier_fraction) {
          // Outside the valid range on either side.
          e.value = rng.uniform() < 0.5 ? round_to(f.min - 1.0 - rng.uniform(0.0, 50.0), 0.01)
                                        : round_to(f.max + 1.0 + rng.uniform(0.0, 50.0), 0.01);
          ++truth.records_outlier;
        } else if (!minor && e.minute >= kWindowMinutes) {
          ++truth.records_after_window;
        }
        out.records.push_back({subject, stay, age, e.feature, e.minute, e.value});
      }
      truth.records += events.size();
      if (minor) truth.records_minor += events.size();
    }
  }
  std::stable_sort(out.records.begin(), out.records.end(),
                   [](const EventRecord& a, const EventRecord& b) {
                     if (a.stay_id != b.stay_id) return a.stay_id < b.stay_id;
                     return a.minute < b.minute;
                   });
  return out;
}

void write_synth(const std::filesystem::path& path, const SynthOutput& output,
                 const FeatureCatalog& catalog) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_events(path, output.records, catalog);
  auto truth_path = path;
  truth_path += ".truth";
  write_manifest(truth_path, output.truth.to_manifest());
}

}  // namespace tripcast

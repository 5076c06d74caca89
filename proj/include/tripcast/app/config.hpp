#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tripcast/core/checkpoint.hpp"
#include "tripcast/data/synth.hpp"
#include "tripcast/diffusion/diffusion.hpp"
#include "tripcast/model/denoiser.hpp"

namespace tripcast {

struct ScheduleConfig {
  std::size_t steps = 50;
  double beta1 = 1e-4;
  double beta_t = 0.5;
  ScheduleKind kind = ScheduleKind::quadratic;
};

struct TrainConfig {
  std::size_t batch = 32;
  double lr = 1e-3;
  std::size_t max_steps = 20000;
  /// Validation loss is computed every eval_every steps.
  std::size_t eval_every = 200;
  /// Evaluations without improvement before stopping.
  std::size_t patience = 10;
  /// Fixed (t, eps) draws per validation sample.
  std::size_t valid_draws = 4;
  /// When positive, train on the first N training samples only, judge them
  /// on themselves and never stop early.
  std::size_t overfit = 0;
};

struct SampleConfig {
  std::size_t paths = 100;
  std::string split = "test";
  /// Forecast at most this many samples (0 = all).
  std::size_t limit = 0;
};

/// Every knob of a run. Text form: `key = value` lines under `[section]`
/// headers, `#` comments. Keys are the dotted names printed by to_text().
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t capacity = kConditionalCapacity;
  std::size_t target_capacity = kTargetCapacity;
  ScheduleConfig schedule;
  DenoiserConfig model;
  TrainConfig train;
  SampleConfig sample;
  SynthConfig synth;

  /// Sets one dotted key; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Checks ranges and copies the shared sizes into the model config.
  void finalize();

  /// Canonical `key = value` listing, sorted by key.
  std::string to_text() const;
  /// fnv1a64 of to_text(), as 16 hex digits.
  std::string hash() const;

  DiffusionSchedule make_schedule() const;
};

RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

}  // namespace tripcast

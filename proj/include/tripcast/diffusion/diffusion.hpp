#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tripcast/core/adam.hpp"
#include "tripcast/core/rng.hpp"
#include "tripcast/data/catalog.hpp"
#include "tripcast/data/triplet.hpp"
#include "tripcast/model/denoiser.hpp"

namespace tripcast {

enum class ScheduleKind : std::uint8_t { quadratic, linear };

ScheduleKind parse_schedule_kind(const std::string& text);
const char* to_string(ScheduleKind kind) noexcept;

/// Noise schedule indexed 1..T; index 0 holds alpha[0] = 1 and zeros.
struct DiffusionSchedule {
  std::size_t T = 0;
  ScheduleKind kind = ScheduleKind::quadratic;
  std::vector<double> beta;       // beta[t]
  std::vector<double> alpha_hat;  // 1 - beta[t]
  std::vector<double> alpha;      // prod_{i <= t} alpha_hat[i]
  std::vector<double> sigma;      // sqrt((1 - alpha[t-1]) / (1 - alpha[t]) * beta[t])

  /// One row per t: "t beta alpha_hat alpha sigma".
  std::string dump() const;
};

/// quadratic: beta[t] = (sqrt(b1) + (t-1)/(T-1) (sqrt(bT) - sqrt(b1)))^2
/// linear:    beta[t] = b1 + (t-1)/(T-1) (bT - b1)
DiffusionSchedule make_schedule(std::size_t T = 50, double beta1 = 1e-4, double betaT = 0.5,
                                ScheduleKind kind = ScheduleKind::quadratic);

/// sqrt(alpha[t]) x0 + sqrt(1 - alpha[t]) eps on mask=1 slots; other slots
/// are returned unchanged.
std::vector<float> forward_noise(std::span<const float> x0, std::span<const std::uint8_t> mask,
                                 std::size_t t, std::span<const float> eps,
                                 const DiffusionSchedule& schedule);

/// Mean squared difference over mask=1 slots.
template <typename T>
Tensor<T> training_loss(const Tensor<T>& eps_hat, std::span<const float> eps,
                        std::span<const std::uint8_t> mask);

/// (x_t - beta_t / sqrt(1 - alpha_t) eps_hat) / sqrt(alpha_hat_t) + sigma_t z
/// on mask=1 slots. z is ignored at t = 1.
std::vector<float> reverse_step(std::span<const float> x_t, std::span<const float> eps_hat,
                                std::size_t t, std::span<const float> z,
                                const DiffusionSchedule& schedule,
                                std::span<const std::uint8_t> mask);

/// One training iteration: a step t and noise eps per sample, loss, backward
/// and one ADAM update. Returns the loss value.
double train_step(Denoiser<float>& model, std::span<const IcuSample* const> batch,
                  const DiffusionSchedule& schedule, Rng& rng, AdamState& optimizer);

/// The same objective without updating anything, over fixed draws: every
/// sample gets `draws` (t, eps) pairs from streams derived from `seed`, so
/// two calls with the same seed see identical noise. Pooled over valid slots.
double evaluate_loss(const Denoiser<float>& model, std::span<const IcuSample> samples,
                     const DiffusionSchedule& schedule, std::uint64_t seed, std::size_t draws = 1,
                     std::size_t batch_size = 64);

struct SlotForecast {
  std::int32_t feature_id = 0;
  float time = 0.0f;
  float truth = 0.0f;            // standardised ground truth
  std::vector<float> samples;    // standardised, one per path
  std::vector<double> raw;       // destandardised, filled when a catalog is given
};

struct ForecastResult {
  std::string subject_id;
  std::string stay_id;
  std::vector<SlotForecast> slots;  // the sample's valid target slots
  double seconds = 0.0;
};

struct SampleOptions {
  std::size_t paths = 100;
  /// When set, destandardised samples are filled in as well.
  const FeatureCatalog* catalog = nullptr;
};

/// Ancestral sampling of `paths` reverse trajectories for the target slots
/// of one sample. Path p draws from Rng(seed).fork(hash(stay_id)).fork(p),
/// so results do not depend on call order.
ForecastResult sample(const Denoiser<float>& model, const IcuSample& sample,
                      const DiffusionSchedule& schedule, std::uint64_t seed,
                      const SampleOptions& options = {});

}  // namespace tripcast

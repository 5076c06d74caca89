#include "tripcast/diffusion/diffusion.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tripcast/core/error.hpp"
#include "tripcast/core/ops.hpp"

namespace tripcast {

ScheduleKind parse_schedule_kind(const std::string& text) {
  if (text == "quadratic") return ScheduleKind::quadratic;
  if (text == "linear") return ScheduleKind::linear;
  throw ConfigError("unknown schedule kind '" + text + "' (expected quadratic or linear)");
}

const char* to_string(ScheduleKind kind) noexcept {
  return kind == ScheduleKind::quadratic ? "quadratic" : "linear";
}

DiffusionSchedule make_schedule(std::size_t T, double beta1, double betaT, ScheduleKind kind) {
  if (T < 2) throw ConfigError("schedule: T must be at least 2, got " + std::to_string(T));
  if (!(beta1 > 0.0 && beta1 < betaT && betaT < 1.0))
    throw ConfigError("schedule: need 0 < beta1 < betaT < 1, got beta1=" + std::to_string(beta1) +
                      " betaT=" + std::to_string(betaT));
  DiffusionSchedule s;
  s.T = T;
  s.kind = kind;
  s.beta.assign(T + 1, 0.0);
  s.alpha_hat.assign(T + 1, 1.0);
  s.alpha.assign(T + 1, 1.0);
  s.sigma.assign(T + 1, 0.0);
  const double r1 = std::sqrt(beta1), rT = std::sqrt(betaT);
  for (std::size_t t = 1; t <= T; ++t) {
    const double f = double(t - 1) / double(T - 1);
    if (kind == ScheduleKind::quadratic) {
      const double r = r1 + f * (rT - r1);
      s.beta[t] = r * r;
    } else {
      s.beta[t] = beta1 + f * (betaT - beta1);
    }
  }
  // Pin the endpoints against rounding in the square-root interpolation.
  s.beta[1] = beta1;
  s.beta[T] = betaT;
  for (std::size_t t = 1; t <= T; ++t) {
    s.alpha_hat[t] = 1.0 - s.beta[t];
    s.alpha[t] = s.alpha[t - 1] * s.alpha_hat[t];
    s.sigma[t] = std::sqrt((1.0 - s.alpha[t - 1]) / (1.0 - s.alpha[t]) * s.beta[t]);
  }
  return s;
}

std::string DiffusionSchedule::dump() const {
  std::ostringstream out;
  out << "# t beta alpha_hat alpha sigma\n";
  char buf[160];
  for (std::size_t t = 1; t <= T; ++t) {
    std::snprintf(buf, sizeof buf, "%zu %.17g %.17g %.17g %.17g\n", t, beta[t], alpha_hat[t],
                  alpha[t], sigma[t]);
    out << buf;
  }
  return out.str();
}

namespace {

void check_step(std::size_t t, const DiffusionSchedule& s, const char* op) {
  if (t < 1 || t > s.T)
    throw ConfigError(std::string(op) + ": step " + std::to_string(t) + " outside 1.." +
                      std::to_string(s.T));
}

}  // namespace

std::vector<float> forward_noise(std::span<const float> x0, std::span<const std::uint8_t> mask,
                                 std::size_t t, std::span<const float> eps,
                                 const DiffusionSchedule& schedule) {
  check_step(t, schedule, "forward_noise");
  if (mask.size() != x0.size() || eps.size() != x0.size())
    throw ShapeError("forward_noise: x0, mask and eps lengths differ");
  const double a = std::sqrt(schedule.alpha[t]), s = std::sqrt(1.0 - schedule.alpha[t]);
  std::vector<float> out(x0.begin(), x0.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = static_cast<float>(a * x0[i] + s * eps[i]);
  return out;
}

template <typename T>
Tensor<T> training_loss(const Tensor<T>& eps_hat, std::span<const float> eps,
                        std::span<const std::uint8_t> mask) {
  if (eps_hat.size() != eps.size() || mask.size() != eps.size())
    throw ShapeError("training_loss: prediction " + to_string(eps_hat.shape()) + " vs " +
                     std::to_string(eps.size()) + " noise values");
  std::size_t valid = 0;
  std::vector<T> target(eps.size()), weight(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    target[i] = mask[i] ? static_cast<T>(eps[i]) : T(0);
    weight[i] = mask[i] ? T(1) : T(0);
    valid += mask[i] ? 1 : 0;
  }
  if (valid == 0) throw DataError("training_loss: no valid target slots");
  const Tensor<T> diff = mul(sub(eps_hat, Tensor<T>(eps_hat.shape(), std::move(target))),
                             Tensor<T>(eps_hat.shape(), std::move(weight)));
  return scale(sum(mul(diff, diff)), T(1) / static_cast<T>(valid));
}

template Tensor<float> training_loss(const Tensor<float>&, std::span<const float>,
                                     std::span<const std::uint8_t>);
template Tensor<double> training_loss(const Tensor<double>&, std::span<const float>,
                                      std::span<const std::uint8_t>);

std::vector<float> reverse_step(std::span<const float> x_t, std::span<const float> eps_hat,
                                std::size_t t, std::span<const float> z,
                                const DiffusionSchedule& schedule,
                                std::span<const std::uint8_t> mask) {
  check_step(t, schedule, "reverse_step");
  if (eps_hat.size() != x_t.size() || mask.size() != x_t.size() ||
      (t > 1 && z.size() != x_t.size()))
    throw ShapeError("reverse_step: x_t, eps_hat, z and mask lengths differ");
  const double inv = 1.0 / std::sqrt(schedule.alpha_hat[t]);
  const double c = schedule.beta[t] / std::sqrt(1.0 - schedule.alpha[t]);
  const double sig = t > 1 ? schedule.sigma[t] : 0.0;
  std::vector<float> out(x_t.begin(), x_t.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!mask[i]) continue;
    double v = inv * (x_t[i] - c * eps_hat[i]);
    if (t > 1) v += sig * z[i];
    out[i] = static_cast<float>(v);
  }
  return out;
}

double train_step(Denoiser<float>& model, std::span<const IcuSample* const> batch,
                  const DiffusionSchedule& schedule, Rng& rng, AdamState& optimizer) {
  if (model.config().diffusion_steps != schedule.T)
    throw ConfigError("train_step: model has " + std::to_string(model.config().diffusion_steps) +
                      " step embeddings, schedule has T=" + std::to_string(schedule.T));
  const DenoiserBatch b = make_batch(batch);
  const std::size_t L = b.target_len;
  std::vector<int> steps(b.batch);
  std::vector<float> eps(b.batch * L, 0.0f), noisy(b.batch * L, 0.0f);
  for (std::size_t r = 0; r < b.batch; ++r) {
    steps[r] = static_cast<int>(rng.below(schedule.T)) + 1;
    for (std::size_t j = 0; j < L; ++j)
      if (b.target_mask[r * L + j]) eps[r * L + j] = static_cast<float>(rng.normal());
    const auto x0 = std::span(b.target_value).subspan(r * L, L);
    const auto m = std::span(b.target_mask).subspan(r * L, L);
    const auto xt = forward_noise(x0, m, static_cast<std::size_t>(steps[r]),
                                  std::span<const float>(eps).subspan(r * L, L), schedule);
    std::copy(xt.begin(), xt.end(), noisy.begin() + static_cast<std::ptrdiff_t>(r * L));
  }
  auto& params = model.parameters();
  for (auto& p : params) p.tensor.zero_grad();
  const Tensor<float> eps_hat =
      model.forward(b, Tensor<float>({b.batch, L}, std::move(noisy)), steps);
  const Tensor<float> loss = training_loss(eps_hat, eps, b.target_mask);
  backward(loss);
  adam_step(std::span<NamedParameter<float>>(params), optimizer);
  return loss.item();
}

double evaluate_loss(const Denoiser<float>& model, std::span<const IcuSample> samples,
                     const DiffusionSchedule& schedule, std::uint64_t seed, std::size_t draws,
                     std::size_t batch_size) {
  if (samples.empty()) throw DataError("evaluate_loss: no samples");
  NoGradGuard guard;
  std::vector<const IcuSample*> rows;
  std::vector<std::pair<std::size_t, std::size_t>> ids;  // (sample, draw)
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t d = 0; d < draws; ++d) ids.emplace_back(i, d);
  double total = 0.0;
  std::size_t count = 0;
  const Rng root(seed);
  for (std::size_t start = 0; start < ids.size(); start += batch_size) {
    const std::size_t end = std::min(ids.size(), start + batch_size);
    rows.clear();
    for (std::size_t k = start; k < end; ++k) rows.push_back(&samples[ids[k].first]);
    const DenoiserBatch b = make_batch(rows);
    const std::size_t L = b.target_len;
    std::vector<int> steps(b.batch);
    std::vector<float> eps(b.batch * L, 0.0f), noisy(b.batch * L, 0.0f);
    for (std::size_t r = 0; r < b.batch; ++r) {
      const auto [i, d] = ids[start + r];
      Rng rng = root.fork(fnv1a64(samples[i].stay_id)).fork(d);
      steps[r] = static_cast<int>(rng.below(schedule.T)) + 1;
      for (std::size_t j = 0; j < L; ++j)
        if (b.target_mask[r * L + j]) eps[r * L + j] = static_cast<float>(rng.normal());
      const auto xt = forward_noise(std::span(b.target_value).subspan(r * L, L),
                                    std::span(b.target_mask).subspan(r * L, L),
                                    static_cast<std::size_t>(steps[r]),
                                    std::span<const float>(eps).subspan(r * L, L), schedule);
      std::copy(xt.begin(), xt.end(), noisy.begin() + static_cast<std::ptrdiff_t>(r * L));
    }
    const auto eps_hat = model.forward(b, Tensor<float>({b.batch, L}, std::move(noisy)), steps);
    for (std::size_t k = 0; k < eps.size(); ++k) {
      if (!b.target_mask[k]) continue;
      const double e = double(eps_hat.at(k)) - double(eps[k]);
      total += e * e;
      ++count;
    }
  }
  return total / double(count);
}

ForecastResult sample(const Denoiser<float>& model, const IcuSample& s,
                      const DiffusionSchedule& schedule, std::uint64_t seed,
                      const SampleOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  if (options.paths == 0) throw ConfigError("sample: need at least one path");
  if (model.config().diffusion_steps != schedule.T)
    throw ConfigError("sample: model and schedule disagree on T");
  ForecastResult result;
  result.subject_id = s.subject_id;
  result.stay_id = s.stay_id;
  const std::size_t n = s.target_count();
  if (n == 0) return result;

  NoGradGuard guard;
  const IcuSample* one[] = {&s};
  const DenoiserBatch single = make_batch(one);
  const auto memory = model.encode(single);

  // Decoder rows: the valid target slots repeated once per path.
  const std::size_t S = options.paths;
  DenoiserBatch rows;
  rows.batch = S;
  rows.target_len = n;
  for (std::size_t p = 0; p < S; ++p) {
    rows.target_feature.insert(rows.target_feature.end(), single.target_feature.begin(),
                               single.target_feature.begin() + static_cast<std::ptrdiff_t>(n));
    rows.target_time.insert(rows.target_time.end(), single.target_time.begin(),
                            single.target_time.begin() + static_cast<std::ptrdiff_t>(n));
  }
  rows.target_mask.assign(S * n, 1);
  rows.target_value.assign(S * n, 0.0f);

  const Rng stay_rng = Rng(seed).fork(fnv1a64(s.stay_id));
  std::vector<Rng> path_rng;
  path_rng.reserve(S);
  for (std::size_t p = 0; p < S; ++p) path_rng.push_back(stay_rng.fork(p));

  std::vector<float> x(S * n), z(S * n);
  for (std::size_t p = 0; p < S; ++p)
    for (std::size_t j = 0; j < n; ++j) x[p * n + j] = static_cast<float>(path_rng[p].normal());
  std::vector<int> steps(S);
  for (std::size_t t = schedule.T; t >= 1; --t) {
    std::fill(steps.begin(), steps.end(), static_cast<int>(t));
    const auto eps_hat = model.decode(memory, rows, Tensor<float>({S, n}, x), steps);
    if (t > 1)
      for (std::size_t p = 0; p < S; ++p)
        for (std::size_t j = 0; j < n; ++j) z[p * n + j] = static_cast<float>(path_rng[p].normal());
    x = reverse_step(x, eps_hat.values(), t, z, schedule, rows.target_mask);
  }

  for (std::size_t j = 0; j < n; ++j) {
    SlotForecast slot;
    slot.feature_id = s.target[j].feature_id;
    slot.time = s.target[j].time;
    slot.truth = s.target[j].value;
    slot.samples.resize(S);
    for (std::size_t p = 0; p < S; ++p) slot.samples[p] = x[p * n + j];
    if (options.catalog) {
      slot.raw.resize(S);
      for (std::size_t p = 0; p < S; ++p)
        slot.raw[p] = destandardize(slot.samples[p], slot.feature_id, *options.catalog);
    }
    result.slots.push_back(std::move(slot));
  }
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace tripcast

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tripcast/app/config.hpp"
#include "tripcast/data/pipeline.hpp"
#include "tripcast/metrics/metrics.hpp"

// Library side of the `tripcast` subcommands. Each command is a pure
// function of (config, seed, inputs); progress goes to `log`.
namespace tripcast {

namespace fs = std::filesystem;

/// `# config_hash=<hash> seed=<seed>` line written at the top of every CSV
/// and text output.
std::string provenance_line(const RunConfig& config);

struct SynthOutcome {
  SynthTruth truth;
  fs::path csv, truth_file;
};

/// Writes a synthetic event log to `out_csv` and the planted counts to
/// `out_csv`.truth.
SynthOutcome cmd_synth(const RunConfig& config, const fs::path& out_csv, std::ostream& log);

/// Runs the ingest pipeline on `events` and writes the dataset directory.
/// `catalog` defaults to the reference catalog.
PipelineResult cmd_preprocess(const RunConfig& config, const fs::path& events,
                              const fs::path& out_dir, std::ostream& log,
                              const std::optional<fs::path>& catalog = std::nullopt);

struct LossRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<double> valid_loss;
};

struct TrainOutcome {
  std::size_t start_step = 0;
  std::size_t final_step = 0;
  /// Validation loss before the first update of this run (on the training
  /// subset itself in overfit mode).
  double initial_valid = 0.0;
  double final_valid = 0.0;
  double best_valid = 0.0;
  std::size_t best_step = 0;
  bool early_stopped = false;
  double seconds = 0.0;
  /// fnv1a64 of last.ckpt as written.
  std::string checkpoint_hash;
  std::vector<LossRow> curve;
};

/// Trains on `data_dir`/train.bin, judged on valid.bin, and writes into
/// `out_dir`: best.ckpt/best.manifest (lowest validation loss),
/// last.ckpt/last.manifest (parameters plus optimiser moments), loss.csv and
/// train_summary.txt. `resume` names a last.ckpt to continue from.
TrainOutcome cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir,
                       std::ostream& log, const std::optional<fs::path>& resume = std::nullopt);

/// The model and schedule stored with a checkpoint (`path` with the
/// extension replaced by .manifest).
struct LoadedModel {
  Denoiser<float> model;
  DiffusionSchedule schedule;
  Manifest manifest;
};
LoadedModel load_checkpoint(const fs::path& path);

struct SampleOutcome {
  std::vector<ForecastResult> forecasts;
  double mean_seconds = 0.0;
  double max_seconds = 0.0;
};

/// Forecasts every sample of the configured split and writes
/// forecast_samples.csv (standardised paths and truth),
/// forecast_quantiles.csv (destandardised summaries) and
/// forecast_timing.csv into `out_dir`.
SampleOutcome cmd_sample(const RunConfig& config, const fs::path& data_dir,
                         const fs::path& checkpoint, const fs::path& out_dir, std::ostream& log);

/// Reads a forecast_samples.csv back. `provenance` receives its header line.
std::vector<ForecastResult> read_forecast_samples(const fs::path& path,
                                                  std::string* provenance = nullptr);

struct EvaluateOutcome {
  GlobalMetrics global;
  GlobalMetrics regrouped;
  std::vector<SampleMetrics> rows;
};

/// Scores forecast_samples.csv (a file, or a directory holding one) and
/// writes metrics.txt and per_sample.csv into `out_dir`.
EvaluateOutcome cmd_evaluate(const RunConfig& config, const fs::path& forecasts,
                             const fs::path& out_dir, std::ostream& log);

struct ReportOutcome {
  fs::path dir;
  std::vector<std::string> files;
};

/// Collects whatever a run directory holds (loss.csv, per_sample.csv,
/// forecast_quantiles.csv, metrics.txt, directly or one level down) into
/// `run_dir`/report: summary.txt, loss_curve.csv, hist_sacrps.csv,
/// hist_mse.csv and fan_chart.csv.
ReportOutcome cmd_report(const fs::path& run_dir, std::ostream& log, std::size_t bins = 20);

}  // namespace tripcast

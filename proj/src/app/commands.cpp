#include "tripcast/app/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tripcast/core/error.hpp"
#include "tripcast/data/csv.hpp"

namespace tripcast {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 9) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return hex64(fnv1a64(bytes.str()));
}

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw IoError("missing input file " + path.string());
}

TripletDataset load_split(const fs::path& data_dir, const std::string& split,
                          const RunConfig& config) {
  const fs::path path = data_dir / (split + ".bin");
  require_file(path);
  TripletDataset ds = read_dataset(path);
  if (ds.capacity != config.capacity || ds.target_capacity != config.target_capacity)
    throw ConfigError(path.string() + " was built with capacities " + std::to_string(ds.capacity) +
                      "/" + std::to_string(ds.target_capacity) + " but the config asks for " +
                      std::to_string(config.capacity) + "/" +
                      std::to_string(config.target_capacity));
  return ds;
}

Manifest schedule_manifest(const RunConfig& c) {
  return {{"schedule.steps", std::to_string(c.schedule.steps)},
          {"schedule.beta1", fmt(c.schedule.beta1, 17)},
          {"schedule.beta_t", fmt(c.schedule.beta_t, 17)},
          {"schedule.kind", to_string(c.schedule.kind)}};
}

const std::string& need(const Manifest& m, const std::string& key, const fs::path& origin) {
  const auto it = m.find(key);
  if (it == m.end()) throw ConfigError(origin.string() + " lacks " + key);
  return it->second;
}

fs::path manifest_path(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p.replace_extension(".manifest");
  return p;
}

void write_checkpoint(const fs::path& path, const Denoiser<float>& model, const AdamState* adam,
                      Manifest manifest) {
  auto arrays = model.to_arrays();
  if (adam) {
    const auto& params = model.parameters();
    for (std::size_t i = 0; i < adam->m.size(); ++i) {
      const Shape shape{adam->m[i].size()};
      arrays.push_back({"adam.m." + params[i].name, shape, DType::f64, adam->m[i]});
      arrays.push_back({"adam.v." + params[i].name, shape, DType::f64, adam->v[i]});
    }
    manifest["adam.step"] = std::to_string(adam->step);
  }
  write_arrays(path, arrays);
  write_manifest(manifest_path(path), manifest);
}

std::vector<LossRow> read_loss_csv(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::vector<LossRow> rows;
  std::string line;
  bool header = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = csv::chomp(line);
    if (line.empty() || line.front() == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    const auto cells = csv::split(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != 3) throw ParseError(where + ": expected step,train_loss,valid_loss");
    LossRow r;
    r.step = static_cast<std::size_t>(csv::parse_int(cells[0], where, "step"));
    r.train_loss = csv::parse_double(cells[1], where, "train_loss");
    if (!cells[2].empty()) r.valid_loss = csv::parse_double(cells[2], where, "valid_loss");
    rows.push_back(r);
  }
  return rows;
}

void write_loss_csv(const fs::path& path, const RunConfig& config,
                    const std::vector<LossRow>& rows) {
  auto out = open_out(path);
  out << provenance_line(config) << "\nstep,train_loss,valid_loss\n";
  for (const auto& r : rows) {
    out << r.step << ',' << fmt(r.train_loss) << ',';
    if (r.valid_loss) out << fmt(*r.valid_loss);
    out << '\n';
  }
}

// Batches walk a fresh permutation of the training set each epoch.
class BatchPlan {
 public:
  BatchPlan(std::size_t n, std::uint64_t seed) : n_(n), root_(Rng(seed).fork(fnv1a64("epoch"))) {}

  std::size_t index(std::size_t position) {
    const std::size_t epoch = position / n_;
    if (epoch != epoch_ || perm_.empty()) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      Rng rng = root_.fork(epoch);
      for (std::size_t i = n_; i > 1; --i) std::swap(perm_[i - 1], perm_[rng.below(i)]);
      epoch_ = epoch;
    }
    return perm_[position % n_];
  }

 private:
  std::size_t n_;
  Rng root_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> perm_;
};

}  // namespace

std::string provenance_line(const RunConfig& config) {
  return "# config_hash=" + config.hash() + " seed=" + std::to_string(config.seed);
}

SynthOutcome cmd_synth(const RunConfig& config, const fs::path& out_csv, std::ostream& log) {
  const FeatureCatalog catalog = FeatureCatalog::reference();
  const SynthOutput out = synth_generate(config.synth, catalog, config.seed);
  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  write_synth(out_csv, out, catalog);
  log << "synth: " << out.truth.records << " records, " << out.truth.stays << " stays, "
      << out.truth.subjects << " subjects -> " << out_csv.string() << '\n';
  return {out.truth, out_csv, fs::path(out_csv.string() + ".truth")};
}

PipelineResult cmd_preprocess(const RunConfig& config, const fs::path& events,
                              const fs::path& out_dir, std::ostream& log,
                              const std::optional<fs::path>& catalog_path) {
  require_file(events);
  FeatureCatalog catalog = FeatureCatalog::reference();
  if (catalog_path) {
    require_file(*catalog_path);
    catalog = FeatureCatalog::load(*catalog_path);
  }
  const PipelineOptions options{config.capacity, config.target_capacity, config.seed};
  PipelineResult result = run_pipeline(events, catalog, options);
  write_pipeline_outputs(out_dir, result, options,
                         {{"config_hash", config.hash()}, {"input", events.string()}});
  log << "preprocess: discard accounting\n";
  for (const auto& [k, v] : result.report.to_manifest()) log << "  " << k << " = " << v << '\n';
  log << "  splits: train " << result.train.samples.size() << ", valid "
      << result.valid.samples.size() << ", test " << result.test.samples.size() << " samples\n";
  for (const auto& w : result.split.warnings) log << "warning: " << w << '\n';
  return result;
}

TrainOutcome cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir,
                       std::ostream& log, const std::optional<fs::path>& resume) {
  const auto started = Clock::now();
  TripletDataset train = load_split(data_dir, "train", config);
  std::vector<IcuSample> valid;
  const bool overfit = config.train.overfit > 0;
  if (overfit) {
    if (train.samples.size() < config.train.overfit)
      throw DataError("overfit mode wants " + std::to_string(config.train.overfit) +
                      " samples but train.bin holds " + std::to_string(train.samples.size()));
    train.samples.resize(config.train.overfit);
    valid = train.samples;
  } else {
    valid = load_split(data_dir, "valid", config).samples;
  }
  if (train.samples.empty()) throw DataError("no training samples in " + data_dir.string());
  if (valid.empty()) throw DataError("no validation samples in " + data_dir.string());

  const DiffusionSchedule schedule = config.make_schedule();
  Denoiser<float> model(config.model, splitmix64(config.seed ^ fnv1a64("init")));
  AdamState adam = make_adam_state(AdamOptions{config.train.lr});
  TrainOutcome outcome;
  std::size_t bad_evals = 0;
  double best = std::numeric_limits<double>::infinity();
  std::vector<LossRow> curve;

  fs::create_directories(out_dir);
  if (resume) {
    require_file(*resume);
    const auto arrays = read_arrays(*resume);
    const Manifest m = read_manifest(manifest_path(*resume));
    if (need(m, "config_hash", *resume) != config.hash())
      log << "warning: resuming a checkpoint written under config " << m.at("config_hash") << '\n';
    model.load_arrays(arrays);
    std::map<std::string, const StoredArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    adam.step = std::stoull(need(m, "adam.step", *resume));
    for (const auto& p : model.parameters()) {
      const auto mi = by_name.find("adam.m." + p.name), vi = by_name.find("adam.v." + p.name);
      if (mi == by_name.end() || vi == by_name.end())
        throw IoError(resume->string() + " lacks optimiser moments for " + p.name);
      adam.m.push_back(mi->second->values);
      adam.v.push_back(vi->second->values);
    }
    outcome.start_step = std::stoull(need(m, "step", *resume));
    best = std::stod(need(m, "best_valid", *resume));
    outcome.best_step = std::stoull(need(m, "best_step", *resume));
    bad_evals = std::stoull(need(m, "bad_evals", *resume));
    const fs::path previous = resume->parent_path() / "loss.csv";
    if (fs::is_regular_file(previous))
      for (const auto& r : read_loss_csv(previous))
        if (r.step <= outcome.start_step) curve.push_back(r);
    if (fs::absolute(resume->parent_path()) != fs::absolute(out_dir) &&
        fs::is_regular_file(resume->parent_path() / "best.ckpt")) {
      fs::copy_file(resume->parent_path() / "best.ckpt", out_dir / "best.ckpt",
                    fs::copy_options::overwrite_existing);
      fs::copy_file(resume->parent_path() / "best.manifest", out_dir / "best.manifest",
                    fs::copy_options::overwrite_existing);
    }
    log << "train: resuming at step " << outcome.start_step << " from " << resume->string() << '\n';
  }

  const std::uint64_t valid_seed = splitmix64(config.seed ^ fnv1a64("valid"));
  auto validate = [&] {
    return evaluate_loss(model, valid, schedule, valid_seed, config.train.valid_draws);
  };
  Manifest base = config.model.to_manifest();
  for (const auto& [k, v] : schedule_manifest(config)) base[k] = v;
  base["config_hash"] = config.hash();
  base["seed"] = std::to_string(config.seed);
  auto snapshot = [&](std::size_t step) {
    Manifest m = base;
    m["step"] = std::to_string(step);
    m["best_valid"] = fmt(best, 17);
    m["best_step"] = std::to_string(outcome.best_step);
    m["bad_evals"] = std::to_string(bad_evals);
    return m;
  };

  outcome.initial_valid = validate();
  outcome.final_valid = outcome.initial_valid;
  if (!resume) {
    best = outcome.initial_valid;
    write_checkpoint(out_dir / "best.ckpt", model, nullptr, snapshot(0));
  }
  log << "train: " << train.samples.size() << " samples, " << valid.size()
      << (overfit ? " (overfit, judged on themselves)" : " validation") << ", "
      << model.param_count() << " parameters, initial validation loss "
      << fmt(outcome.initial_valid, 6) << '\n';

  const std::size_t batch = std::min(config.train.batch, train.samples.size());
  BatchPlan plan(train.samples.size(), config.seed);
  const Rng step_root = Rng(config.seed).fork(fnv1a64("train"));
  std::vector<const IcuSample*> rows(batch);
  std::size_t step = outcome.start_step;
  while (step < config.train.max_steps) {
    for (std::size_t k = 0; k < batch; ++k) rows[k] = &train.samples[plan.index(step * batch + k)];
    Rng rng = step_root.fork(step);
    const double loss = train_step(model, rows, schedule, rng, adam);
    ++step;
    LossRow row{step, loss, std::nullopt};
    if (step % config.train.eval_every == 0) {
      const double v = validate();
      row.valid_loss = v;
      outcome.final_valid = v;
      if (v < best) {
        best = v;
        outcome.best_step = step;
        bad_evals = 0;
        write_checkpoint(out_dir / "best.ckpt", model, nullptr, snapshot(step));
      } else {
        ++bad_evals;
      }
      log << "step " << step << " train " << fmt(loss, 6) << " valid " << fmt(v, 6) << " best "
          << fmt(best, 6) << " @" << outcome.best_step << '\n';
    }
    curve.push_back(row);
    if (!overfit && row.valid_loss && bad_evals >= config.train.patience) {
      outcome.early_stopped = true;
      log << "train: no validation improvement in " << bad_evals << " evaluations, stopping\n";
      break;
    }
  }

  outcome.final_step = step;
  outcome.best_valid = best;
  write_checkpoint(out_dir / "last.ckpt", model, &adam, snapshot(step));
  if (!fs::is_regular_file(out_dir / "best.ckpt"))
    write_checkpoint(out_dir / "best.ckpt", model, nullptr, snapshot(step));
  outcome.checkpoint_hash = file_hash(out_dir / "last.ckpt");
  write_loss_csv(out_dir / "loss.csv", config, curve);
  outcome.curve = std::move(curve);
  outcome.seconds = seconds_since(started);

  auto summary = open_out(out_dir / "train_summary.txt");
  summary << provenance_line(config) << '\n'
          << "start_step = " << outcome.start_step << "\nfinal_step = " << outcome.final_step
          << "\ninitial_valid = " << fmt(outcome.initial_valid, 17)
          << "\nfinal_valid = " << fmt(outcome.final_valid, 17)
          << "\nbest_valid = " << fmt(outcome.best_valid, 17)
          << "\nbest_step = " << outcome.best_step
          << "\nearly_stopped = " << (outcome.early_stopped ? "true" : "false")
          << "\ncheckpoint_hash = " << outcome.checkpoint_hash
          << "\nseconds = " << fmt(outcome.seconds, 6) << '\n';
  log << "train: finished at step " << step << ", best validation " << fmt(best, 6) << " @"
      << outcome.best_step << ", checkpoint " << outcome.checkpoint_hash << '\n';
  return outcome;
}

LoadedModel load_checkpoint(const fs::path& path) {
  require_file(path);
  const Manifest m = read_manifest(manifest_path(path));
  const DenoiserConfig dc = DenoiserConfig::from_manifest(m);
  const auto schedule = make_schedule(std::stoull(need(m, "schedule.steps", path)),
                                      std::stod(need(m, "schedule.beta1", path)),
                                      std::stod(need(m, "schedule.beta_t", path)),
                                      parse_schedule_kind(need(m, "schedule.kind", path)));
  Denoiser<float> model(dc, 0);
  model.load_arrays(read_arrays(path));
  return {std::move(model), schedule, m};
}

SampleOutcome cmd_sample(const RunConfig& config, const fs::path& data_dir,
                         const fs::path& checkpoint, const fs::path& out_dir, std::ostream& log) {
  const TripletDataset ds = load_split(data_dir, config.sample.split, config);
  require_file(data_dir / "catalog.csv");
  const FeatureCatalog catalog = FeatureCatalog::load(data_dir / "catalog.csv");
  const LoadedModel loaded = load_checkpoint(checkpoint);
  fs::create_directories(out_dir);

  std::size_t count = ds.samples.size();
  if (config.sample.limit > 0) count = std::min(count, config.sample.limit);
  if (count == 0)
    log << "warning: the " << config.sample.split << " split is empty, writing empty forecasts\n";

  const std::size_t S = config.sample.paths;
  auto samples_out = open_out(out_dir / "forecast_samples.csv");
  auto quant_out = open_out(out_dir / "forecast_quantiles.csv");
  auto timing_out = open_out(out_dir / "forecast_timing.csv");
  const std::string prov = provenance_line(config) + " paths=" + std::to_string(S);
  samples_out << prov << "\nsubject_id,stay_id,slot,feature_id,time,truth";
  for (std::size_t p = 0; p < S; ++p) samples_out << ",s" << p;
  samples_out << '\n';
  quant_out << prov << "\nsubject_id,stay_id,slot,feature,time,truth";
  for (int i = 1; i <= int(kQuantileLevels); ++i) {
    char name[8];
    std::snprintf(name, sizeof name, ",q%02d", 5 * i);
    quant_out << name;
  }
  quant_out << ",median,lo95,hi95\n";
  timing_out << prov << "\nsubject_id,stay_id,slots,seconds\n";

  SampleOutcome outcome;
  const SampleOptions options{S, &catalog};
  for (std::size_t i = 0; i < count; ++i) {
    const IcuSample& s = ds.samples[i];
    ForecastResult r = sample(loaded.model, s, loaded.schedule, config.seed, options);
    for (std::size_t j = 0; j < r.slots.size(); ++j) {
      const SlotForecast& slot = r.slots[j];
      samples_out << r.subject_id << ',' << r.stay_id << ',' << j << ',' << slot.feature_id << ','
                  << fmt(slot.time) << ',' << fmt(slot.truth);
      for (float v : slot.samples) samples_out << ',' << fmt(v);
      samples_out << '\n';
      const QuantileSummary q = summarize(std::span<const double>(slot.raw));
      quant_out << r.subject_id << ',' << r.stay_id << ',' << j << ','
                << catalog.at(slot.feature_id).name << ',' << fmt(slot.time) << ','
                << fmt(destandardize(slot.truth, slot.feature_id, catalog));
      for (double v : q.q) quant_out << ',' << fmt(v);
      quant_out << ',' << fmt(q.median) << ',' << fmt(q.lo95) << ',' << fmt(q.hi95) << '\n';
    }
    timing_out << r.subject_id << ',' << r.stay_id << ',' << r.slots.size() << ','
               << fmt(r.seconds, 6) << '\n';
    outcome.mean_seconds += r.seconds;
    outcome.max_seconds = std::max(outcome.max_seconds, r.seconds);
    outcome.forecasts.push_back(std::move(r));
  }
  if (count) outcome.mean_seconds /= double(count);
  log << "sample: " << count << " forecasts with " << S << " paths, mean "
      << fmt(outcome.mean_seconds, 4) << " s, max " << fmt(outcome.max_seconds, 4)
      << " s per sample\n";
  return outcome;
}

std::vector<ForecastResult> read_forecast_samples(const fs::path& path, std::string* provenance) {
  std::ifstream in = open_in(path);
  std::vector<ForecastResult> out;
  std::string line;
  bool header = true;
  std::size_t lineno = 0, paths = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = csv::chomp(line);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (provenance && provenance->empty()) *provenance = line;
      continue;
    }
    const auto cells = csv::split(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (header) {
      if (cells.size() < 6 || cells[0] != "subject_id" || cells[5] != "truth")
        throw ParseError(where + ": not a forecast_samples header");
      paths = cells.size() - 6;
      header = false;
      continue;
    }
    if (cells.size() != paths + 6)
      throw ParseError(where + ": expected " + std::to_string(paths + 6) + " columns, found " +
                       std::to_string(cells.size()));
    if (out.empty() || out.back().subject_id != cells[0] || out.back().stay_id != cells[1])
      out.push_back({cells[0], cells[1], {}, 0.0});
    SlotForecast slot;
    slot.feature_id = static_cast<std::int32_t>(csv::parse_int(cells[3], where, "feature_id"));
    slot.time = static_cast<float>(csv::parse_double(cells[4], where, "time"));
    slot.truth = static_cast<float>(csv::parse_double(cells[5], where, "truth"));
    slot.samples.reserve(paths);
    for (std::size_t p = 0; p < paths; ++p)
      slot.samples.push_back(static_cast<float>(csv::parse_double(cells[6 + p], where, "sample")));
    out.back().slots.push_back(std::move(slot));
  }
  if (header) throw ParseError(path.string() + ": empty forecast file");
  return out;
}

EvaluateOutcome cmd_evaluate(const RunConfig& config, const fs::path& forecasts,
                             const fs::path& out_dir, std::ostream& log) {
  fs::path file = forecasts;
  if (fs::is_directory(file)) file /= "forecast_samples.csv";
  require_file(file);
  std::string provenance;
  const auto results = read_forecast_samples(file, &provenance);
  EvaluateOutcome outcome;
  outcome.rows = per_sample_metrics(results);
  outcome.global = global_metrics(results);
  outcome.regrouped = aggregate(outcome.rows);

  fs::create_directories(out_dir);
  auto m = open_out(out_dir / "metrics.txt");
  m << provenance_line(config) << '\n'
    << "forecasts = " << file.string() << '\n'
    << "forecast_provenance = " << (provenance.empty() ? "none" : provenance.substr(2)) << '\n'
    << "config_hash = " << config.hash() << '\n'
    << "seed = " << config.seed << '\n'
    << "samples = " << outcome.global.samples << '\n'
    << "slots = " << outcome.global.slots << '\n'
    << "sacrps = " << fmt(outcome.global.sacrps, 10) << '\n'
    << "mse = " << fmt(outcome.global.mse, 10) << '\n'
    << "sacrps_regrouped = " << fmt(outcome.regrouped.sacrps, 10) << '\n'
    << "mse_regrouped = " << fmt(outcome.regrouped.mse, 10) << '\n'
    << "space = standardised\n"
    << "sacrps_form = pooled sum over slots of 2 pinball at levels 0.05..0.95 over 19 sum |x|\n"
    << "mse_form = mean over slots of squared median error\n"
    << "quantiles = linear interpolation at (S-1) level\n";

  auto ps = open_out(out_dir / "per_sample.csv");
  ps << provenance_line(config) << "\nsubject_id,stay_id,slots,sacrps,mse,sacrps_num,sacrps_den\n";
  for (const auto& r : outcome.rows)
    ps << r.subject_id << ',' << r.stay_id << ',' << r.slots << ',' << fmt(r.sacrps_value()) << ','
       << fmt(r.mse()) << ',' << fmt(r.sacrps.numerator, 17) << ','
       << fmt(r.sacrps.denominator, 17) << '\n';
  log << "evaluate: " << outcome.global.samples << " samples, " << outcome.global.slots
      << " slots, SACRPS " << fmt(outcome.global.sacrps, 6) << ", MSE "
      << fmt(outcome.global.mse, 6) << '\n';
  return outcome;
}

namespace {

std::optional<fs::path> locate(const fs::path& run_dir, const std::string& name) {
  if (fs::is_regular_file(run_dir / name)) return run_dir / name;
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(run_dir))
    if (e.is_directory() && e.path().filename() != "report") subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& d : subdirs)
    if (fs::is_regular_file(d / name)) return d / name;
  return std::nullopt;
}

// Comment lines and the header row are dropped.
std::vector<std::vector<std::string>> read_table(const fs::path& path,
                                                 std::vector<std::string>& header,
                                                 std::string& provenance) {
  std::ifstream in = open_in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    line = csv::chomp(line);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (provenance.empty()) provenance = line;
      continue;
    }
    if (header.empty())
      header = csv::split(line);
    else
      rows.push_back(csv::split(line));
  }
  return rows;
}

void write_histogram(const fs::path& path, const std::string& provenance,
                     const std::vector<double>& values, std::size_t bins) {
  const Histogram h = histogram(values, bins);
  auto out = open_out(path);
  out << provenance << "\n# skipped_non_finite=" << h.skipped << "\nbin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    out << fmt(h.edge(i)) << ',' << fmt(h.edge(i + 1)) << ',' << h.counts[i] << '\n';
}

std::size_t column(const std::vector<std::string>& header, const std::string& name,
                   const fs::path& path) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ParseError(path.string() + ": no column " + name);
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

ReportOutcome cmd_report(const fs::path& run_dir, std::ostream& log, std::size_t bins) {
  if (!fs::is_directory(run_dir)) throw IoError("run directory " + run_dir.string() + " not found");
  ReportOutcome outcome;
  outcome.dir = run_dir / "report";
  const auto loss = locate(run_dir, "loss.csv");
  const auto per_sample = locate(run_dir, "per_sample.csv");
  const auto quantiles = locate(run_dir, "forecast_quantiles.csv");
  const auto metrics = locate(run_dir, "metrics.txt");
  const auto train_summary = locate(run_dir, "train_summary.txt");
  const auto timing = locate(run_dir, "forecast_timing.csv");
  if (!loss && !per_sample && !quantiles && !metrics)
    throw DataError("nothing to report in " + run_dir.string() +
                    ": no loss.csv, per_sample.csv, forecast_quantiles.csv or metrics.txt");
  fs::create_directories(outcome.dir);

  std::ostringstream summary;
  summary << "run directory: " << run_dir.string() << '\n';
  auto note = [&](const std::string& file) { outcome.files.push_back(file); };

  if (train_summary) {
    summary << "\n[training] " << train_summary->string() << '\n';
    auto in = open_in(*train_summary);
    std::string line;
    while (std::getline(in, line)) summary << "  " << line << '\n';
  }
  if (loss) {
    std::vector<std::string> header;
    std::string prov;
    const auto rows = read_table(*loss, header, prov);
    auto out = open_out(outcome.dir / "loss_curve.csv");
    out << (prov.empty() ? "# config_hash=unknown" : prov) << "\nstep,train_loss,valid_loss\n";
    for (const auto& r : rows) {
      if (r.size() != 3) throw ParseError(loss->string() + ": malformed row");
      out << r[0] << ',' << r[1] << ',' << r[2] << '\n';
    }
    note("loss_curve.csv");
    summary << "\n[loss] " << rows.size() << " steps from " << loss->string() << '\n';
  }
  if (metrics) {
    summary << "\n[metrics] " << metrics->string() << '\n';
    for (const auto& [k, v] : read_manifest(*metrics)) summary << "  " << k << " = " << v << '\n';
  }
  if (per_sample) {
    std::vector<std::string> header;
    std::string prov;
    const auto rows = read_table(*per_sample, header, prov);
    const std::size_t cs = column(header, "sacrps", *per_sample);
    const std::size_t cm = column(header, "mse", *per_sample);
    std::vector<double> sac, mse;
    for (const auto& r : rows) {
      sac.push_back(std::stod(r.at(cs)));
      mse.push_back(std::stod(r.at(cm)));
    }
    write_histogram(outcome.dir / "hist_sacrps.csv", prov, sac, bins);
    write_histogram(outcome.dir / "hist_mse.csv", prov, mse, bins);
    note("hist_sacrps.csv");
    note("hist_mse.csv");
    auto line = [&](const char* name, const std::vector<double>& v) {
      const Distribution d = describe(v);
      summary << "  " << name << ": n=" << d.count << " min=" << fmt(d.min, 5)
              << " q1=" << fmt(d.q1, 5) << " median=" << fmt(d.median, 5)
              << " q3=" << fmt(d.q3, 5) << " max=" << fmt(d.max, 5) << '\n';
    };
    summary << "\n[per-sample metrics] " << rows.size() << " samples\n";
    line("sacrps", sac);
    line("mse", mse);
  }
  if (quantiles) {
    std::vector<std::string> header;
    std::string prov;
    const auto rows = read_table(*quantiles, header, prov);
    std::vector<std::size_t> keep;
    for (const char* name : {"subject_id", "stay_id", "slot", "feature", "time", "truth"})
      keep.push_back(column(header, name, *quantiles));
    for (int i = 1; i <= int(kQuantileLevels); ++i) {
      char name[8];
      std::snprintf(name, sizeof name, "q%02d", 5 * i);
      keep.push_back(column(header, name, *quantiles));
    }
    keep.push_back(column(header, "median", *quantiles));
    auto out = open_out(outcome.dir / "fan_chart.csv");
    out << prov << '\n';
    for (std::size_t k = 0; k < keep.size(); ++k) out << (k ? "," : "") << header[keep[k]];
    out << '\n';
    for (const auto& r : rows) {
      for (std::size_t k = 0; k < keep.size(); ++k) out << (k ? "," : "") << r.at(keep[k]);
      out << '\n';
    }
    note("fan_chart.csv");
    summary << "\n[forecasts] " << rows.size() << " target slots from " << quantiles->string()
            << '\n';
  }
  if (timing) {
    std::vector<std::string> header;
    std::string prov;
    const auto rows = read_table(*timing, header, prov);
    const std::size_t c = column(header, "seconds", *timing);
    std::vector<double> secs;
    for (const auto& r : rows) secs.push_back(std::stod(r.at(c)));
    const Distribution d = describe(secs);
    summary << "\n[inference time] " << d.count << " samples, median " << fmt(d.median, 4)
            << " s, max " << fmt(d.max, 4) << " s\n";
  }

  auto out = open_out(outcome.dir / "summary.txt");
  out << summary.str();
  note("summary.txt");
  log << "report: wrote " << outcome.files.size() << " files to " << outcome.dir.string() << '\n';
  return outcome;
}

}  // namespace tripcast

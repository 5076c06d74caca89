// tripcast: synth | preprocess | train | sample | evaluate | report | schedule | config
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tripcast/app/commands.hpp"
#include "tripcast/core/error.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, Common& c, bool needs_out = true) {
  sub->add_option("--config", c.config, "key = value configuration file");
  sub->add_option("--seed", c.seed, "seed, overriding the config");
  sub->add_option("--set", c.overrides, "extra key=value overrides (repeatable)");
  if (needs_out) sub->add_option("--out", c.out, "output path")->required();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace tripcast;
  CLI::App app{"Triplet diffusion forecaster for sparse ICU time series"};
  app.require_subcommand(1);

  Common common;
  std::string input, data, checkpoint, forecasts, run, catalog, topology;
  std::optional<std::size_t> samples, max_steps, overfit;
  std::optional<double> beta_t;

  auto* synth = app.add_subcommand("synth", "write a synthetic event log plus planted counts");
  add_common(synth, common);

  auto* pre = app.add_subcommand("preprocess", "event log -> train/valid/test triplet datasets");
  add_common(pre, common);
  pre->add_option("--input", input, "event CSV")->required();
  pre->add_option("--catalog", catalog, "feature catalog CSV (default: reference catalog)");

  auto* train = app.add_subcommand("train", "fit the denoiser");
  add_common(train, common);
  train->add_option("--data", data, "dataset directory from preprocess")->required();
  train->add_option("--checkpoint", checkpoint, "last.ckpt to resume from");
  train->add_option("--topology", topology, "a, b or c");
  train->add_option("--beta-t", beta_t, "final noise variance");
  train->add_option("--max-steps", max_steps, "training step budget");
  train->add_option("--overfit", overfit, "train and judge on the first N samples");

  auto* smp = app.add_subcommand("sample", "draw forecast paths for a split");
  add_common(smp, common);
  smp->add_option("--data", data, "dataset directory from preprocess")->required();
  smp->add_option("--checkpoint", checkpoint, "checkpoint (best.ckpt)")->required();
  smp->add_option("--samples", samples, "paths per forecast");

  auto* eval = app.add_subcommand("evaluate", "score forecasts");
  add_common(eval, common);
  eval->add_option("--forecasts", forecasts, "forecast_samples.csv or its directory")->required();

  auto* rep = app.add_subcommand("report", "summary and plot data for a run directory");
  rep->add_option("--run", run, "run directory")->required();

  auto* sched = app.add_subcommand("schedule", "print the noise schedule");
  add_common(sched, common, false);
  sched->add_option("--beta-t", beta_t, "final noise variance");

  auto* show = app.add_subcommand("config", "print the resolved configuration and its hash");
  add_common(show, common, false);
  show->add_option("--topology", topology, "a, b or c");
  show->add_option("--beta-t", beta_t, "final noise variance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error UsageError: " << e.what() << '\n';
    return 2;
  }

  try {
    RunConfig config = common.config.empty() ? RunConfig{} : load_config(common.config);
    for (const auto& kv : common.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (common.seed) config.seed = *common.seed;
    if (!topology.empty()) config.model.topology = parse_topology(topology);
    if (beta_t) config.schedule.beta_t = *beta_t;
    if (samples) config.sample.paths = *samples;
    if (max_steps) config.train.max_steps = *max_steps;
    if (overfit) config.train.overfit = *overfit;
    config.finalize();

    if (*synth) {
      cmd_synth(config, common.out, std::cout);
    } else if (*pre) {
      cmd_preprocess(config, input, common.out, std::cout,
                     catalog.empty() ? std::nullopt : std::optional<fs::path>(catalog));
    } else if (*train) {
      cmd_train(config, data, common.out, std::cout,
                checkpoint.empty() ? std::nullopt : std::optional<fs::path>(checkpoint));
    } else if (*smp) {
      cmd_sample(config, data, checkpoint, common.out, std::cout);
    } else if (*eval) {
      cmd_evaluate(config, forecasts, common.out, std::cout);
    } else if (*rep) {
      cmd_report(run, std::cout);
    } else if (*sched) {
      std::cout << config.make_schedule().dump();
    } else if (*show) {
      std::cout << config.to_text() << "# hash = " << config.hash() << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error " << e.kind() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error IoError: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error InternalError: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

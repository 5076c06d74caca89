#include "tripcast/app/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "tripcast/core/error.hpp"
#include "tripcast/core/rng.hpp"

namespace tripcast {
namespace {

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  // Shortest text that reads back to the same double.
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  const char* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end)
    throw ConfigError("config key " + key + ": cannot parse '" + text + "' as a number");
  return v;
}

Field size_field(const std::string& key, std::size_t& ref) {
  return {key, [&ref] { return std::to_string(ref); },
          [&ref, key](const std::string& v) { ref = parse_number<std::size_t>(key, v); }};
}

Field u64_field(const std::string& key, std::uint64_t& ref) {
  return {key, [&ref] { return std::to_string(ref); },
          [&ref, key](const std::string& v) { ref = parse_number<std::uint64_t>(key, v); }};
}

Field real_field(const std::string& key, double& ref) {
  return {key, [&ref] { return fmt(ref); },
          [&ref, key](const std::string& v) { ref = parse_number<double>(key, v); }};
}

std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f = {
      u64_field("seed", c.seed),
      size_field("data.capacity", c.capacity),
      size_field("data.target_capacity", c.target_capacity),
      size_field("schedule.steps", c.schedule.steps),
      real_field("schedule.beta1", c.schedule.beta1),
      real_field("schedule.beta_t", c.schedule.beta_t),
      {"schedule.kind", [&c] { return std::string(to_string(c.schedule.kind)); },
       [&c](const std::string& v) { c.schedule.kind = parse_schedule_kind(v); }},
      size_field("model.d_model", c.model.d_model),
      size_field("model.n_heads", c.model.n_heads),
      size_field("model.ff_dim", c.model.ff_dim),
      size_field("model.step_embed_dim", c.model.step_embed_dim),
      size_field("model.blocks", c.model.n_blocks),
      size_field("model.encoder_layers", c.model.encoder_layers),
      size_field("model.decoder_layers", c.model.decoder_layers),
      size_field("model.num_features", c.model.num_features),
      {"model.topology", [&c] { return std::string(to_string(c.model.topology)); },
       [&c](const std::string& v) { c.model.topology = parse_topology(v); }},
      size_field("train.batch", c.train.batch),
      real_field("train.lr", c.train.lr),
      size_field("train.max_steps", c.train.max_steps),
      size_field("train.eval_every", c.train.eval_every),
      size_field("train.patience", c.train.patience),
      size_field("train.valid_draws", c.train.valid_draws),
      size_field("train.overfit", c.train.overfit),
      size_field("sample.paths", c.sample.paths),
      {"sample.split", [&c] { return c.sample.split; },
       [&c](const std::string& v) { c.sample.split = v; }},
      size_field("sample.limit", c.sample.limit),
      size_field("synth.subjects", c.synth.subjects),
      size_field("synth.max_stays_per_subject", c.synth.max_stays_per_subject),
      real_field("synth.vital_rate", c.synth.vital_rate),
      real_field("synth.nontarget_rate", c.synth.nontarget_rate),
      real_field("synth.sudden_change_prob", c.synth.sudden_change_prob),
      real_field("synth.minor_fraction", c.synth.minor_fraction),
      real_field("synth.empty_conditional_fraction", c.synth.empty_conditional_fraction),
      real_field("synth.empty_target_fraction", c.synth.empty_target_fraction),
      real_field("synth.outlier_fraction", c.synth.outlier_fraction),
  };
  return f;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (auto& f : fields(*this))
    if (f.key == key) {
      f.set(value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::finalize() {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(capacity >= 1 && target_capacity >= 1, "data capacities must be positive");
  need(train.batch >= 1, "train.batch must be at least 1");
  need(train.lr > 0.0, "train.lr must be positive");
  need(train.eval_every >= 1, "train.eval_every must be at least 1");
  need(train.valid_draws >= 1, "train.valid_draws must be at least 1");
  need(sample.paths >= 1, "sample.paths must be at least 1");
  need(sample.split == "train" || sample.split == "valid" || sample.split == "test",
       "sample.split must be train, valid or test");
  model.capacity = capacity;
  model.target_capacity = target_capacity;
  model.diffusion_steps = schedule.steps;
  model.validate();
  (void)make_schedule();
}

std::string RunConfig::to_text() const {
  RunConfig copy = *this;
  std::vector<std::pair<std::string, std::string>> rows;
  for (auto& f : fields(copy)) rows.emplace_back(f.key, f.get());
  std::sort(rows.begin(), rows.end());
  std::string out;
  for (const auto& [k, v] : rows) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const { return hex64(fnv1a64(to_text())); }

DiffusionSchedule RunConfig::make_schedule() const {
  return tripcast::make_schedule(schedule.steps, schedule.beta1, schedule.beta_t, schedule.kind);
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    try {
      c.set(section.empty() ? key : section + "." + key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

}  // namespace tripcast

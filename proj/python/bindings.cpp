#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "tripcast/app/commands.hpp"
#include "tripcast/core/error.hpp"

namespace py = pybind11;
using namespace tripcast;

namespace {

template <typename T>
py::array_t<T> to_numpy(const std::vector<T>& v) {
  py::array_t<T> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

template <typename T>
using Dense = py::array_t<T, py::array::c_style | py::array::forcecast>;
using F32 = Dense<float>;
using F64 = Dense<double>;
using U8 = Dense<std::uint8_t>;

template <typename T>
std::vector<T> from_numpy(const Dense<T>& a) {
  return {a.data(), a.data() + a.size()};
}

py::dict triplets_dict(const std::vector<Triplet>& ts) {
  std::vector<std::int32_t> f;
  std::vector<float> t, v;
  std::vector<std::uint8_t> m;
  for (const auto& x : ts) {
    f.push_back(x.feature_id);
    t.push_back(x.time);
    v.push_back(x.value);
    m.push_back(x.mask);
  }
  py::dict d;
  d["feature"] = to_numpy(f);
  d["time"] = to_numpy(t);
  d["value"] = to_numpy(v);
  d["mask"] = to_numpy(m);
  return d;
}

py::dict forecast_dict(const ForecastResult& r) {
  py::dict d;
  d["subject_id"] = r.subject_id;
  d["stay_id"] = r.stay_id;
  d["seconds"] = r.seconds;
  py::list slots;
  for (const auto& s : r.slots) {
    py::dict sd;
    sd["feature_id"] = s.feature_id;
    sd["time"] = s.time;
    sd["truth"] = s.truth;
    sd["samples"] = to_numpy(s.samples);
    sd["raw"] = to_numpy(s.raw);
    slots.append(sd);
  }
  d["slots"] = slots;
  return d;
}

// The commands log to a string so Python callers get it back.
template <typename F>
auto logged(F&& f) {
  std::ostringstream log;
  auto out = f(log);
  return std::make_pair(std::move(out), log.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Triplet diffusion forecaster: schedule, model, commands and metrics";

  static PyObject* error_type = py::exception<Error>(m, "Error", PyExc_RuntimeError).inc_ref().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error_type, (e.kind() + ": " + e.what()).c_str());
    }
  });

  py::class_<DiffusionSchedule>(m, "Schedule")
      .def_readonly("T", &DiffusionSchedule::T)
      .def_property_readonly("beta", [](const DiffusionSchedule& s) { return to_numpy(s.beta); })
      .def_property_readonly("alpha_hat",
                             [](const DiffusionSchedule& s) { return to_numpy(s.alpha_hat); })
      .def_property_readonly("alpha", [](const DiffusionSchedule& s) { return to_numpy(s.alpha); })
      .def_property_readonly("sigma", [](const DiffusionSchedule& s) { return to_numpy(s.sigma); })
      .def("dump", &DiffusionSchedule::dump);

  m.def(
      "make_schedule",
      [](std::size_t T, double beta1, double betaT, const std::string& kind) {
        return make_schedule(T, beta1, betaT, parse_schedule_kind(kind));
      },
      py::arg("T") = 50, py::arg("beta1") = 1e-4, py::arg("beta_t") = 0.5,
      py::arg("kind") = "quadratic");

  m.def(
      "forward_noise",
      [](F32 x0, U8 mask, std::size_t t,
         F32 eps, const DiffusionSchedule& s) {
        return to_numpy(forward_noise(from_numpy(x0), from_numpy(mask), t, from_numpy(eps), s));
      },
      py::arg("x0"), py::arg("mask"), py::arg("t"), py::arg("eps"), py::arg("schedule"));

  m.def(
      "reverse_step",
      [](F32 xt, F32 eps_hat, std::size_t t, F32 z,
         const DiffusionSchedule& s, U8 mask) {
        return to_numpy(reverse_step(from_numpy(xt), from_numpy(eps_hat), t, from_numpy(z), s,
                                     from_numpy(mask)));
      },
      py::arg("x_t"), py::arg("eps_hat"), py::arg("t"), py::arg("z"), py::arg("schedule"),
      py::arg("mask"));

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("seed", &RunConfig::seed)
      .def("set", &RunConfig::set)
      .def("finalize", &RunConfig::finalize)
      .def("to_text", &RunConfig::to_text)
      .def("hash", &RunConfig::hash)
      .def("schedule", &RunConfig::make_schedule);
  m.def("parse_config", &parse_config, py::arg("text"), py::arg("origin") = "<config>");
  m.def("load_config", &load_config);

  m.def("read_dataset", [](const fs::path& path) {
    const TripletDataset ds = read_dataset(path);
    py::list out;
    for (const auto& s : ds.samples) {
      py::dict d;
      d["subject_id"] = s.subject_id;
      d["stay_id"] = s.stay_id;
      d["conditional"] = triplets_dict(s.conditional);
      d["target"] = triplets_dict(s.target);
      out.append(d);
    }
    return out;
  });

  m.def(
      "synth",
      [](const RunConfig& c, const fs::path& out) {
        auto [r, log] = logged([&](std::ostream& l) { return cmd_synth(c, out, l); });
        return py::make_tuple(r.truth.to_manifest(), log);
      },
      "Writes a synthetic event log; returns (planted counts, log).");
  m.def(
      "preprocess",
      [](const RunConfig& c, const fs::path& events, const fs::path& out) {
        auto [r, log] = logged([&](std::ostream& l) { return cmd_preprocess(c, events, out, l); });
        Manifest counts = r.report.to_manifest();
        counts["train_samples"] = std::to_string(r.train.samples.size());
        counts["valid_samples"] = std::to_string(r.valid.samples.size());
        counts["test_samples"] = std::to_string(r.test.samples.size());
        return py::make_tuple(counts, log);
      },
      "Runs the ingest pipeline; returns (discard counts, log).");
  m.def(
      "train",
      [](const RunConfig& c, const fs::path& data, const fs::path& out,
         std::optional<fs::path> resume) {
        auto [r, log] = logged([&](std::ostream& l) { return cmd_train(c, data, out, l, resume); });
        py::dict d;
        d["start_step"] = r.start_step;
        d["final_step"] = r.final_step;
        d["initial_valid"] = r.initial_valid;
        d["final_valid"] = r.final_valid;
        d["best_valid"] = r.best_valid;
        d["best_step"] = r.best_step;
        d["early_stopped"] = r.early_stopped;
        d["checkpoint_hash"] = r.checkpoint_hash;
        std::vector<double> train_loss;
        for (const auto& row : r.curve) train_loss.push_back(row.train_loss);
        d["train_loss"] = to_numpy(train_loss);
        return py::make_tuple(d, log);
      },
      py::arg("config"), py::arg("data"), py::arg("out"), py::arg("resume") = py::none());
  m.def(
      "sample",
      [](const RunConfig& c, const fs::path& data, const fs::path& ckpt, const fs::path& out) {
        auto [r, log] = logged([&](std::ostream& l) { return cmd_sample(c, data, ckpt, out, l); });
        py::list forecasts;
        for (const auto& f : r.forecasts) forecasts.append(forecast_dict(f));
        return py::make_tuple(forecasts, log);
      });
  m.def("evaluate", [](const RunConfig& c, const fs::path& forecasts, const fs::path& out) {
    auto [r, log] = logged([&](std::ostream& l) { return cmd_evaluate(c, forecasts, out, l); });
    py::dict d;
    d["samples"] = r.global.samples;
    d["slots"] = r.global.slots;
    d["sacrps"] = r.global.sacrps;
    d["mse"] = r.global.mse;
    d["sacrps_regrouped"] = r.regrouped.sacrps;
    d["mse_regrouped"] = r.regrouped.mse;
    return py::make_tuple(d, log);
  });
  m.def("report", [](const fs::path& run) {
    auto [r, log] = logged([&](std::ostream& l) { return cmd_report(run, l); });
    return py::make_tuple(r.files, log);
  });

  m.def("crps_gaussian", &crps_gaussian, py::arg("mu"), py::arg("sigma"), py::arg("x"));
  m.def(
      "quantiles",
      [](F64 samples) {
        const auto v = from_numpy(samples);
        const QuantileSummary q = summarize(std::span<const double>(v));
        py::dict d;
        d["q"] = to_numpy(std::vector<double>(q.q.begin(), q.q.end()));
        d["median"] = q.median;
        d["lo95"] = q.lo95;
        d["hi95"] = q.hi95;
        return d;
      },
      "19 empirical quantiles (levels 0.05..0.95), median and 95% interval.");
  m.def(
      "sacrps",
      [](F64 samples,
         F64 targets) {
        if (samples.ndim() != 2 || targets.ndim() != 1 || samples.shape(0) != targets.shape(0))
          throw ShapeError("sacrps expects samples (slots, paths) and targets (slots,)");
        const auto n = static_cast<std::size_t>(samples.shape(0));
        const auto s = static_cast<std::size_t>(samples.shape(1));
        std::vector<std::array<double, kQuantileLevels>> q(n);
        for (std::size_t i = 0; i < n; ++i)
          q[i] = summarize(std::span<const double>(samples.data() + i * s, s)).q;
        return sacrps(q, std::span<const double>(targets.data(), n));
      },
      py::arg("samples"), py::arg("targets"),
      "Pooled SACRPS of per-slot sample sets, shape (slots, paths).");

  m.attr("quantile_levels") = to_numpy(std::vector<double>(quantile_levels().begin(),
                                                           quantile_levels().end()));
}

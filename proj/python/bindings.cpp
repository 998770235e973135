#include "emgvoice/align.hpp"
#include "emgvoice/config.hpp"
#include "emgvoice/error.hpp"
#include "emgvoice/eval.hpp"
#include "emgvoice/features.hpp"
#include "emgvoice/pipeline.hpp"
#include "emgvoice/signals.hpp"
#include "emgvoice/synthetic.hpp"
#include "emgvoice/vocoder.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace emgvoice;

namespace {

FeatureSequence mfcc_sequence(const Eigen::MatrixXd& m) { return {m, FeatureKind::mfcc, false}; }

// Config values go through the same parser as files, so Python passes text.
PipelineConfig make_config(const py::dict& overrides) {
  PipelineConfig cfg;
  for (const auto& [k, v] : overrides) {
    std::string text;
    if (py::isinstance<py::bool_>(v)) text = v.cast<bool>() ? "true" : "false";
    else if (py::isinstance<py::str>(v)) text = nlohmann::json(v.cast<std::string>()).dump();
    else if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      text = "[";
      for (const auto& item : v) text += (text.size() > 1 ? ", " : "") + py::str(item).cast<std::string>();
      text += "]";
    } else text = py::str(v).cast<std::string>();
    apply_config(cfg, k.cast<std::string>(), text);
  }
  cfg.validate();
  return cfg;
}

PyObject* g_error = nullptr;

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "EMG-to-speech toolkit";

  // Carries a `kind` attribute: "config", "data" or "numeric".
  g_error = py::exception<Error>(m, "EmgvoiceError").release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const char* kind = e.kind() == ErrorKind::config ? "config" : e.kind() == ErrorKind::data ? "data" : "numeric";
      py::object exc = py::reinterpret_borrow<py::object>(g_error)(e.what());
      exc.attr("kind") = kind;
      PyErr_SetObject(g_error, exc.ptr());
    }
  });

  m.attr("EMG_SAMPLE_RATE") = kEmgSampleRate;
  m.attr("AUDIO_SAMPLE_RATE") = kAudioSampleRate;
  m.attr("MFCC_DIM") = kMfccDim;

  // signals
  m.def("preprocess_emg", [](const Eigen::MatrixXd& emg) { return preprocess_emg(emg); }, py::arg("emg"),
        "High-pass and mains notch filtering, zero phase. samples x channels at 1 kHz.");
  m.def(
      "preprocess_audio",
      [](const Eigen::VectorXd& audio, bool gate) {
        if (gate) return preprocess_audio(audio).samples;
        GateConfig g;
        const double peak = peak_rms(audio, static_cast<int>(g.rms_window_seconds * g.sample_rate));
        return Eigen::VectorXd(peak > 0 ? Eigen::VectorXd(audio * (g.target_peak_rms / peak)) : audio);
      },
      py::arg("audio"), py::arg("gate") = true);

  // features
  m.def("emg_features", [](const Eigen::MatrixXd& emg) { return emg_features(emg).data; }, py::arg("emg"),
        "frames x (14 * channels) at 100 Hz.");
  m.def("mfcc", [](const Eigen::VectorXd& audio) { return mfcc_features(audio).data; }, py::arg("audio"),
        "frames x 26 at 100 Hz from 16 kHz audio.");

  // alignment
  m.def(
      "dtw",
      [](const Eigen::MatrixXd& cost) {
        const auto a = dtw(cost);
        return py::make_tuple(a.path, a.mapping, a.total_cost);
      },
      py::arg("cost"), "Returns (path, mapping, total_cost).");
  py::class_<CcaProjection>(m, "CcaProjection")
      .def_readonly("correlations", &CcaProjection::correlations)
      .def_readonly("proj_s", &CcaProjection::proj_s)
      .def_readonly("proj_v", &CcaProjection::proj_v)
      .def("project_s", &CcaProjection::project_s)
      .def("project_v", &CcaProjection::project_v)
      .def_property_readonly("dims", &CcaProjection::dims);
  m.def("fit_cca", [](const Eigen::MatrixXd& s, const Eigen::MatrixXd& v, int dims) { return fit_cca(s, v, dims); },
        py::arg("silent"), py::arg("vocalized"), py::arg("dims") = 15);

  // vocoder
  m.def("mulaw_encode", py::overload_cast<const Eigen::Ref<const Eigen::VectorXd>&>(&mulaw_encode), py::arg("x"));
  m.def("mulaw_decode", py::overload_cast<const std::vector<int>&>(&mulaw_decode), py::arg("codes"));
  m.def(
      "griffin_lim",
      [](const Eigen::MatrixXd& mfcc, int iterations, std::uint64_t seed) {
        GriffinLimConfig cfg;
        cfg.iterations = iterations;
        cfg.seed = seed;
        return griffin_lim_invert(mfcc_sequence(mfcc), cfg);
      },
      py::arg("mfcc"), py::arg("iterations") = 60, py::arg("seed") = 1);

  // eval
  m.def("normalize_text", [](const std::string& s) { return normalize_text(s); }, py::arg("text"));
  m.def(
      "word_errors",
      [](const std::string& ref, const std::string& hyp) {
        const auto e = word_error_rate(normalize_text(ref), normalize_text(hyp));
        py::dict d;
        d["substitutions"] = e.substitutions;
        d["insertions"] = e.insertions;
        d["deletions"] = e.deletions;
        d["ref_length"] = e.ref_length;
        d["wer"] = e.wer();
        return d;
      },
      py::arg("reference"), py::arg("hypothesis"));

  // corpus and pipeline
  m.def(
      "make_synthetic_corpus",
      [](const fs::path& dir, int utterances, int nonparallel, std::uint64_t seed) {
        SyntheticConfig cfg;
        cfg.pairs = utterances;
        cfg.nonparallel = nonparallel;
        cfg.seed = seed;
        std::map<std::string, std::vector<int>> out;
        for (const auto& [id, w] : make_synthetic_corpus(dir, cfg)) out[id] = w.mapping;
        return out;
      },
      py::arg("dir"), py::arg("utterances") = 15, py::arg("nonparallel") = 0, py::arg("seed") = 1,
      "Writes a toy corpus; returns silent id -> ground-truth frame mapping.");

  m.def("config_keys", &config_keys);
  m.def(
      "resolve_config", [](const py::dict& overrides) { return json_to_py(to_json(make_config(overrides))); },
      py::arg("overrides") = py::dict());

  py::class_<Workspace>(m, "Workspace")
      .def(py::init([](const py::dict& overrides, bool force, std::function<void(const std::string&)> log) {
             StageLogger logger;
             if (log) logger.sink = log;
             return std::make_unique<Workspace>(make_config(overrides), force, logger);
           }),
           py::arg("config") = py::dict(), py::arg("force") = false, py::arg("log") = nullptr)
      .def("preprocess", [](Workspace& w) { return w.preprocess().dir; }, py::call_guard<py::gil_scoped_release>())
      .def("featurize", [](Workspace& w) { return w.featurize().dir; }, py::call_guard<py::gil_scoped_release>())
      .def("align", [](Workspace& w) { return w.align().dir; }, py::call_guard<py::gil_scoped_release>())
      .def("train", [](Workspace& w) { return w.train().dir; }, py::call_guard<py::gil_scoped_release>())
      .def("train_vocoder", [](Workspace& w) { return w.train_vocoder().dir; },
           py::call_guard<py::gil_scoped_release>())
      .def("synthesize", [](Workspace& w) { return w.synthesize().dir; }, py::call_guard<py::gil_scoped_release>())
      .def("evaluate", [](Workspace& w) { return w.evaluate().dir; }, py::call_guard<py::gil_scoped_release>())
      .def("report", [](const Workspace& w) { return json_to_py(w.report().to_json()); })
      .def("train_summary", [](const Workspace& w) { return json_to_py(w.train_summary()); })
      .def("features",
           [](const Workspace& w) {
             py::dict out;
             for (const auto& [id, f] : w.features()) {
               py::dict d;
               d["emg"] = f.emg.data;
               if (f.audio) d["mfcc"] = f.audio->data;
               out[py::str(id)] = d;
             }
             return out;
           });
}

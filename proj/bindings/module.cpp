// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <string>
#include <algorithm>
#include <vector>

#include "icn/audio.hpp"
#include "icn/compress.hpp"
#include "icn/dsp.hpp"
#include "icn/error.hpp"
#include "icn/model.hpp"
#include "icn/pooling.hpp"
#include "icn/synth.hpp"
#include "icn/train.hpp"

namespace py = pybind11;
using namespace icn;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Tensor t;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) t.shape.push_back(a.shape(i));
  t.data.assign(a.data(), a.data() + a.size());
  return t;
}

py::array_t<float> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> a(shape);
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

py::array_t<float> vec_to_array(const std::vector<float>& v) {
  py::array_t<float> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

train::RunConfig feature_config(double clip_seconds, int n_mels) {
  train::RunConfig cfg;
  cfg.clip_seconds = clip_seconds;
  cfg.n_mels = n_mels;
  return cfg;
}

// Thin owner so Python sees one object for build/forward/save/quantize.
struct PyModel {
  models::Model model;

  static PyModel build(const std::string& arch, int64_t width_num, int64_t width_den,
                       int n_mels, int n_classes, const std::string& pool, int attn_heads,
                       uint64_t seed) {
    models::ModelConfig cfg;
    cfg.arch = models::arch_from_name(arch);
    cfg.width_mult = {width_num, width_den};
    cfg.n_mels = n_mels;
    cfg.n_classes = n_classes;
    cfg.pool = pooling::pool_kind_from_name(pool);
    cfg.attn_heads = attn_heads;
    return PyModel{models::build_model(cfg, seed)};
  }

  static PyModel load(const std::string& path) { return PyModel{models::load_model(path)}; }
  void save(const std::string& path) const { models::save_model(model, path); }

  py::array_t<float> forward_probs(const FloatArray& batch) {
    return to_array(model.forward_probs(to_tensor(batch), false));
  }

  PyModel quantize() const { return PyModel{compress::quantize_model(model)}; }

  int64_t param_count() { return model.param_count(); }
  int64_t serialized_bytes() { return models::model_size(model).serialized_bytes; }
  bool quantized() const { return model.quantized; }
  std::string arch() const { return models::arch_name(model.config.arch); }
  std::string pool() const { return pooling::pool_kind_name(model.config.pool); }
  int n_classes() const { return model.config.n_classes; }
  int n_mels() const { return model.config.n_mels; }
};

}  // namespace

PYBIND11_MODULE(_infantcrynet, m) {
  m.doc() = "Infant cry analysis pipeline: features, pooling heads, models, compression";

  py::register_exception<Error>(m, "PipelineError");

  // ---- audio I/O ------------------------------------------------------------
  m.def(
      "load_wav",
      [](const std::string& path, bool strict) {
        const AudioClip c = load_wav(path, strict);
        return py::make_tuple(vec_to_array(c.samples), c.sample_rate_hz);
      },
      py::arg("path"), py::arg("strict") = true,
      "Read a PCM16 mono WAV; returns (samples in [-1, 1], sample_rate_hz).");
  m.def(
      "save_wav",
      [](const std::string& path, const FloatArray& samples, int sample_rate_hz) {
        AudioClip c;
        c.samples.assign(samples.data(), samples.data() + samples.size());
        c.sample_rate_hz = sample_rate_hz;
        save_wav(path, c);
      },
      py::arg("path"), py::arg("samples"), py::arg("sample_rate_hz") = kPipelineSampleRate);

  // ---- features -------------------------------------------------------------
  m.def(
      "log_mel",
      [](const FloatArray& samples, int n_mels) {
        AudioClip c;
        c.samples.assign(samples.data(), samples.data() + samples.size());
        return to_array(log_mel(c, train::default_stft(), train::default_filterbank(n_mels)));
      },
      py::arg("samples"), py::arg("n_mels") = 64,
      "Log-mel features (frames x n_mels) of 16 kHz samples.");
  m.def(
      "featurize",
      [](const std::string& path, double clip_seconds, int n_mels) {
        return to_array(
            train::featurize_clip(load_wav(path), feature_config(clip_seconds, n_mels)));
      },
      py::arg("path"), py::arg("clip_seconds") = 2.0, py::arg("n_mels") = 64,
      "Load a WAV, pad or truncate, and return its log-mel features.");

  // ---- pooling heads --------------------------------------------------------
  m.def("pool_max", [](const FloatArray& H) { return vec_to_array(pooling::pool_max(to_tensor(H))); });
  m.def("pool_avg", [](const FloatArray& H) { return vec_to_array(pooling::pool_avg(to_tensor(H))); });
  m.def("pool_add", [](const FloatArray& H) { return vec_to_array(pooling::pool_add(to_tensor(H))); });
  m.def(
      "pool_statistic",
      [](const FloatArray& H, const FloatArray& fc_weight, const FloatArray& fc_bias) {
        return vec_to_array(
            pooling::pool_statistic(to_tensor(H), to_tensor(fc_weight), to_tensor(fc_bias)));
      },
      py::arg("H"), py::arg("fc_weight"), py::arg("fc_bias"));
  m.def(
      "pool_attention",
      [](const FloatArray& H, const FloatArray& heads) {
        return vec_to_array(pooling::pool_attention(to_tensor(H), to_tensor(heads)));
      },
      py::arg("H"), py::arg("heads"));

  // ---- distillation loss ----------------------------------------------------
  m.def(
      "kd_loss",
      [](const FloatArray& student_logits, const FloatArray& teacher_logits,
         const std::vector<int>& labels, double temperature, double lambda) {
        auto [loss, grad] = compress::kd_loss(to_tensor(student_logits),
                                              to_tensor(teacher_logits), labels, temperature,
                                              lambda);
        return py::make_tuple(loss, to_array(grad));
      },
      py::arg("student_logits"), py::arg("teacher_logits"), py::arg("labels"),
      py::arg("temperature") = 2.0, py::arg("lambda_") = 0.5,
      "Distillation loss and its gradient w.r.t. the student logits.");

  // ---- synthetic data -------------------------------------------------------
  m.def(
      "gen_dataset",
      [](const std::string& task, int n_per_class, uint64_t seed, const std::string& out_dir,
         double duration_s) {
        const synth::DatasetPaths p =
            synth::gen_dataset(synth::task_from_name(task), n_per_class, seed, out_dir,
                               duration_s);
        return py::make_tuple(p.manifest_csv, p.split_csv);
      },
      py::arg("task"), py::arg("n_per_class"), py::arg("seed"), py::arg("out_dir"),
      py::arg("duration_s") = 2.0,
      "Write a balanced synthetic corpus; returns (manifest_csv, split_csv).");
  m.def(
      "cry_clip",
      [](int class_id, double duration_s, uint64_t seed) {
        return vec_to_array(
            synth::gen_clip(synth::reason_class_spec(class_id, duration_s, seed)).clip.samples);
      },
      py::arg("class_id"), py::arg("duration_s") = 2.0, py::arg("seed") = 0);
  m.def("task_labels", [](const std::string& task) {
    return synth::task_labels(synth::task_from_name(task));
  });

  // ---- model ----------------------------------------------------------------
  py::class_<PyModel>(m, "Model")
      .def_static("build", &PyModel::build, py::arg("arch") = "CNN10",
                  py::arg("width_num") = 1, py::arg("width_den") = 8, py::arg("n_mels") = 64,
                  py::arg("n_classes") = 2, py::arg("pool") = "avg",
                  py::arg("attn_heads") = 4, py::arg("seed") = 0)
      .def_static("load", &PyModel::load, py::arg("path"))
      .def("save", &PyModel::save, py::arg("path"))
      .def("forward_probs", &PyModel::forward_probs, py::arg("batch"),
           "Class probabilities for a batch shaped N x 1 x frames x n_mels.")
      .def("quantize", &PyModel::quantize)
      .def_property_readonly("param_count", &PyModel::param_count)
      .def_property_readonly("serialized_bytes", &PyModel::serialized_bytes)
      .def_property_readonly("quantized", &PyModel::quantized)
      .def_property_readonly("arch", &PyModel::arch)
      .def_property_readonly("pool", &PyModel::pool)
      .def_property_readonly("n_classes", &PyModel::n_classes)
      .def_property_readonly("n_mels", &PyModel::n_mels);
}

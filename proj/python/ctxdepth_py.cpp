// Python bindings for the numerical core. Arrays cross the boundary as
// float64 numpy arrays (copied).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ctxdepth/attention.hpp"
#include "ctxdepth/discretization.hpp"
#include "ctxdepth/error.hpp"
#include "ctxdepth/gradcheck.hpp"
#include "ctxdepth/losses.hpp"
#include "ctxdepth/metrics.hpp"
#include "ctxdepth/ops.hpp"
#include "ctxdepth/scene.hpp"

namespace py = pybind11;
using namespace ctxdepth;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using BoolArray = py::array_t<bool, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<long long, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

template <typename T>
Array vec_array(const std::vector<T>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Mask to_mask(const std::optional<BoolArray>& m) {
  if (!m) return {};
  Mask out(static_cast<std::size_t>(m->size()));
  const bool* p = m->data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] ? 1 : 0;
  return out;
}

std::vector<std::size_t> to_labels(const LabelArray& a) {
  std::vector<std::size_t> out(static_cast<std::size_t>(a.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.data()[i] < 0) throw ParameterError("labels must be non-negative");
    out[i] = static_cast<std::size_t>(a.data()[i]);
  }
  return out;
}

py::dict inference_dict(const InferenceResult& r) {
  py::dict d;
  d["label"] = vec_array(r.label);
  d["mass"] = vec_array(r.mass);
  d["fraction"] = vec_array(r.fraction);
  d["depth"] = vec_array(r.depth);
  return d;
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  d["delta1"] = r.delta1;
  d["delta2"] = r.delta2;
  d["delta3"] = r.delta3;
  d["rmse"] = r.rmse;
  d["rmse_log"] = r.rmse_log;
  d["abs_rel"] = r.abs_rel;
  d["sq_rel"] = r.sq_rel;
  d["n_valid"] = r.n_valid;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ctxdepth, m) {
  m.doc() = "Depth estimation with attention-based context aggregation";

  // Argument errors derive from both the package base and ValueError.
  const auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  const py::tuple argument_bases = py::make_tuple(error, py::handle(PyExc_ValueError));
  py::register_exception<ParameterError>(m, "ParameterError", argument_bases);
  py::register_exception<DimensionError>(m, "DimensionError", argument_bases);
  py::register_exception<DomainError>(m, "DomainError", argument_bases);

  py::class_<DepthDiscretization>(m, "Discretization")
      .def(py::init(&build_discretization), py::arg("d_min"), py::arg("d_max"), py::arg("bins") = kDefaultBins)
      .def_readonly("d_min", &DepthDiscretization::d_min)
      .def_readonly("d_max", &DepthDiscretization::d_max)
      .def_readonly("bins", &DepthDiscretization::bins)
      .def_property_readonly("edges", [](const DepthDiscretization& d) { return vec_array(d.edges); })
      .def("log_step", &DepthDiscretization::log_step)
      .def("midpoint", &DepthDiscretization::midpoint, py::arg("label"))
      .def("quantize", [](const DepthDiscretization& d, double depth) { return quantize_depth(depth, d); });

  m.def("ordinal_encode", [](std::size_t label, std::size_t bins) { return vec_array(ordinal_encode(label, bins)); },
        py::arg("label"), py::arg("bins"));
  m.def("ordinal_probabilities", [](const Array& logits) { return to_array(make_ordinal_output(to_tensor(logits)).probs); },
        py::arg("logits"), "P(l > k) from N x 2K logits.");
  m.def("hard_infer",
        [](const Array& probs, const DepthDiscretization& d) {
          return inference_dict(hard_infer(ordinal_output_from_probs(to_tensor(probs)), d));
        },
        py::arg("probs"), py::arg("disc"));
  m.def("soft_infer",
        [](const Array& probs, const DepthDiscretization& d) {
          return inference_dict(soft_infer(ordinal_output_from_probs(to_tensor(probs)), d));
        },
        py::arg("probs"), py::arg("disc"));
  m.def("ce_hard_infer", [](const Array& p, const DepthDiscretization& d) { return vec_array(ce_hard_infer(to_tensor(p), d)); },
        py::arg("classprobs"), py::arg("disc"));
  m.def("ce_soft_infer", [](const Array& p, const DepthDiscretization& d) { return vec_array(ce_soft_infer(to_tensor(p), d)); },
        py::arg("classprobs"), py::arg("disc"));

  m.def("softmax_rows", [](const Array& x) { return to_array(softmax_rows(to_tensor(x))); }, py::arg("logits"));
  m.def("attention_weights",
        [](const Array& key, const Array& query) {
          return to_array(attention_weights(attention_logits(to_tensor(key), to_tensor(query))));
        },
        py::arg("key"), py::arg("query"));
  m.def("attend", [](const Array& w, const Array& v) { return to_array(attend(to_tensor(w), to_tensor(v))); },
        py::arg("weights"), py::arg("values"));
  m.def("gt_attention_weights",
        [](const Array& depths, double d_max, const std::optional<BoolArray>& valid) {
          return to_array(gt_attention_weights(std::vector<double>(depths.data(), depths.data() + depths.size()), d_max,
                                               to_mask(valid)));
        },
        py::arg("depths"), py::arg("d_max"), py::arg("valid") = py::none());

  m.def("attention_loss",
        [](const Array& w, const Array& target, const std::optional<BoolArray>& valid_rows) {
          return attention_loss(to_tensor(w), to_tensor(target), to_mask(valid_rows));
        },
        py::arg("weights"), py::arg("target"), py::arg("valid_rows") = py::none());
  m.def("ordinal_loss",
        [](const Array& logits, const LabelArray& labels,
           const std::optional<BoolArray>& valid) {
          const auto l = to_labels(labels);
          return ordinal_loss(to_tensor(logits), l, to_mask(valid));
        },
        py::arg("logits"), py::arg("labels"), py::arg("valid") = py::none());
  m.def("cross_entropy_loss",
        [](const Array& logits, const LabelArray& labels,
           const std::optional<BoolArray>& valid) {
          const auto l = to_labels(labels);
          return cross_entropy_loss(to_tensor(logits), l, to_mask(valid));
        },
        py::arg("logits"), py::arg("labels"), py::arg("valid") = py::none());

  m.def("evaluate",
        [](const Array& pred, const Array& gt, const std::optional<BoolArray>& valid) {
          if (pred.size() != gt.size()) throw DimensionError("pred and gt sizes differ");
          return report_dict(evaluate(std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())),
                                      std::span<const double>(gt.data(), static_cast<std::size_t>(gt.size())),
                                      to_mask(valid)));
        },
        py::arg("pred"), py::arg("gt"), py::arg("valid") = py::none());
  m.def("confusion_matrix",
        [](const LabelArray& pred,
           const LabelArray& gt, std::size_t bins,
           const std::optional<BoolArray>& valid) {
          const auto p = to_labels(pred), g = to_labels(gt);
          return to_array(confusion_matrix(p, g, to_mask(valid), bins));
        },
        py::arg("pred"), py::arg("gt"), py::arg("bins"), py::arg("valid") = py::none());
  m.def("diagonal_mass", [](const Array& c) { return diagonal_mass(to_tensor(c)); }, py::arg("confusion"));

  py::class_<SceneConfig>(m, "SceneConfig")
      .def(py::init<>())
      .def_readwrite("height", &SceneConfig::height)
      .def_readwrite("width", &SceneConfig::width)
      .def_readwrite("d_min", &SceneConfig::d_min)
      .def_readwrite("d_max", &SceneConfig::d_max)
      .def_readwrite("min_objects", &SceneConfig::min_objects)
      .def_readwrite("max_objects", &SceneConfig::max_objects)
      .def_readwrite("texture_amplitude", &SceneConfig::texture_amplitude)
      .def_readwrite("texture_period_min", &SceneConfig::texture_period_min)
      .def_readwrite("texture_period_max", &SceneConfig::texture_period_max)
      .def_readwrite("max_jump_fraction", &SceneConfig::max_jump_fraction)
      .def_readwrite("smoothness_bins", &SceneConfig::smoothness_bins);

  m.def("generate_scene",
        [](std::uint64_t seed, const SceneConfig& cfg) {
          const auto s = generate_scene(seed, cfg);
          py::dict d;
          d["rgb"] = to_array(s.rgb);
          Array depth({static_cast<py::ssize_t>(s.height), static_cast<py::ssize_t>(s.width)});
          std::copy(s.depth.begin(), s.depth.end(), depth.mutable_data());
          py::array_t<bool> valid({static_cast<py::ssize_t>(s.height), static_cast<py::ssize_t>(s.width)});
          for (std::size_t i = 0; i < s.valid.size(); ++i) valid.mutable_data()[i] = s.valid[i] != 0;
          d["depth"] = depth;
          d["valid"] = valid;
          return d;
        },
        py::arg("seed"), py::arg("config") = SceneConfig{});

  m.def("run_gradchecks",
        [](const std::string& scope) {
          py::list out;
          for (const auto& r : run_gradchecks(scope)) {
            py::dict d;
            d["name"] = r.name;
            d["max_rel_error"] = r.max_rel_error;
            d["tolerance"] = r.tolerance;
            d["passed"] = r.passed;
            out.append(d);
          }
          return out;
        },
        py::arg("scope") = "all");
}

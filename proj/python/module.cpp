#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <numeric>
#include <random>

#include "polyfuse/commands.hpp"
#include "polyfuse/verify.hpp"

namespace py = pybind11;
using namespace polyfuse;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor(std::move(shape), std::move(data));
}

Array to_array(const Tensor& t) {
  Array a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

nlohmann::json parse_json(const std::string& text) { return text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text); }

// Python's json module converts dicts; keep the C++ side string-based.
py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
std::string from_python(const py::object& o) {
  return o.is_none() ? std::string() : py::module_::import("json").attr("dumps")(o).cast<std::string>();
}

struct PyFusion {
  ParameterStore store;
  std::unique_ptr<fusion::FusionLayer> layer;
};

struct PyDataset {
  SegmentDataset data;
};

Batch to_batch(const Array& eeg, const Array& oxy, const Array& deoxy) {
  Batch b{to_tensor(eeg), to_tensor(oxy), to_tensor(deoxy), {}};
  b.labels.assign(b.eeg.dim(0), 0);
  return b;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Tri-modal fusion classifiers: tensor kernels, fusion layers, models and experiments";
  m.attr("__version__") = POLYFUSE_VERSION;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<fusion::GuardError>(m, "GuardError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);

  m.def("fuse_linear", [](const Array& a, const Array& b, const Array& c, const Array& w) {
    return to_array(fusion::fuse_linear(to_tensor(a), to_tensor(b), to_tensor(c), to_tensor(w)));
  });
  m.def("fuse_tensor_full", [](const Array& a, const Array& b, const Array& c, const Array& w) {
    return to_array(fusion::fuse_tensor_full(to_tensor(a), to_tensor(b), to_tensor(c), to_tensor(w)));
  });
  m.def("fuse_polynomial_full",
        [](const Array& z, const Array& w) { return to_array(fusion::fuse_polynomial_full(to_tensor(z), to_tensor(w))); });
  m.def(
      "reconstruct_full",
      [](const std::vector<Array>& factors, const Array& weights) {
        std::vector<Tensor> fs;
        for (const auto& f : factors) fs.push_back(to_tensor(f));
        return to_array(fusion::reconstruct_full(fs, to_tensor(weights)));
      },
      "Dense weight from factors [D_k, R, O] and rank weights [R].");
  m.def("param_count",
        [](const py::object& spec) { return fusion::param_count(fusion_spec_from_json(parse_json(from_python(spec)))); },
        "Learned scalars of a fusion layer described by a dict.");

  py::class_<PyFusion>(m, "FusionLayer")
      .def(py::init([](const py::object& spec, std::uint64_t seed) {
             auto f = std::make_unique<PyFusion>();
             std::mt19937_64 rng(seed);
             f->layer = std::make_unique<fusion::FusionLayer>(fusion_spec_from_json(parse_json(from_python(spec))),
                                                              f->store, "", rng);
             return f;
           }),
           py::arg("spec"), py::arg("seed") = 1)
      .def_property_readonly("spec", [](const PyFusion& f) { return to_python(fusion_spec_to_json(f.layer->spec())); })
      .def("apply",
           [](const PyFusion& f, const Array& a, const Array& b, const Array& c) {
             return to_array(f.layer->apply(to_tensor(a), to_tensor(b), to_tensor(c)));
           })
      .def("materialize", [](const PyFusion& f) { return to_array(f.layer->materialize()); })
      .def("parameters",
           [](const PyFusion& f) {
             py::dict d;
             for (const auto& n : f.store.names()) d[py::str(n)] = to_array(f.store.at(n).value);
             return d;
           })
      .def("set_parameter", [](PyFusion& f, const std::string& name, const Array& value) {
        Parameter& p = f.store.at(name);
        Tensor t = to_tensor(value);
        if (t.shape() != p.value.shape()) throw std::invalid_argument("shape mismatch for " + name);
        p.value = std::move(t);
      });

  py::class_<Model>(m, "Model")
      .def(py::init([](const py::object& spec, std::uint64_t seed) {
             return Model(model_spec_from_json(parse_json(from_python(spec))), seed);
           }),
           py::arg("spec") = py::none(), py::arg("seed") = 1)
      .def_property_readonly("name", [](const Model& mo) { return mo.spec().name(); })
      .def_property_readonly("spec", [](const Model& mo) { return to_python(model_spec_to_json(mo.spec())); })
      .def("parameter_count", &Model::parameter_count)
      .def("predict_proba", [](const Model& mo, const Array& eeg, const Array& oxy, const Array& deoxy) {
        return to_array(mo.predict_proba(to_batch(eeg, oxy, deoxy)));
      });

  py::class_<PyDataset>(m, "Dataset")
      .def_static("synthetic",
                  [](const py::object& spec, std::uint64_t seed) {
                    return PyDataset{synth_dataset(synthetic_spec_from_json(parse_json(from_python(spec))), seed)};
                  },
                  py::arg("spec") = py::none(), py::arg("seed") = 1)
      .def_static("load", [](const std::string& manifest) { return PyDataset{load_manifest(manifest)}; })
      .def("__len__", [](const PyDataset& d) { return d.data.size(); })
      .def_property_readonly("labels",
                             [](const PyDataset& d) {
                               std::vector<int> out(d.data.size());
                               for (std::size_t i = 0; i < out.size(); ++i) out[i] = d.data.label(i);
                               return out;
                             })
      .def_property_readonly("offsets",
                             [](const PyDataset& d) {
                               std::vector<int> out(d.data.size());
                               for (std::size_t i = 0; i < out.size(); ++i) out[i] = d.data.offset(i);
                               return out;
                             })
      .def("arrays", [](const PyDataset& d) {
        std::vector<std::size_t> all(d.data.size());
        std::iota(all.begin(), all.end(), 0);
        const Batch b = d.data.batch(all);
        return py::make_tuple(to_array(b.eeg), to_array(b.oxy), to_array(b.deoxy));
      });

  m.def(
      "cross_validate",
      [](const py::object& config) {
        const RunConfig c = run_config_from_json(parse_json(from_python(config)));
        CvReport report;
        {
          py::gil_scoped_release release;
          const SegmentDataset data = cli::load_data(c);
          CvOptions opt{c.folds, c.run_folds, c.seed, c.jobs};
          report = cross_validate(cli::model_for(c, data.shape()), data, c.trainer, opt,
                                  {{"version", POLYFUSE_VERSION}, {"run_config", run_config_to_json(c)}});
        }
        return to_python(report.to_json());
      },
      py::arg("config"), "Runs cross-validation from a run-config dict and returns the report.");

  m.def(
      "verify",
      [](const std::string& filter, std::uint64_t seed) {
        VerifyOptions opt;
        opt.filter = filter;
        opt.seed = seed;
        py::list rows;
        for (const auto& r : run_verify(opt))
          rows.append(py::dict(py::arg("name") = r.name, py::arg("passed") = r.passed, py::arg("detail") = r.detail));
        return rows;
      },
      py::arg("filter") = "", py::arg("seed") = 1);
}

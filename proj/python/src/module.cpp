#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "dadee/errors.hpp"
#include "dadee/pipeline.hpp"

namespace py = pybind11;
using namespace dadee;

namespace {

const Corpus& split(const PreparedData& data, const std::string& name) {
  if (name == "source_train") return data.source_train;
  if (name == "source_dev") return data.source_dev;
  if (name == "source_test") return data.source_test;
  if (name == "target_test") return data.target_test;
  throw ValidationError("unknown split '" + name + "'; expected source_train, source_dev, source_test or target_test");
}

py::array_t<double> to_array(const FeatureMatrix& rows) {
  const std::size_t d = rows.empty() ? 0 : rows.front().size();
  py::array_t<double> out({rows.size(), d});
  auto view = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < d; ++k) view(i, k) = rows[i][k];
  return out;
}

FeatureMatrix from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ValidationError("features must be a 2-d array");
  const auto view = a.unchecked<2>();
  FeatureMatrix rows(static_cast<std::size_t>(view.shape(0)), std::vector<double>(static_cast<std::size_t>(view.shape(1))));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k) rows[i][k] = view(i, k);
  return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "DAdEE core bindings";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<ExperimentConfig>(m, "Config")
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_readwrite("alpha_space", &ExperimentConfig::alpha_space)
      .def_readwrite("output_dir", &ExperimentConfig::output_dir)
      .def_property(
          "kd_weight", [](const ExperimentConfig& c) { return c.adapt.kd_weight; },
          [](ExperimentConfig& c, double w) { c.adapt.kd_weight = w; })
      .def_property_readonly("num_layers", [](const ExperimentConfig& c) { return c.encoder.num_layers; })
      .def("validate", &ExperimentConfig::validate)
      .def("to_json", &config_to_json)
      .def("digest", &config_digest);

  m.def("load_config", &load_config, py::arg("path"));
  m.def("parse_config", &config_from_json, py::arg("text"), py::arg("base_dir") = std::filesystem::path{});

  py::class_<PreparedData>(m, "Data")
      .def_property_readonly("vocab_size", [](const PreparedData& d) { return d.vocab.size(); })
      .def("encode", [](const PreparedData& d, const std::string& text) {
        return d.vocab.encode(text, d.encoder.max_seq_len);
      })
      .def("size", [](const PreparedData& d, const std::string& name) { return split(d, name).size(); })
      .def_property_readonly("target_train_size", [](const PreparedData& d) { return d.target_train.size(); })
      .def("examples", [](const PreparedData& d, const std::string& name) {
        std::vector<std::pair<std::vector<TokenId>, std::optional<std::size_t>>> out;
        for (const auto& e : split(d, name).examples) out.emplace_back(e.ids, e.label);
        return out;
      });

  m.def("prepare_data", &prepare_data, py::arg("config"), py::arg("seed"));

  py::class_<ExitDecision>(m, "ExitDecision")
      .def_readonly("exit_layer", &ExitDecision::exit_layer)
      .def_readonly("label", &ExitDecision::label)
      .def_readonly("confidence", &ExitDecision::confidence)
      .def("__repr__", [](const ExitDecision& e) {
        return "ExitDecision(exit_layer=" + std::to_string(e.exit_layer) + ", label=" + std::to_string(e.label) +
               ", confidence=" + std::to_string(e.confidence) + ")";
      });

  py::class_<SweepPoint>(m, "SweepPoint")
      .def_readonly("alpha", &SweepPoint::alpha)
      .def_readonly("accuracy", &SweepPoint::accuracy)
      .def_readonly("speedup", &SweepPoint::speedup)
      .def_readonly("histogram", &SweepPoint::histogram);

  py::class_<EncoderBundle, std::shared_ptr<EncoderBundle>>(m, "Model")
      .def_property_readonly("num_layers", [](const EncoderBundle& b) { return b.config.num_layers; })
      .def_property_readonly("vocab_size", [](const EncoderBundle& b) { return b.config.vocab_size; })
      .def(
          "infer",
          [](const EncoderBundle& b, const std::vector<TokenId>& ids, double alpha) { return infer_one(b, ids, alpha); },
          py::arg("token_ids"), py::arg("alpha"))
      .def(
          "exit_probabilities",
          [](const EncoderBundle& b, const std::vector<TokenId>& ids) {
            const auto out = encode(b, ids);
            std::vector<std::vector<double>> probs;
            for (const auto& p : out.probs) probs.emplace_back(p.data().begin(), p.data().end());
            return probs;
          },
          py::arg("token_ids"))
      .def(
          "per_exit_accuracy",
          [](const EncoderBundle& b, const PreparedData& d, const std::string& name) {
            return per_exit_accuracy(b, split(d, name));
          },
          py::arg("data"), py::arg("split"))
      .def(
          "sweep",
          [](const EncoderBundle& b, const PreparedData& d, const std::string& name, const std::vector<double>& alphas) {
            return sweep_alpha(b, split(d, name), alphas).points;
          },
          py::arg("data"), py::arg("split"), py::arg("alphas") = kAlphaSearchSpace)
      .def(
          "features",
          [](const EncoderBundle& b, const PreparedData& d, const std::string& name, std::size_t layer) {
            return to_array(pooled_features(b, split(d, name), layer));
          },
          py::arg("data"), py::arg("split"), py::arg("layer"));

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("model", [](const Checkpoint& c) { return std::make_shared<EncoderBundle>(c.bundle); })
      .def_property_readonly("phase", [](const Checkpoint& c) { return to_string(c.provenance.phase); })
      .def_property_readonly("seed", [](const Checkpoint& c) { return c.provenance.seed; })
      .def_property_readonly("config_digest", [](const Checkpoint& c) { return c.provenance.config_digest; });

  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def("train_source", &cmd_train_source, py::arg("config"), py::arg("out"));
  m.def("adapt", &cmd_adapt, py::arg("config"), py::arg("out"), py::arg("checkpoint") = py::none());
  m.def("evaluate", &cmd_evaluate, py::arg("config"), py::arg("out"), py::arg("checkpoint") = py::none());
  m.def("sweep_alpha", &cmd_sweep_alpha, py::arg("config"), py::arg("out"), py::arg("checkpoint") = py::none());
  m.def("export_features", &cmd_export_features, py::arg("config"), py::arg("out"),
        py::arg("checkpoint") = py::none(), py::arg("layer") = py::none());

  m.def(
      "speedup", [](const std::vector<std::size_t>& histogram) { return speedup(histogram); }, py::arg("histogram"));
  m.def("d_a_from_error", &d_a_from_error, py::arg("probe_error"));

  py::class_<ADistanceReport>(m, "ADistance")
      .def_readonly("probe_error", &ADistanceReport::probe_error)
      .def_readonly("d_a", &ADistanceReport::d_a)
      .def_readonly("source_size", &ADistanceReport::source_size)
      .def_readonly("target_size", &ADistanceReport::target_size);

  m.def(
      "a_distance",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& source,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& target, std::uint64_t seed) {
        SeededRng rng(seed);
        return a_distance(from_array(source), from_array(target), rng);
      },
      py::arg("source"), py::arg("target"), py::arg("seed") = 0);
}

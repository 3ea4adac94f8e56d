#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "xsmap/harness.hpp"

namespace py = pybind11;
using namespace xsmap;

namespace {

pinsker::FeatureMatrix make_feature_matrix(const Eigen::MatrixXd& rows,
                                           const std::vector<int>& labels, int n_classes) {
  pinsker::FeatureMatrix fm;
  fm.rows = rows;
  fm.labels = labels;
  fm.n_classes = n_classes;
  fm.validate();
  return fm;
}

void register_exceptions(py::module_& m) {
  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<DataError> data_error(m, "DataError", PyExc_RuntimeError);
  static py::exception<NumericError> numeric_error(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      py::set_error(config_error, e.what());
    } catch (const NumericError& e) {
      py::set_error(numeric_error, e.what());
    } catch (const DataError& e) {
      py::set_error(data_error, e.what());
    }
  });
}

}  // namespace

PYBIND11_MODULE(_xsmap, m) {
  m.doc() = "Cross-subject neural decoding: Pinsker features, CVAE mapping, MLP/LDA decoders";

  register_exceptions(m);

  // ---- trial data ----
  py::class_<data::SynthConfig>(m, "SynthConfig")
      .def(py::init<>())
      .def_readwrite("n_classes", &data::SynthConfig::n_classes)
      .def_readwrite("n_channels", &data::SynthConfig::n_channels)
      .def_readwrite("n_samples", &data::SynthConfig::n_samples)
      .def_readwrite("sample_rate_hz", &data::SynthConfig::sample_rate_hz)
      .def_readwrite("noise_sigma", &data::SynthConfig::noise_sigma)
      .def_readwrite("n_trials_per_subject", &data::SynthConfig::n_trials_per_subject)
      .def_readwrite("template_harmonics", &data::SynthConfig::template_harmonics)
      .def_readwrite("transfer_warp_gain", &data::SynthConfig::transfer_warp_gain)
      .def_readwrite("seed", &data::SynthConfig::seed);

  py::class_<data::TrialSet>(m, "TrialSet")
      .def_readonly("n_channels", &data::TrialSet::n_channels)
      .def_readonly("n_samples", &data::TrialSet::n_samples)
      .def_readonly("sample_rate_hz", &data::TrialSet::sample_rate_hz)
      .def_readonly("n_classes", &data::TrialSet::n_classes)
      .def("__len__", [](const data::TrialSet& ts) { return ts.trials.size(); })
      .def("labels",
           [](const data::TrialSet& ts) {
             std::vector<int> out;
             out.reserve(ts.trials.size());
             for (const auto& t : ts.trials) out.push_back(t.label);
             return out;
           })
      .def("signal",
           [](const data::TrialSet& ts, size_t i) {
             if (i >= ts.trials.size()) throw py::index_error();
             return ts.trials[i].signal;
           },
           py::arg("index"));

  py::class_<data::GroundTruth>(m, "GroundTruth")
      .def_readonly("source_templates", &data::GroundTruth::source_templates)
      .def_readonly("dest_templates", &data::GroundTruth::dest_templates)
      .def_readonly("mixing", &data::GroundTruth::mixing)
      .def_readonly("warp_gain", &data::GroundTruth::warp_gain)
      .def_readonly("warp_scale", &data::GroundTruth::warp_scale)
      .def_readonly("jitter_amp", &data::GroundTruth::jitter_amp);

  py::class_<data::SyntheticPair>(m, "SyntheticPair")
      .def_readonly("source", &data::SyntheticPair::source)
      .def_readonly("destination", &data::SyntheticPair::destination)
      .def_readonly("truth", &data::SyntheticPair::truth);

  m.def("generate_synthetic_pair", &data::generate_synthetic_pair, py::arg("config"));
  m.def(
      "split_trials",
      [](const data::TrialSet& ts, int n_train, int n_test, uint64_t seed) {
        const data::Split s = data::split_trials(ts, n_train, n_test, seed);
        return py::make_tuple(s.train_indices, s.test_indices);
      },
      py::arg("trials"), py::arg("n_train"), py::arg("n_test"), py::arg("seed"));
  m.def("write_trials", &data::write_trials, py::arg("path"), py::arg("trials"));
  m.def("read_trials", &data::read_trials, py::arg("path"));
  m.def("apply_warp", &data::apply_warp, py::arg("truth"), py::arg("signal"));

  // ---- features ----
  py::class_<pinsker::PinskerConfig>(m, "PinskerConfig")
      .def(py::init([](double alpha, double mu, int l_coeffs) {
             pinsker::PinskerConfig cfg{alpha, mu, l_coeffs};
             cfg.validate();
             return cfg;
           }),
           py::arg("alpha") = 1.0, py::arg("mu") = 0.0, py::arg("l_coeffs") = 3)
      .def_readwrite("alpha", &pinsker::PinskerConfig::alpha)
      .def_readwrite("mu", &pinsker::PinskerConfig::mu)
      .def_readwrite("l_coeffs", &pinsker::PinskerConfig::l_coeffs)
      .def("effective_l", &pinsker::PinskerConfig::effective_l)
      .def("effective_mu", &pinsker::PinskerConfig::effective_mu);

  py::class_<pinsker::FeatureMatrix>(m, "FeatureMatrix")
      .def(py::init(&make_feature_matrix), py::arg("rows"), py::arg("labels"),
           py::arg("n_classes"))
      .def_readonly("rows", &pinsker::FeatureMatrix::rows)
      .def_readonly("labels", &pinsker::FeatureMatrix::labels)
      .def_readonly("n_classes", &pinsker::FeatureMatrix::n_classes)
      .def("__len__", [](const pinsker::FeatureMatrix& fm) { return fm.count(); })
      .def("dim", &pinsker::FeatureMatrix::dim)
      .def("select", &pinsker::FeatureMatrix::select, py::arg("indices"));

  m.def("extract_features", &pinsker::extract_features, py::arg("trials"), py::arg("config"));
  m.def("fourier_project", &pinsker::fourier_project, py::arg("signal"), py::arg("l_coeffs"));
  m.def("pinsker_weights", &pinsker::pinsker_weights, py::arg("alpha"), py::arg("mu"),
        py::arg("count"));
  m.def("select_l", &pinsker::select_l, py::arg("alpha"), py::arg("mu"));
  m.def("min_mu_for_l", &pinsker::min_mu_for_l, py::arg("alpha"), py::arg("l_coeffs"));
  m.def("write_features", &pinsker::write_features, py::arg("path"), py::arg("features"));
  m.def("read_features", &pinsker::read_features, py::arg("path"));
  m.def("class_conditional_means", &data::class_conditional_means, py::arg("features"));

  // ---- cvae ----
  py::enum_<cvae::CorrespondenceMode>(m, "CorrespondenceMode")
      .value("RandomPerEpoch", cvae::CorrespondenceMode::RandomPerEpoch)
      .value("ClassMean", cvae::CorrespondenceMode::ClassMean);

  py::class_<cvae::CvaeConfig>(m, "CvaeConfig")
      .def(py::init<>())
      .def_readwrite("latent_dim", &cvae::CvaeConfig::latent_dim)
      .def_readwrite("hidden_prior", &cvae::CvaeConfig::hidden_prior)
      .def_readwrite("hidden_recog", &cvae::CvaeConfig::hidden_recog)
      .def_readwrite("hidden_gen", &cvae::CvaeConfig::hidden_gen)
      .def_readwrite("minibatch", &cvae::CvaeConfig::minibatch)
      .def_readwrite("epochs", &cvae::CvaeConfig::epochs)
      .def_readwrite("lr1", &cvae::CvaeConfig::lr1)
      .def_readwrite("lr_decay", &cvae::CvaeConfig::lr_decay)
      .def_readwrite("correspondence", &cvae::CvaeConfig::correspondence)
      .def_readwrite("batch_norm", &cvae::CvaeConfig::batch_norm)
      .def_readwrite("seed", &cvae::CvaeConfig::seed);

  py::class_<cvae::Whitening>(m, "Whitening")
      .def_readonly("mean", &cvae::Whitening::mean)
      .def_readonly("transform", &cvae::Whitening::transform)
      .def_readonly("inverse", &cvae::Whitening::inverse)
      .def_readonly("floored", &cvae::Whitening::floored)
      .def("apply", &cvae::Whitening::apply, py::arg("rows"))
      .def("invert", &cvae::Whitening::invert, py::arg("rows"));

  m.def("whiten_fit", &cvae::whiten_fit, py::arg("rows"));
  m.def("gaussian_kl", &cvae::gaussian_kl, py::arg("mu_r"), py::arg("var_r"), py::arg("mu_p"),
        py::arg("var_p"));
  m.def("reparam_sample", &cvae::reparam_sample, py::arg("mu"), py::arg("log_var"),
        py::arg("eps"));

  py::class_<cvae::CvaeModel>(m, "CvaeModel")
      .def_readonly("feature_dim", &cvae::CvaeModel::feature_dim)
      .def_readonly("config", &cvae::CvaeModel::config)
      .def_readonly("whitening", &cvae::CvaeModel::whitening)
      .def_readonly("loss_history", &cvae::CvaeModel::loss_history)
      .def_readonly("trained", &cvae::CvaeModel::trained);

  m.def("train_cvae", &cvae::train_cvae, py::arg("source"), py::arg("dest"), py::arg("config"));
  m.def(
      "map_features",
      [](const cvae::CvaeModel& model, const Eigen::MatrixXd& rows, bool generative, int samples,
         uint64_t seed) {
        cvae::MapOptions opts;
        opts.generative = generative;
        opts.samples = samples;
        opts.seed = seed;
        const cvae::Mapped mapped = cvae::map_features(model, rows, opts);
        return py::make_tuple(mapped.whitened, mapped.restored);
      },
      py::arg("model"), py::arg("rows"), py::arg("generative") = false, py::arg("samples") = 1,
      py::arg("seed") = 0,
      "Returns (whitened, restored) mapped feature rows.");
  m.def("save_cvae", &cvae::save_cvae, py::arg("path"), py::arg("model"));
  m.def("load_cvae", &cvae::load_cvae, py::arg("path"));

  // ---- decoders ----
  py::class_<decoder::MlpDecoderConfig>(m, "MlpDecoderConfig")
      .def(py::init<>())
      .def_readwrite("hidden", &decoder::MlpDecoderConfig::hidden)
      .def_readwrite("batch_norm", &decoder::MlpDecoderConfig::batch_norm)
      .def_readwrite("minibatch", &decoder::MlpDecoderConfig::minibatch)
      .def_readwrite("epochs", &decoder::MlpDecoderConfig::epochs)
      .def_readwrite("lr1", &decoder::MlpDecoderConfig::lr1)
      .def_readwrite("lr_decay", &decoder::MlpDecoderConfig::lr_decay)
      .def_readwrite("seed", &decoder::MlpDecoderConfig::seed);

  py::class_<decoder::DecoderModel>(m, "DecoderModel")
      .def_readonly("n_classes", &decoder::DecoderModel::n_classes)
      .def_readonly("feature_dim", &decoder::DecoderModel::feature_dim)
      .def("scores", &decoder::DecoderModel::scores, py::arg("rows"));

  m.def("train_mlp_decoder", &decoder::train_mlp_decoder, py::arg("features"), py::arg("config"));
  m.def("train_lda", &decoder::train_lda, py::arg("features"), py::arg("ridge") = 1e-6);
  m.def("predict", &decoder::predict, py::arg("model"), py::arg("rows"));
  m.def("accuracy", &decoder::accuracy, py::arg("model"), py::arg("features"));
  m.def("save_decoder", &decoder::save_decoder, py::arg("path"), py::arg("model"));
  m.def("load_decoder", &decoder::load_decoder, py::arg("path"));

  // ---- harness ----
  py::enum_<harness::DecoderKind>(m, "DecoderKind")
      .value("Mlp", harness::DecoderKind::Mlp)
      .value("Lda", harness::DecoderKind::Lda);

  py::enum_<harness::ReportFormat>(m, "ReportFormat")
      .value("Csv", harness::ReportFormat::Csv)
      .value("Json", harness::ReportFormat::Json);

  py::class_<harness::MapSpec>(m, "MapSpec")
      .def(py::init<>())
      .def_readwrite("generative", &harness::MapSpec::generative)
      .def_readwrite("samples", &harness::MapSpec::samples);

  py::class_<harness::ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_static("desk_scale", &harness::ExperimentConfig::desk_scale)
      .def_static("full_scale", &harness::ExperimentConfig::full_scale)
      .def_readwrite("synth", &harness::ExperimentConfig::synth)
      .def_readwrite("source_trials", &harness::ExperimentConfig::source_trials)
      .def_readwrite("dest_trials", &harness::ExperimentConfig::dest_trials)
      .def_readwrite("pinsker", &harness::ExperimentConfig::pinsker)
      .def_readwrite("repetitions", &harness::ExperimentConfig::repetitions)
      .def_readwrite("n_train", &harness::ExperimentConfig::n_train)
      .def_readwrite("n_test", &harness::ExperimentConfig::n_test)
      .def_readwrite("cvae", &harness::ExperimentConfig::cvae)
      .def_readwrite("decoder_mlp", &harness::ExperimentConfig::decoder_mlp)
      .def_readwrite("lda_ridge", &harness::ExperimentConfig::lda_ridge)
      .def_readwrite("decoder_kind", &harness::ExperimentConfig::decoder_kind)
      .def_readwrite("map", &harness::ExperimentConfig::map)
      .def_readwrite("master_seed", &harness::ExperimentConfig::master_seed)
      .def("validate", &harness::ExperimentConfig::validate)
      .def("to_json", &harness::config_to_json)
      .def_static("from_json", &harness::config_from_json, py::arg("text"));

  py::class_<harness::RepetitionResult>(m, "RepetitionResult")
      .def_readonly("index", &harness::RepetitionResult::index)
      .def_readonly("seed", &harness::RepetitionResult::seed)
      .def_readonly("failed", &harness::RepetitionResult::failed)
      .def_readonly("error", &harness::RepetitionResult::error)
      .def_readonly("disjoint", &harness::RepetitionResult::disjoint)
      .def_readonly("accuracy", &harness::RepetitionResult::accuracy);

  py::class_<harness::ConditionStats>(m, "ConditionStats")
      .def_readonly("mean", &harness::ConditionStats::mean)
      .def_readonly("stddev", &harness::ConditionStats::stddev);

  py::class_<harness::ExperimentReport>(m, "ExperimentReport")
      .def_readonly("config", &harness::ExperimentReport::config)
      .def_readonly("repetitions", &harness::ExperimentReport::repetitions)
      .def("condition_values", &harness::ExperimentReport::condition_values,
           py::arg("condition"))
      .def("condition_stats", &harness::ExperimentReport::condition_stats, py::arg("condition"))
      .def("relative_gains_vs", &harness::ExperimentReport::relative_gains_vs,
           py::arg("baseline_condition"))
      .def("failed_count", &harness::ExperimentReport::failed_count);

  m.attr("CONDITIONS") = std::vector<std::string>(harness::kConditions.begin(),
                                                  harness::kConditions.end());
  m.def("run_experiment", &harness::run_experiment, py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("emit_report", &harness::emit_report, py::arg("report"), py::arg("out_base"),
        py::arg("format"));
  m.def("parse_report_json", &harness::parse_report_json, py::arg("path"));
}

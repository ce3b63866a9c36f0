#include "fprobe/ablation.hpp"
#include "fprobe/dataset.hpp"
#include "fprobe/embed_analysis.hpp"
#include "fprobe/filters.hpp"
#include "fprobe/fourier.hpp"
#include "fprobe/lens.hpp"
#include "fprobe/model.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>

namespace py = pybind11;
using namespace fprobe;

namespace {

py::list peaks_to_list(const std::vector<ComponentPeak>& peaks) {
    py::list out;
    for (const auto& p : peaks) {
        out.append(py::make_tuple(p.k, p.period, p.magnitude));
    }
    return out;
}

py::dict report_to_dict(const AblationReport& r) {
    py::dict d;
    d["name"] = r.spec.name;
    d["targets"] = r.spec.targets();
    d["removed"] = r.spec.removed_band();
    d["loss"] = r.loss;
    d["accuracy"] = r.accuracy;
    d["predictions"] = r.predictions;
    d["histogram"] = r.errors.histogram;
    d["frac_mult10"] = r.errors.frac_mult10;
    d["frac_le6"] = r.errors.frac_le6;
    d["frac_le2"] = r.errors.frac_le2;
    d["parity_accuracy"] = r.errors.parity_accuracy;
    d["mean_signed_error"] = r.errors.mean_signed_error;
    d["modulus"] = r.modulus;
    d["modular_accuracy"] = r.modular_accuracy;
    return d;
}

std::pair<NumberVocab, NumberDataset> load_dataset(const std::string& dir) {
    std::ifstream vs(dir + "/data.vocab");
    if (!vs) {
        throw std::runtime_error("cannot read " + dir + "/data.vocab");
    }
    auto vocab = NumberVocab::read(vs);
    std::ifstream ds(dir + "/data.jsonl");
    if (!ds) {
        throw std::runtime_error("cannot read " + dir + "/data.jsonl");
    }
    auto data = read_jsonl(ds, vocab);
    return {std::move(vocab), std::move(data)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Fourier probes for transformer arithmetic";
    m.attr("__version__") = std::string(kToolVersion);

    // fourier
    py::class_<Spectrum>(m, "Spectrum")
        .def_readonly("p", &Spectrum::p)
        .def_readonly("raw", &Spectrum::raw)
        .def_readonly("magnitudes", &Spectrum::magnitudes);

    py::class_<FourierBasis>(m, "FourierBasis")
        .def(py::init<int>(), py::arg("p"))
        .def_property_readonly("p", &FourierBasis::p)
        .def_property_readonly("max_component", &FourierBasis::max_component)
        .def_property_readonly("matrix", &FourierBasis::matrix)
        .def("period", &FourierBasis::period, py::arg("k"))
        .def("dft", [](const FourierBasis& b, const Eigen::VectorXd& u) { return dft(b, u); }, py::arg("u"))
        .def("idft", [](const FourierBasis& b, const Spectrum& s) { return idft(b, s); }, py::arg("spectrum"));

    m.def("sigma_outliers", [](const Spectrum& s, int min_component, double n_sigma) {
        return peaks_to_list(sigma_outliers(s, min_component, n_sigma));
    }, py::arg("spectrum"), py::arg("min_component"), py::arg("n_sigma") = 4.0,
       "[(k, period, magnitude)] above mean + n_sigma * std over k >= min_component");
    m.def("top_outlier_components", [](const Spectrum& s, int n, int min_component) {
        return peaks_to_list(top_outlier_components(s, n, min_component));
    }, py::arg("spectrum"), py::arg("n"), py::arg("min_component"));

    // filters
    py::class_<FilterSpec>(m, "FilterSpec")
        .def_static("low_pass", &FilterSpec::low_pass, py::arg("p"), py::arg("tau"))
        .def_static("high_pass", &FilterSpec::high_pass, py::arg("p"), py::arg("tau"))
        .def_static("single_pass", &FilterSpec::single_pass, py::arg("p"), py::arg("gamma"))
        .def_static("identity", &FilterSpec::identity, py::arg("p"))
        .def_property_readonly("kind", [](const FilterSpec& f) { return to_string(f.kind); })
        .def_readonly("tau", &FilterSpec::tau)
        .def_readonly("gamma", &FilterSpec::gamma)
        .def_readonly("p", &FilterSpec::p)
        .def("removes", &FilterSpec::removes, py::arg("k"));

    py::class_<Projector>(m, "Projector")
        .def_readonly("matrix", &Projector::matrix)
        .def_readonly("rank_removed", &Projector::rank_removed)
        .def_readonly("null_dim", &Projector::null_dim)
        .def_readonly("degenerate_unembedding", &Projector::degenerate_unembedding);

    m.def("default_tau", &default_tau, py::arg("p"));
    m.def("build_projector", &build_projector, py::arg("basis"), py::arg("unembedding"), py::arg("spec"));

    // dataset
    py::class_<NumberVocab>(m, "NumberVocab")
        .def(py::init<int>(), py::arg("max_number"))
        .def_property_readonly("p", &NumberVocab::p)
        .def_property_readonly("size", &NumberVocab::size)
        .def_property_readonly("words", &NumberVocab::words)
        .def("encode", &NumberVocab::encode, py::arg("text"))
        .def("token_text", &NumberVocab::token_text, py::arg("id"));

    py::class_<Example>(m, "Example")
        .def_readonly("question", &Example::question)
        .def_readonly("tokens", &Example::tokens)
        .def_readonly("answer", &Example::answer)
        .def_readonly("op_a", &Example::op_a)
        .def_readonly("op_b", &Example::op_b)
        .def_readonly("template_id", &Example::template_id)
        .def_property_readonly("split", [](const Example& e) { return to_string(e.split); });

    py::class_<NumberDataset>(m, "NumberDataset")
        .def_property_readonly("format", [](const NumberDataset& d) { return to_string(d.format); })
        .def_readonly("seed", &NumberDataset::seed)
        .def_readonly("examples", &NumberDataset::examples)
        .def("subset", [](const NumberDataset& d, const std::string& s) { return d.subset(split_from_string(s)); },
             py::arg("split"))
        .def("count", [](const NumberDataset& d, const std::string& s) { return d.count(split_from_string(s)); },
             py::arg("split"))
        .def("__len__", [](const NumberDataset& d) { return d.examples.size(); });

    m.def("gen_addition", &gen_addition, py::arg("max_operand"), py::arg("vocab"), py::arg("seed"));
    m.def("gen_rpn", &gen_rpn, py::arg("max_operand"), py::arg("vocab"), py::arg("seed"));
    m.def("gen_multiplication", &gen_multiplication, py::arg("max_product"), py::arg("vocab"), py::arg("seed"));
    m.def("load_dataset", &load_dataset, py::arg("directory"),
          "(vocab, dataset) from a gen-data output directory");

    // model
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("d_ff", &ModelConfig::d_ff)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("n_numbers", &ModelConfig::n_numbers)
        .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
        .def_readwrite("seed", &ModelConfig::seed)
        .def_property_readonly("embedding_mode", [](const ModelConfig& c) { return to_string(c.embedding_mode); })
        .def("validate", &ModelConfig::validate);

    py::class_<TrainHyper>(m, "TrainHyper")
        .def(py::init<>())
        .def_readwrite("epochs", &TrainHyper::epochs)
        .def_readwrite("batch_size", &TrainHyper::batch_size)
        .def_readwrite("lr_start", &TrainHyper::lr_start)
        .def_readwrite("lr_end", &TrainHyper::lr_end)
        .def_readwrite("weight_decay", &TrainHyper::weight_decay)
        .def_readwrite("beta1", &TrainHyper::beta1)
        .def_readwrite("beta2", &TrainHyper::beta2)
        .def_readwrite("eps", &TrainHyper::eps);

    py::class_<EpochMetrics>(m, "EpochMetrics")
        .def_readonly("epoch", &EpochMetrics::epoch)
        .def_readonly("train_loss", &EpochMetrics::train_loss)
        .def_readonly("val_loss", &EpochMetrics::val_loss)
        .def_readonly("val_accuracy", &EpochMetrics::val_accuracy);

    py::class_<ModelState>(m, "Model")
        .def_property_readonly("config", &ModelState::config)
        .def_readonly("step", &ModelState::step)
        .def("number_embeddings", [](const ModelState& s) {
            return MatD(s.model.weights().token_embedding.topRows(s.config().n_numbers).cast<double>());
        })
        .def("unembedding", [](const ModelState& s) { return MatD(s.model.unembedding().cast<double>()); })
        .def("evaluate", [](const ModelState& s, const std::vector<Example>& examples) {
            py::gil_scoped_release release;
            return evaluate(s.analysis(), std::span<const Example>(examples));
        }, py::arg("examples"))
        .def("logit_lens", [](const ModelState& s, const Example& ex) {
            const auto lens = lens_for_example(s.analysis(), ex);
            py::dict d;
            d["residual"] = lens.residual;
            d["attn"] = lens.attn;
            d["mlp"] = lens.mlp;
            return d;
        }, py::arg("example"), "per-layer logits at the last token")
        .def("avg_spectrum", [](const ModelState& s, const FourierBasis& b, const std::vector<Example>& examples,
                                std::vector<int> layers, const std::string& module) {
            const auto kind = module_kind_from_string(module);
            py::gil_scoped_release release;
            return avg_spectrum(s.analysis(), b, examples, std::move(layers), kind);
        }, py::arg("basis"), py::arg("examples"), py::arg("layers"), py::arg("module") = "mlp")
        .def("save", [](const ModelState& s, const std::string& path) { save_checkpoint(path, s); }, py::arg("path"));

    py::class_<EvalResult>(m, "EvalResult")
        .def_readonly("loss", &EvalResult::loss)
        .def_readonly("accuracy", &EvalResult::accuracy)
        .def_readonly("predictions", &EvalResult::predictions);

    m.def("init_model", &init_model, py::arg("config"));
    m.def("load_checkpoint", py::overload_cast<const std::string&>(&load_checkpoint), py::arg("path"));
    m.def("inject_embeddings", &inject_embeddings, py::arg("model"), py::arg("embedding"), py::arg("freeze"));
    m.def("train", [](const ModelState& s, const NumberDataset& data, const TrainHyper& hyper) {
        py::gil_scoped_release release;
        auto r = train(s, data, hyper);
        return std::make_pair(std::move(r.state), std::move(r.metrics));
    }, py::arg("model"), py::arg("dataset"), py::arg("hyper"), "(trained model, per-epoch metrics)");
    m.def("synth_fourier_embedding", [](int p, int d, const std::vector<double>& periods, double lfw, uint64_t seed) {
        return synth_fourier_embedding(p, d, periods, lfw, seed);
    }, py::arg("p"), py::arg("d_model"), py::arg("periods"), py::arg("low_freq_weight") = 0.3, py::arg("seed") = 0);
    m.def("component_for_period", &component_for_period, py::arg("p"), py::arg("period"));
    m.def("default_layer_band", &default_layer_band, py::arg("n_layers"));

    // embed_analysis
    m.def("embedding_spectrum", &embedding_spectrum, py::arg("basis"), py::arg("number_embeddings"));
    m.def("cluster_embeddings", [](const MatD& rows, int k, uint64_t seed, int restarts) {
        const auto r = cluster_embeddings(rows, k, seed, {.restarts = restarts, .max_iter = 300});
        py::dict d;
        d["assignment"] = r.assignment;
        d["centroids"] = r.centroids;
        d["inertia"] = r.inertia;
        d["best_restart"] = r.best_restart;
        d["coords"] = r.coords;
        return d;
    }, py::arg("number_embeddings"), py::arg("k"), py::arg("seed") = 0, py::arg("restarts") = 50);
    m.def("principal_coords", &principal_coords, py::arg("rows"));

    // ablation
    py::class_<AblationSpec>(m, "AblationSpec")
        .def(py::init([](std::string name, FilterSpec filter, bool attn, bool mlp, std::vector<int> layers,
                         std::vector<int> positions) {
            return AblationSpec{std::move(name), filter, attn, mlp, std::move(layers), std::move(positions)};
        }), py::arg("name"), py::arg("filter"), py::arg("attn") = true, py::arg("mlp") = true,
            py::arg("layers") = std::vector<int>{}, py::arg("positions") = std::vector<int>{})
        .def_readonly("name", &AblationSpec::name)
        .def_readonly("filter", &AblationSpec::filter)
        .def_property_readonly("targets", &AblationSpec::targets)
        .def_property_readonly("removed", &AblationSpec::removed_band);

    m.def("standard_table_specs", &standard_table_specs, py::arg("p"), py::arg("tau"));
    m.def("ablate", [](const ModelState& s, const FourierBasis& b, const std::vector<Example>& examples,
                       const std::vector<AblationSpec>& specs) {
        std::vector<AblationReport> reports;
        {
            py::gil_scoped_release release;
            ProjectorCache cache;
            reports = run_sweep(s.analysis(), b, examples, specs, cache);
        }
        py::list out;
        for (const auto& r : reports) {
            out.append(report_to_dict(r));
        }
        return out;
    }, py::arg("model"), py::arg("basis"), py::arg("examples"), py::arg("specs"));
}

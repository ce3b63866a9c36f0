#include "run_record.hpp"

#include "fprobe/ablation.hpp"
#include "fprobe/config.hpp"
#include "fprobe/dataset.hpp"
#include "fprobe/embed_analysis.hpp"
#include "fprobe/filters.hpp"
#include "fprobe/fourier.hpp"
#include "fprobe/lens.hpp"
#include "fprobe/model.hpp"
#include "fprobe/report.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace fprobe::cli {
namespace {

constexpr const char* kDataFile = "data.jsonl";
constexpr const char* kVocabFile = "data.vocab";
constexpr const char* kCheckpointFile = "model.fprb";

struct LoadedData {
    NumberVocab vocab;
    NumberDataset dataset;
};

LoadedData load_data(const fs::path& dir, RunRecord& rec) {
    const auto jsonl = dir / kDataFile;
    const auto vocab_path = dir / kVocabFile;
    std::ifstream vs(vocab_path);
    if (!vs) {
        throw std::runtime_error("cannot read '" + vocab_path.string() + "' (expected a gen-data output directory)");
    }
    auto vocab = NumberVocab::read(vs);
    std::ifstream ds(jsonl);
    if (!ds) {
        throw std::runtime_error("cannot read '" + jsonl.string() + "'");
    }
    auto dataset = read_jsonl(ds, vocab);
    rec.input(jsonl);
    rec.input(vocab_path);
    return {std::move(vocab), std::move(dataset)};
}

ModelState load_ckpt(const std::string& path, RunRecord& rec) {
    auto state = load_checkpoint(path);
    rec.input(path);
    return state;
}

void check_compatible(const ModelConfig& c, const NumberVocab& vocab) {
    if (c.n_numbers != vocab.p() || c.vocab_size != vocab.size()) {
        throw std::invalid_argument("checkpoint vocabulary (p=" + std::to_string(c.n_numbers) + ", " +
                                    std::to_string(c.vocab_size) + " tokens) does not match the dataset (p=" +
                                    std::to_string(vocab.p()) + ", " + std::to_string(vocab.size()) + " tokens)");
    }
}

void prepare_out(const fs::path& out) {
    fs::create_directories(out);
    if (!fs::is_directory(out)) {
        throw std::runtime_error("'" + out.string() + "' is not a directory");
    }
}

std::vector<double> parse_doubles(const std::string& csv, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::logic_error&) {
            throw UsageError("bad number '" + item + "' in " + what);
        }
    }
    if (out.empty()) {
        throw UsageError(what + " is empty");
    }
    return out;
}

std::vector<int> parse_ints(const std::string& csv, const std::string& what) {
    std::vector<int> out;
    for (double v : parse_doubles(csv, what)) {
        if (v != std::floor(v)) {
            throw UsageError(what + " must be integers");
        }
        out.push_back(static_cast<int>(v));
    }
    return out;
}

// last | band | all | a-b | comma list
std::vector<int> parse_layers(const std::string& s, int n_layers) {
    std::vector<int> out;
    if (s == "last") {
        out = {n_layers};
    } else if (s == "band") {
        out = default_layer_band(n_layers);
    } else if (s == "all") {
        for (int l = 1; l <= n_layers; ++l) {
            out.push_back(l);
        }
    } else if (const auto dash = s.find('-'); dash != std::string::npos && dash > 0) {
        const int a = parse_ints(s.substr(0, dash), "--layers").front();
        const int b = parse_ints(s.substr(dash + 1), "--layers").front();
        for (int l = a; l <= b; ++l) {
            out.push_back(l);
        }
    } else {
        out = parse_ints(s, "--layers");
    }
    if (out.empty()) {
        throw UsageError("--layers '" + s + "' selects no layers");
    }
    for (int l : out) {
        if (l < 1 || l > n_layers) {
            throw UsageError("--layers: layer " + std::to_string(l) + " outside 1.." + std::to_string(n_layers));
        }
    }
    return out;
}

ordered_json to_json(const std::vector<int>& v) { return ordered_json(v); }

// Number rows of a CSV file; a non-numeric first line is taken as a header.
MatD read_matrix_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw std::runtime_error("cannot read '" + path + "'");
    }
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<double> row;
        try {
            row = parse_doubles(line, path);
        } catch (const UsageError&) {
            if (first) {
                first = false;
                continue;
            }
            throw std::runtime_error("'" + path + "': bad row " + std::to_string(rows.size() + 1));
        }
        first = false;
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw std::runtime_error("'" + path + "': ragged rows");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw std::runtime_error("'" + path + "' holds no rows");
    }
    MatD m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (size_t r = 0; r < rows.size(); ++r) {
        for (size_t c = 0; c < rows[r].size(); ++c) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    return m;
}

MatD number_rows(const ModelState& state) {
    const auto& c = state.config();
    return state.model.weights().token_embedding.topRows(c.n_numbers).cast<double>();
}

std::vector<ComponentPeak> write_outliers(const fs::path& path, const Spectrum& s, int min_component, int top) {
    const auto band = s.magnitudes.segment(min_component, s.magnitudes.size() - min_component);
    const double mean = band.mean();
    const double sd = std::sqrt((band.array() - mean).square().mean());
    const auto flagged = sigma_outliers(s, min_component);
    CsvWriter csv(path.string(), {"rank", "component_k", "period", "magnitude", "z_score", "above_4_sigma"});
    const auto peaks = top_outlier_components(s, top, min_component);
    int rank = 1;
    for (const auto& pk : peaks) {
        const bool hit = std::any_of(flagged.begin(), flagged.end(), [&](const auto& f) { return f.k == pk.k; });
        csv.row({std::to_string(rank++), std::to_string(pk.k), format_double(pk.period), format_double(pk.magnitude),
                 format_double(sd > 0.0 ? (pk.magnitude - mean) / sd : std::nan("")), hit ? "1" : "0"});
    }
    csv.close();
    return flagged;
}

void spectrum_svg(const fs::path& path, const std::string& title, const Spectrum& s) {
    Series series{"magnitude", {}, {}};
    for (Eigen::Index k = 0; k < s.magnitudes.size(); ++k) {
        series.x.push_back(static_cast<double>(k));
        series.y.push_back(s.magnitudes[k]);
    }
    write_line_svg(path.string(), title, "component k", {series});
}

void write_spectrum_file(const fs::path& path, const Spectrum& s) {
    std::ofstream os(path, std::ios::binary);
    write_spectrum_csv(os, s);
    os.flush();
    if (!os) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
}

// ---------------------------------------------------------------- gen-data

struct GenDataOpts {
    std::string task = "add";
    int max_operand = 50;
    int max_product = 0;
    int vocab_max = -1;
    uint64_t seed = 0;
    std::string out;
};

void cmd_gen_data(const GenDataOpts& o, RunRecord& rec) {
    TaskFormat format;
    int needed = 0;
    if (o.task == "add" || o.task == "rpn") {
        if (o.max_operand < 0) {
            throw UsageError("--max-operand must be >= 0");
        }
        format = o.task == "add" ? TaskFormat::natural_language : TaskFormat::rpn;
        needed = 2 * o.max_operand;
    } else if (o.task == "mul") {
        if (o.max_product < 1) {
            throw UsageError("--task mul needs --max-product >= 1");
        }
        format = TaskFormat::multiplication;
        needed = o.max_product;
    } else {
        throw UsageError("--task must be add, rpn or mul");
    }
    const int vocab_max = o.vocab_max < 0 ? needed : o.vocab_max;
    if (vocab_max < needed) {
        throw UsageError("--vocab-max " + std::to_string(vocab_max) + " cannot hold answers up to " +
                         std::to_string(needed));
    }
    const NumberVocab vocab(vocab_max);
    NumberDataset ds;
    switch (format) {
        case TaskFormat::natural_language: ds = gen_addition(o.max_operand, vocab, o.seed); break;
        case TaskFormat::rpn: ds = gen_rpn(o.max_operand, vocab, o.seed); break;
        case TaskFormat::multiplication: ds = gen_multiplication(o.max_product, vocab, o.seed); break;
    }

    const fs::path out(o.out);
    prepare_out(out);
    {
        std::ofstream os(out / kDataFile, std::ios::binary);
        write_jsonl(os, ds);
        std::ofstream vs(out / kVocabFile, std::ios::binary);
        vocab.write(vs);
        if (!os || !vs) {
            throw std::runtime_error("cannot write dataset files under '" + out.string() + "'");
        }
    }
    rec.seed("split", o.seed);
    rec.option("task", o.task);
    rec.option("format", to_string(format));
    rec.option("max_operand", o.max_operand);
    rec.option("max_product", o.max_product);
    rec.option("vocab_max", vocab_max);
    rec.option("n_examples", ds.examples.size());
    rec.option("n_train", ds.count(Split::train));
    rec.option("n_val", ds.count(Split::val));
    rec.option("n_test", ds.count(Split::test));
    rec.output(out, kDataFile);
    rec.output(out, kVocabFile);
    rec.write(out);
    std::cout << ds.examples.size() << " examples -> " << (out / kDataFile).string() << '\n';
}

// ---------------------------------------------------------------- train

struct TrainOpts {
    std::string config;
    std::string data;
    std::string embedding;
    bool freeze = false;
    std::optional<uint64_t> seed;
    std::optional<int> n_layers, d_model, n_heads, d_ff, max_seq_len;
    std::optional<int> epochs, batch_size;
    std::optional<double> lr, lr_end, weight_decay, low_freq_weight;
    bool quiet = false;
    bool svg = true;
    std::string out;
};

struct TrainPlan {
    ModelConfig model;
    TrainHyper hyper;
    std::string embedding = "random";
    bool freeze = false;
    double low_freq_weight = 0.3;
};

template <class T>
void take(const ordered_json& table, const char* key, T& dst) {
    if (table.contains(key)) {
        dst = table.at(key).get<T>();
    }
}

void reject_unknown(const ordered_json& table, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& [k, v] : table.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; })) {
            throw std::invalid_argument(where + ": unknown key '" + k + "'");
        }
    }
}

// [model] / [train] / [embedding] tables plus a top-level seed.
TrainPlan plan_from_config(const ordered_json& doc, const std::string& source) {
    TrainPlan plan;
    reject_unknown(doc, {"seed", "model", "train", "embedding"}, source);
    take(doc, "seed", plan.model.seed);
    if (doc.contains("model")) {
        const auto& m = doc.at("model");
        reject_unknown(m, {"n_layers", "d_model", "n_heads", "d_ff", "max_seq_len"}, source + " [model]");
        take(m, "n_layers", plan.model.n_layers);
        take(m, "d_model", plan.model.d_model);
        take(m, "n_heads", plan.model.n_heads);
        take(m, "d_ff", plan.model.d_ff);
        take(m, "max_seq_len", plan.model.max_seq_len);
    }
    if (doc.contains("train")) {
        const auto& t = doc.at("train");
        reject_unknown(t, {"epochs", "batch_size", "lr_start", "lr_end", "weight_decay", "beta1", "beta2", "eps"},
                       source + " [train]");
        take(t, "epochs", plan.hyper.epochs);
        take(t, "batch_size", plan.hyper.batch_size);
        take(t, "lr_start", plan.hyper.lr_start);
        take(t, "lr_end", plan.hyper.lr_end);
        take(t, "weight_decay", plan.hyper.weight_decay);
        take(t, "beta1", plan.hyper.beta1);
        take(t, "beta2", plan.hyper.beta2);
        take(t, "eps", plan.hyper.eps);
    }
    if (doc.contains("embedding")) {
        const auto& e = doc.at("embedding");
        reject_unknown(e, {"source", "freeze", "low_freq_weight"}, source + " [embedding]");
        take(e, "source", plan.embedding);
        take(e, "freeze", plan.freeze);
        take(e, "low_freq_weight", plan.low_freq_weight);
    }
    return plan;
}

void cmd_train(const TrainOpts& o, RunRecord& rec) {
    TrainPlan plan;
    if (!o.config.empty()) {
        try {
            plan = plan_from_config(read_toml_file(o.config), o.config);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument(o.config + ": " + e.what());
        }
        rec.input(o.config);
    }
    auto& mc = plan.model;
    auto& hy = plan.hyper;
    if (o.seed) mc.seed = *o.seed;
    if (o.n_layers) mc.n_layers = *o.n_layers;
    if (o.d_model) mc.d_model = *o.d_model;
    if (o.n_heads) mc.n_heads = *o.n_heads;
    if (o.d_ff) mc.d_ff = *o.d_ff;
    if (o.max_seq_len) mc.max_seq_len = *o.max_seq_len;
    if (o.epochs) hy.epochs = *o.epochs;
    if (o.batch_size) hy.batch_size = *o.batch_size;
    if (o.lr) hy.lr_start = *o.lr;
    if (o.lr_end) hy.lr_end = *o.lr_end;
    if (o.weight_decay) hy.weight_decay = *o.weight_decay;
    if (o.low_freq_weight) plan.low_freq_weight = *o.low_freq_weight;
    if (!o.embedding.empty()) plan.embedding = o.embedding;
    plan.freeze = plan.freeze || o.freeze;

    const auto data = load_data(o.data, rec);
    mc.n_numbers = data.vocab.p();
    mc.vocab_size = data.vocab.size();
    for (const auto& ex : data.dataset.examples) {
        mc.max_seq_len = std::max(mc.max_seq_len, static_cast<int>(ex.tokens.size()));
    }
    mc.validate();

    auto state = init_model(mc);
    const uint64_t embed_seed = derive_seed(mc.seed, 0xe3bedULL);
    if (plan.embedding.starts_with("fourier:")) {
        const auto periods = parse_doubles(plan.embedding.substr(8), "--embedding fourier periods");
        state = inject_embeddings(std::move(state),
                                  synth_fourier_embedding(mc.n_numbers, mc.d_model, periods, plan.low_freq_weight,
                                                          embed_seed),
                                  plan.freeze);
        rec.seed("embedding", embed_seed);
        rec.option("low_freq_weight", plan.low_freq_weight);
    } else if (plan.embedding.starts_with("file:")) {
        const auto path = plan.embedding.substr(5);
        state = inject_embeddings(std::move(state), read_matrix_csv(path), plan.freeze);
        rec.input(path);
    } else if (plan.embedding != "random") {
        throw UsageError("--embedding must be random, fourier:P1,P2,... or file:PATH");
    } else if (plan.freeze) {
        throw UsageError("--freeze-embedding needs an injected embedding (fourier:... or file:...)");
    }

    const fs::path out(o.out);
    prepare_out(out);
    CsvWriter metrics((out / "metrics.csv").string(), {"epoch", "train_loss", "val_loss", "val_accuracy"});
    auto result = train(std::move(state), data.dataset, hy, [&](const EpochMetrics& m) {
        metrics.row({std::to_string(m.epoch), format_double(m.train_loss), format_double(m.val_loss),
                     format_double(m.val_accuracy)});
        if (!o.quiet) {
            std::cout << "epoch " << m.epoch << " train_loss " << m.train_loss << " val_loss " << m.val_loss
                      << " val_accuracy " << m.val_accuracy << std::endl;
        }
    });
    metrics.close();
    save_checkpoint((out / kCheckpointFile).string(), result.state);

    if (o.svg && !result.metrics.empty()) {
        Series acc{"val_accuracy", {}, {}};
        for (const auto& m : result.metrics) {
            acc.x.push_back(m.epoch);
            acc.y.push_back(m.val_accuracy);
        }
        write_line_svg((out / "metrics.svg").string(), "validation accuracy", "epoch", {acc});
    }

    rec.seed("model", mc.seed);
    rec.seed("data_split", data.dataset.seed);
    rec.option("model", result.state.config().to_json());
    rec.option("train", hy.to_json());
    rec.option("embedding", plan.embedding);
    rec.option("freeze_embedding", plan.freeze);
    rec.output(out, "metrics.csv");
    rec.output(out, kCheckpointFile);
    rec.write(out);
}

// ---------------------------------------------------------------- analyze

struct AnalyzeOpts {
    std::string ckpt;
    std::string data;
    std::string layers;
    std::string module = "mlp";
    std::string split = "val";
    std::string out;
    bool svg = true;
    // lens-accuracy
    std::string ks = "0,1,2,5,10";
    // heatmap
    int example = 0;
    int window = 10;
    // spectrum / embed-spectrum
    int top = 10;
    std::optional<int> min_component;
    std::string embedding;
    int p = 0;
    int d_model = 0;
    double low_freq_weight = 0.3;
    uint64_t seed = 0;
    // cluster
    int k = 10;
    int restarts = 50;
};

struct AnalysisInputs {
    AnalysisModel model;
    LoadedData data;
    std::vector<Example> examples;
};

AnalysisInputs load_for_analysis(const AnalyzeOpts& o, RunRecord& rec) {
    if (o.ckpt.empty() || o.data.empty()) {
        throw UsageError("analyze " + rec.command() + " needs --ckpt and --data");
    }
    auto state = load_ckpt(o.ckpt, rec);
    auto data = load_data(o.data, rec);
    check_compatible(state.config(), data.vocab);
    auto examples = data.dataset.subset(split_from_string(o.split));
    if (examples.empty()) {
        throw std::invalid_argument("split '" + o.split + "' is empty");
    }
    rec.option("split", o.split);
    return {state.analysis(), std::move(data), std::move(examples)};
}

void cmd_lens_accuracy(const AnalyzeOpts& o, RunRecord& rec) {
    auto in = load_for_analysis(o, rec);
    const auto table = accuracy_within(in.model, in.examples, parse_ints(o.ks, "--ks"));
    const fs::path out(o.out);
    prepare_out(out);
    std::vector<std::string> header{"layer"};
    for (int k : table.ks) {
        header.push_back("acc_within_" + std::to_string(k));
    }
    CsvWriter csv((out / "lens_accuracy.csv").string(), header);
    for (Eigen::Index l = 0; l < table.acc.rows(); ++l) {
        std::vector<std::string> row{std::to_string(l)};
        for (Eigen::Index j = 0; j < table.acc.cols(); ++j) {
            row.push_back(format_double(table.acc(l, j)));
        }
        csv.row(row);
    }
    csv.close();
    if (o.svg) {
        std::vector<Series> series;
        for (size_t j = 0; j < table.ks.size(); ++j) {
            Series s{"k=" + std::to_string(table.ks[j]), {}, {}};
            for (Eigen::Index l = 0; l < table.acc.rows(); ++l) {
                s.x.push_back(static_cast<double>(l));
                s.y.push_back(table.acc(l, static_cast<Eigen::Index>(j)));
            }
            series.push_back(std::move(s));
        }
        write_line_svg((out / "lens_accuracy.svg").string(), "logit-lens accuracy within k", "layer", series);
    }
    rec.option("ks", to_json(table.ks));
    rec.output(out, "lens_accuracy.csv");
    rec.write(out);
}

void cmd_heatmap(const AnalyzeOpts& o, RunRecord& rec) {
    auto in = load_for_analysis(o, rec);
    const int n_layers = in.model.config().n_layers;
    const auto layers = parse_layers(o.layers.empty() ? "all" : o.layers, n_layers);
    if (o.example < 0 || o.example >= static_cast<int>(in.examples.size())) {
        throw UsageError("--example outside 0.." + std::to_string(in.examples.size() - 1));
    }
    const auto& ex = in.examples[static_cast<size_t>(o.example)];
    const auto hm = module_heatmap(in.model, ex, layers, o.window);
    const fs::path out(o.out);
    prepare_out(out);
    CsvWriter csv((out / "heatmap.csv").string(), {"number", "offset", "layer", "attn_logit", "mlp_logit"});
    for (size_t r = 0; r < hm.numbers.size(); ++r) {
        for (size_t c = 0; c < hm.layers.size(); ++c) {
            const auto ri = static_cast<Eigen::Index>(r);
            const auto ci = static_cast<Eigen::Index>(c);
            csv.row({std::to_string(hm.numbers[r]), std::to_string(hm.numbers[r] - ex.answer),
                     std::to_string(hm.layers[c]), format_double(hm.attn(ri, ci)), format_double(hm.mlp(ri, ci))});
        }
    }
    csv.close();
    if (o.svg) {
        std::vector<std::string> rows, cols;
        for (int n : hm.numbers) {
            rows.push_back(std::to_string(n));
        }
        for (int l : hm.layers) {
            cols.push_back(std::to_string(l));
        }
        write_heatmap_svg((out / "heatmap_mlp.svg").string(), "MLP logits: " + ex.question, hm.mlp, rows, cols);
        write_heatmap_svg((out / "heatmap_attn.svg").string(), "attention logits: " + ex.question, hm.attn, rows,
                          cols);
    }
    rec.option("layers", to_json(layers));
    rec.option("example", o.example);
    rec.option("question", ex.question);
    rec.option("answer", ex.answer);
    rec.option("window", o.window);
    rec.option("clamped", hm.clamped);
    rec.output(out, "heatmap.csv");
    rec.write(out);
}

void cmd_spectrum(const AnalyzeOpts& o, RunRecord& rec) {
    auto in = load_for_analysis(o, rec);
    const int n_layers = in.model.config().n_layers;
    const auto layers = parse_layers(o.layers.empty() ? "band" : o.layers, n_layers);
    const auto module = module_kind_from_string(o.module);
    const FourierBasis basis(in.model.config().n_numbers);
    const int min_k = o.min_component.value_or(default_tau(basis.p()));
    const auto s = avg_spectrum(in.model, basis, in.examples, layers, module);
    const fs::path out(o.out);
    prepare_out(out);
    write_spectrum_file(out / "spectrum.csv", s);
    const auto flagged = write_outliers(out / "outliers.csv", s, min_k, o.top);
    if (o.svg) {
        spectrum_svg(out / "spectrum.svg", o.module + " logit spectrum", s);
    }
    std::cout << flagged.size() << " components above mean+4 sigma (k >= " << min_k << ")";
    for (const auto& f : flagged) {
        std::cout << ' ' << f.k;
    }
    std::cout << '\n';
    rec.option("module", o.module);
    rec.option("layers", to_json(layers));
    rec.option("min_component", min_k);
    rec.option("top", o.top);
    rec.output(out, "spectrum.csv");
    rec.output(out, "outliers.csv");
    rec.write(out);
}

void cmd_embed_spectrum(const AnalyzeOpts& o, RunRecord& rec) {
    MatD rows;
    if (!o.ckpt.empty()) {
        rows = number_rows(load_ckpt(o.ckpt, rec));
    } else if (o.embedding.starts_with("fourier:")) {
        if (o.p < 3 || o.d_model < 1) {
            throw UsageError("a synthetic embedding needs --p and --d-model");
        }
        rows = synth_fourier_embedding(o.p, o.d_model, parse_doubles(o.embedding.substr(8), "--embedding"),
                                       o.low_freq_weight, o.seed);
        rec.seed("embedding", o.seed);
        rec.option("low_freq_weight", o.low_freq_weight);
    } else if (o.embedding.starts_with("file:")) {
        rows = read_matrix_csv(o.embedding.substr(5));
        rec.input(o.embedding.substr(5));
    } else {
        throw UsageError("embed-spectrum needs --ckpt or --embedding fourier:...|file:PATH");
    }
    const FourierBasis basis(static_cast<int>(rows.rows()));
    const int min_k = o.min_component.value_or(default_tau(basis.p()));
    const auto s = embedding_spectrum(basis, rows);
    const fs::path out(o.out);
    prepare_out(out);
    write_spectrum_file(out / "embed_spectrum.csv", s);
    const auto flagged = write_outliers(out / "outliers.csv", s, min_k, o.top);
    if (o.svg) {
        spectrum_svg(out / "embed_spectrum.svg", "number embedding spectrum", s);
    }
    std::cout << flagged.size() << " components above mean+4 sigma (k >= " << min_k << ")";
    for (const auto& f : flagged) {
        std::cout << ' ' << f.k;
    }
    std::cout << '\n';
    rec.option("embedding", o.ckpt.empty() ? o.embedding : "checkpoint");
    rec.option("min_component", min_k);
    rec.option("top", o.top);
    rec.output(out, "embed_spectrum.csv");
    rec.output(out, "outliers.csv");
    rec.write(out);
}

void cmd_cluster(const AnalyzeOpts& o, RunRecord& rec) {
    if (o.ckpt.empty()) {
        throw UsageError("cluster needs --ckpt");
    }
    const auto rows = number_rows(load_ckpt(o.ckpt, rec));
    const auto res = cluster_embeddings(rows, o.k, o.seed, {.restarts = o.restarts, .max_iter = 300});
    const fs::path out(o.out);
    prepare_out(out);
    CsvWriter csv((out / "clusters.csv").string(), {"number", "cluster", "x", "y"});
    for (Eigen::Index n = 0; n < rows.rows(); ++n) {
        csv.row({std::to_string(n), std::to_string(res.assignment[static_cast<size_t>(n)]),
                 format_double(res.coords(n, 0)), format_double(res.coords(n, 1))});
    }
    csv.close();
    CsvWriter restarts((out / "restarts.csv").string(), {"restart", "inertia", "chosen"});
    for (size_t r = 0; r < res.restart_inertia.size(); ++r) {
        restarts.row({std::to_string(r), format_double(res.restart_inertia[r]),
                      static_cast<int>(r) == res.best_restart ? "1" : "0"});
    }
    restarts.close();
    if (o.svg) {
        std::vector<double> x, y;
        std::vector<std::string> labels;
        for (Eigen::Index n = 0; n < rows.rows(); ++n) {
            x.push_back(res.coords(n, 0));
            y.push_back(res.coords(n, 1));
            labels.push_back(std::to_string(n));
        }
        write_scatter_svg((out / "clusters.svg").string(), "number embeddings, k-means", x, y, res.assignment, labels);
    }
    rec.seed("kmeans", o.seed);
    rec.option("k", o.k);
    rec.option("restarts", o.restarts);
    rec.option("inertia", res.inertia);
    rec.output(out, "clusters.csv");
    rec.output(out, "restarts.csv");
    rec.write(out);
}

// ---------------------------------------------------------------- ablate

struct AblateOpts {
    std::string ckpt;
    std::string data;
    std::string run_file;
    std::string split = "val";
    std::optional<int> tau;
    std::string out;
};

std::string file_safe(const std::string& name) {
    std::string s;
    for (char c : name) {
        s += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
    }
    return s;
}

void cmd_ablate(const AblateOpts& o, RunRecord& rec) {
    auto state = load_ckpt(o.ckpt, rec);
    const auto data = load_data(o.data, rec);
    check_compatible(state.config(), data.vocab);
    const auto examples = data.dataset.subset(split_from_string(o.split));
    if (examples.empty()) {
        throw std::invalid_argument("split '" + o.split + "' is empty");
    }
    const int p = state.config().n_numbers;
    std::vector<AblationSpec> specs;
    if (!o.run_file.empty()) {
        specs = parse_run_file(read_toml_file(o.run_file), p);
        rec.input(o.run_file);
    } else {
        specs = standard_table_specs(p, o.tau.value_or(default_tau(p)));
        rec.option("tau", o.tau.value_or(default_tau(p)));
    }
    const auto model = state.analysis();
    const FourierBasis basis(p);
    ProjectorCache cache;
    const auto reports = run_sweep(model, basis, examples, specs, cache);

    const fs::path out(o.out);
    prepare_out(out);
    write_ablation_table((out / "ablation.csv").string(), reports);
    rec.output(out, "ablation.csv");
    fs::create_directories(out / "histograms");
    std::vector<std::string> seen;
    for (const auto& r : reports) {
        auto stem = file_safe(r.spec.name);
        while (std::find(seen.begin(), seen.end(), stem) != seen.end()) {
            stem += "_";
        }
        seen.push_back(stem);
        const auto name = "histograms/" + stem + ".csv";
        write_error_histogram((out / name).string(), r.errors);
        rec.output(out, name);
        std::cout << r.spec.name << ": accuracy " << r.accuracy << " loss " << r.loss << '\n';
    }
    rec.option("split", o.split);
    rec.option("specs", ordered_json(specs.size()));
    rec.write(out);
}

// ---------------------------------------------------------------- dispatch

int run(std::vector<std::string> args, bool allow_replay);

int cmd_replay(const std::string& manifest_path, const std::string& out, bool check) {
    std::ifstream is(manifest_path);
    if (!is) {
        throw std::runtime_error("cannot read '" + manifest_path + "'");
    }
    const auto manifest = nlohmann::json::parse(is);
    if (manifest.value("version", "") != kToolVersion) {
        throw std::runtime_error("manifest was written by fprobe " + manifest.value("version", "?") +
                                 ", this is " + std::string(kToolVersion));
    }
    if (const auto changed = changed_inputs(manifest); !changed.empty()) {
        throw std::runtime_error("input changed since the manifest was written: " + changed.front());
    }
    const auto argv = replay_argv(manifest, out);
    const int rc = run(argv, false);
    if (rc != 0 || !check) {
        return rc;
    }
    fs::path out_dir;
    for (size_t i = 0; i + 1 < argv.size(); ++i) {
        if (argv[i] == "--out") {
            out_dir = argv[i + 1];
        }
    }
    for (const auto& a : argv) {
        if (a.starts_with("--out=")) {
            out_dir = a.substr(6);
        }
    }
    if (const auto diff = changed_csv_outputs(manifest, out_dir); !diff.empty()) {
        throw std::runtime_error("replayed output differs from the manifest: " + diff.front());
    }
    std::cout << "replay matches manifest (" << manifest.at("outputs").size() << " outputs)\n";
    return 0;
}

void emit_error(const std::string& kind, const std::string& message, const std::string& command) {
    ordered_json j;
    j["error"] = {{"kind", kind}, {"message", message}, {"command", command}};
    std::cerr << j.dump() << std::endl;
}

int run(std::vector<std::string> args, bool allow_replay) {
    CLI::App app{"Fourier probes for transformer arithmetic"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    GenDataOpts gd;
    auto* gen = app.add_subcommand("gen-data", "generate an arithmetic dataset");
    gen->add_option("--task", gd.task, "add | rpn | mul")->capture_default_str();
    gen->add_option("--max-operand", gd.max_operand, "largest operand (add, rpn)")->capture_default_str();
    gen->add_option("--max-product", gd.max_product, "largest product (mul)");
    gen->add_option("--vocab-max", gd.vocab_max, "largest number token (default: largest answer)");
    gen->add_option("--seed", gd.seed, "split seed")->capture_default_str();
    gen->add_option("--out", gd.out, "output directory")->required();

    TrainOpts tr;
    auto* trn = app.add_subcommand("train", "train a model on a gen-data directory");
    trn->add_option("--config", tr.config, "TOML with [model], [train], [embedding] tables");
    trn->add_option("--data", tr.data, "gen-data output directory")->required();
    trn->add_option("--embedding", tr.embedding, "random | fourier:P1,P2,... | file:PATH");
    trn->add_flag("--freeze-embedding", tr.freeze, "never update the injected number rows");
    trn->add_option("--seed", tr.seed, "model seed");
    trn->add_option("--n-layers", tr.n_layers);
    trn->add_option("--d-model", tr.d_model);
    trn->add_option("--n-heads", tr.n_heads);
    trn->add_option("--d-ff", tr.d_ff);
    trn->add_option("--max-seq-len", tr.max_seq_len);
    trn->add_option("--epochs", tr.epochs);
    trn->add_option("--batch-size", tr.batch_size);
    trn->add_option("--lr", tr.lr, "initial learning rate");
    trn->add_option("--lr-end", tr.lr_end, "final learning rate");
    trn->add_option("--weight-decay", tr.weight_decay);
    trn->add_option("--low-freq-weight", tr.low_freq_weight, "synthetic embedding: weight of k <= 5 waves");
    trn->add_flag("--quiet", tr.quiet, "no per-epoch lines");
    trn->add_flag("!--no-svg", tr.svg, "skip plots");
    trn->add_option("--out", tr.out, "output directory")->required();

    AnalyzeOpts an;
    auto* analyze = app.add_subcommand("analyze", "logit-lens and embedding analyses");
    analyze->require_subcommand(1);
    auto common = [&](CLI::App* sub, bool needs_data) {
        sub->add_option("--ckpt", an.ckpt, "checkpoint (model.fprb)");
        if (needs_data) {
            sub->add_option("--data", an.data, "gen-data output directory");
            sub->add_option("--layers", an.layers, "last | band | all | a-b | l1,l2,...");
            sub->add_option("--module", an.module, "attn | mlp")->capture_default_str();
            sub->add_option("--split", an.split, "train | val | test")->capture_default_str();
        }
        sub->add_option("--out", an.out, "output directory")->required();
        sub->add_flag("!--no-svg", an.svg, "skip plots");
    };
    auto* lens_acc = analyze->add_subcommand("lens-accuracy", "per-layer accuracy within k of the answer");
    common(lens_acc, true);
    lens_acc->add_option("--ks", an.ks, "comma-separated tolerances")->capture_default_str();
    auto* heat = analyze->add_subcommand("heatmap", "module logits around the answer for one example");
    common(heat, true);
    heat->add_option("--example", an.example, "index within the split")->capture_default_str();
    heat->add_option("--window", an.window, "numbers either side of the answer")->capture_default_str();
    auto* spec = analyze->add_subcommand("spectrum", "average Fourier spectrum of module logits");
    common(spec, true);
    spec->add_option("--top", an.top, "rows in outliers.csv")->capture_default_str();
    spec->add_option("--min-component", an.min_component, "outlier band start (default: tau)");
    auto* emb = analyze->add_subcommand("embed-spectrum", "Fourier spectrum of the number embeddings");
    common(emb, false);
    emb->add_option("--embedding", an.embedding, "fourier:P1,... | file:PATH (instead of --ckpt)");
    emb->add_option("--p", an.p, "numbers in a synthetic embedding");
    emb->add_option("--d-model", an.d_model, "width of a synthetic embedding");
    emb->add_option("--low-freq-weight", an.low_freq_weight)->capture_default_str();
    emb->add_option("--seed", an.seed)->capture_default_str();
    emb->add_option("--top", an.top)->capture_default_str();
    emb->add_option("--min-component", an.min_component);
    auto* clu = analyze->add_subcommand("cluster", "k-means over the number embeddings");
    common(clu, false);
    clu->add_option("--k", an.k, "clusters")->capture_default_str();
    clu->add_option("--restarts", an.restarts)->capture_default_str();
    clu->add_option("--seed", an.seed)->capture_default_str();

    AblateOpts ab;
    auto* abl = app.add_subcommand("ablate", "frequency-band ablation sweep");
    abl->add_option("--ckpt", ab.ckpt)->required();
    abl->add_option("--data", ab.data)->required();
    abl->add_option("--run-file", ab.run_file, "TOML with [[ablation]] tables (default: the 7-row table)");
    abl->add_option("--split", ab.split)->capture_default_str();
    abl->add_option("--tau", ab.tau, "threshold for the default table");
    abl->add_option("--out", ab.out)->required();

    std::string manifest_path, replay_out;
    bool check = false;
    CLI::App* rep = nullptr;
    if (allow_replay) {
        rep = app.add_subcommand("replay", "re-run a command from its manifest.json");
        rep->add_option("--manifest", manifest_path)->required();
        rep->add_option("--out", replay_out, "output directory (default: the original)");
        rep->add_flag("--check", check, "fail unless CSV outputs match the manifest hashes");
    }

    std::string command = args.empty() ? "" : args.front();
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        emit_error("usage", e.what(), command);
        return 2;
    }

    try {
        if (gen->parsed()) {
            RunRecord rec("gen-data", normalize_argv(args));
            cmd_gen_data(gd, rec);
        } else if (trn->parsed()) {
            RunRecord rec("train", normalize_argv(args));
            cmd_train(tr, rec);
        } else if (abl->parsed()) {
            RunRecord rec("ablate", normalize_argv(args));
            cmd_ablate(ab, rec);
        } else if (rep != nullptr && rep->parsed()) {
            return cmd_replay(manifest_path, replay_out, check);
        } else {
            const std::pair<CLI::App*, void (*)(const AnalyzeOpts&, RunRecord&)> subs[] = {
                {lens_acc, cmd_lens_accuracy}, {heat, cmd_heatmap},   {spec, cmd_spectrum},
                {emb, cmd_embed_spectrum},     {clu, cmd_cluster},
            };
            for (const auto& [sub, fn] : subs) {
                if (sub->parsed()) {
                    command = "analyze " + sub->get_name();
                    RunRecord rec(command, normalize_argv(args));
                    fn(an, rec);
                }
            }
        }
    } catch (const UsageError& e) {
        emit_error("usage", e.what(), command);
        return 2;
    } catch (const std::invalid_argument& e) {
        emit_error("invalid_argument", e.what(), command);
        return 1;
    } catch (const TrainingDiverged& e) {
        emit_error("diverged", e.what(), command);
        return 1;
    } catch (const std::exception& e) {
        emit_error("runtime", e.what(), command);
        return 1;
    }
    return 0;
}

}  // namespace
}  // namespace fprobe::cli

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return fprobe::cli::run(std::move(args), true);
}

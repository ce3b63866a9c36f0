#include "fprobe/lens.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fprobe {

std::string to_string(ModuleKind m) { return m == ModuleKind::attn ? "attn" : "mlp"; }

ModuleKind module_kind_from_string(const std::string& s) {
    if (s == "attn") {
        return ModuleKind::attn;
    }
    if (s == "mlp") {
        return ModuleKind::mlp;
    }
    throw std::invalid_argument("unknown module '" + s + "' (expected attn or mlp)");
}

LayerLogits logit_lens(const ResidualTrace& trace, const MatD& unembed, int row) {
    if (trace.layers.empty()) {
        throw std::invalid_argument("logit_lens: trace has no layers");
    }
    const auto n_rows = trace.layers.front().h_in.rows();
    const auto r = row < 0 ? n_rows + row : row;
    if (r < 0 || r >= n_rows) {
        throw std::invalid_argument("logit_lens: trace row out of range");
    }
    LayerLogits out;
    out.residual.push_back(unembed * trace.layers.front().h_in.row(r).transpose());
    for (const auto& lt : trace.layers) {
        if (lt.h_out.rows() != n_rows) {
            throw std::invalid_argument("logit_lens: trace layers disagree on traced positions");
        }
        out.attn.push_back(unembed * lt.attn_out.row(r).transpose());
        out.mlp.push_back(unembed * lt.mlp_out.row(r).transpose());
        out.residual.push_back(unembed * lt.h_out.row(r).transpose());
    }
    return out;
}

LayerLogits lens_for_example(const AnalysisModel& model, const Example& ex) {
    const int last = -1;
    const auto [logits, trace] = model.forward_with_trace(ex.tokens, std::span(&last, 1));
    return logit_lens(trace, model.unembedding());
}

AccuracyTable accuracy_within(const AnalysisModel& model, std::span<const Example> examples, std::vector<int> ks) {
    if (examples.empty()) {
        throw std::invalid_argument("accuracy_within: empty split");
    }
    if (ks.empty() || !std::is_sorted(ks.begin(), ks.end()) || ks.front() < 0) {
        throw std::invalid_argument("accuracy_within: ks must be non-negative and sorted ascending");
    }
    const int n_layers = model.config().n_layers;
    // errs[i][l] = |argmax_l - answer|
    std::vector<std::vector<int>> errs(examples.size());
    parallel_for(examples.size(), [&](size_t i) {
        const auto lens = lens_for_example(model, examples[i]);
        auto& e = errs[i];
        e.resize(static_cast<size_t>(n_layers + 1));
        for (int l = 0; l <= n_layers; ++l) {
            e[static_cast<size_t>(l)] = std::abs(argmax_first(lens.residual[static_cast<size_t>(l)]) - examples[i].answer);
        }
    });
    AccuracyTable t;
    t.ks = std::move(ks);
    t.acc = MatD::Zero(n_layers + 1, static_cast<Eigen::Index>(t.ks.size()));
    for (const auto& e : errs) {
        for (int l = 0; l <= n_layers; ++l) {
            for (size_t j = 0; j < t.ks.size(); ++j) {
                if (e[static_cast<size_t>(l)] <= t.ks[j]) {
                    t.acc(l, static_cast<Eigen::Index>(j)) += 1.0;
                }
            }
        }
    }
    t.acc /= static_cast<double>(examples.size());
    return t;
}

namespace {

void check_layers(const std::vector<int>& layers, int n_layers) {
    if (layers.empty()) {
        throw std::invalid_argument("layer range is empty");
    }
    for (int l : layers) {
        if (l < 1 || l > n_layers) {
            throw std::invalid_argument("layer " + std::to_string(l) + " outside 1.." + std::to_string(n_layers));
        }
    }
}

}  // namespace

Heatmap module_heatmap(const AnalysisModel& model, const Example& ex, std::vector<int> layers, int window) {
    const int p = model.config().n_numbers;
    check_layers(layers, model.config().n_layers);
    if (window < 0 || window > p / 2) {
        throw std::invalid_argument("module_heatmap: window must be in [0, p/2]");
    }
    const auto lens = lens_for_example(model, ex);
    Heatmap hm;
    hm.layers = std::move(layers);
    const auto rows = 2 * window + 1;
    const auto cols = static_cast<Eigen::Index>(hm.layers.size());
    hm.mlp.resize(rows, cols);
    hm.attn.resize(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const int number = ex.answer - window + r;
        hm.numbers.push_back(number);
        const bool inside = number >= 0 && number < p;
        hm.clamped = hm.clamped || !inside;
        for (Eigen::Index c = 0; c < cols; ++c) {
            const int l = hm.layers[static_cast<size_t>(c)];
            hm.mlp(r, c) = inside ? lens.module(ModuleKind::mlp, l)[number] : std::numeric_limits<double>::quiet_NaN();
            hm.attn(r, c) = inside ? lens.module(ModuleKind::attn, l)[number] : std::numeric_limits<double>::quiet_NaN();
        }
    }
    return hm;
}

Spectrum avg_spectrum(const AnalysisModel& model, const FourierBasis& basis, std::span<const Example> examples,
                      std::vector<int> layers, ModuleKind module) {
    if (examples.empty()) {
        throw std::invalid_argument("avg_spectrum: empty split");
    }
    check_layers(layers, model.config().n_layers);
    if (basis.p() != model.config().n_numbers) {
        throw std::invalid_argument("avg_spectrum: basis p does not match the model's number vocabulary");
    }
    std::vector<Eigen::VectorXd> per_example(examples.size());
    parallel_for(examples.size(), [&](size_t i) {
        const auto lens = lens_for_example(model, examples[i]);
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(basis.max_component() + 1);
        for (int l : layers) {
            acc += dft(basis, lens.module(module, l)).magnitudes;
        }
        per_example[i] = std::move(acc);
    });
    Spectrum s;
    s.p = basis.p();
    s.magnitudes = Eigen::VectorXd::Zero(basis.max_component() + 1);
    for (const auto& v : per_example) {
        s.magnitudes += v;
    }
    s.magnitudes /= static_cast<double>(examples.size() * layers.size());
    return s;
}

std::vector<int> default_layer_band(int n_layers) {
    const int count = std::min(n_layers, std::max(2, static_cast<int>(std::lround(15.0 * n_layers / 48.0))));
    std::vector<int> out;
    for (int l = n_layers - count + 1; l <= n_layers; ++l) {
        out.push_back(l);
    }
    return out;
}

double lag_autocorrelation(std::span<const double> v, int lag) {
    double sum = 0.0;
    int count = 0;
    for (double x : v) {
        if (!std::isnan(x)) {
            sum += x;
            ++count;
        }
    }
    if (count < 2 || lag < 0 || lag >= static_cast<int>(v.size())) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    const double mean = sum / count;
    double num = 0.0;
    double den = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        if (!std::isnan(v[i])) {
            den += (v[i] - mean) * (v[i] - mean);
        }
        if (i + static_cast<size_t>(lag) < v.size() && !std::isnan(v[i]) && !std::isnan(v[i + static_cast<size_t>(lag)])) {
            num += (v[i] - mean) * (v[i + static_cast<size_t>(lag)] - mean);
        }
    }
    return den > 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace fprobe

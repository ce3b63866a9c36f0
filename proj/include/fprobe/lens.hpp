#pragma once

#include "fprobe/fourier.hpp"
#include "fprobe/model.hpp"

#include <vector>

namespace fprobe {

enum class ModuleKind { attn, mlp };

std::string to_string(ModuleKind m);
ModuleKind module_kind_from_string(const std::string& s);

/// Logit-lens readouts at one position. residual[l] = W^U h^(l) for l = 0..L
/// (l = 0 is the embedding sum); attn[l-1] and mlp[l-1] are W^U applied to the
/// outputs of block l.
struct LayerLogits {
    std::vector<Eigen::VectorXd> residual;
    std::vector<Eigen::VectorXd> attn;
    std::vector<Eigen::VectorXd> mlp;

    int n_layers() const { return static_cast<int>(attn.size()); }
    const Eigen::VectorXd& module(ModuleKind m, int layer) const {
        return m == ModuleKind::attn ? attn.at(static_cast<size_t>(layer - 1))
                                     : mlp.at(static_cast<size_t>(layer - 1));
    }
};

/// Reads the trace row `row` (default: last traced position).
LayerLogits logit_lens(const ResidualTrace& trace, const MatD& unembed, int row = -1);

/// Lens at the final token of one example.
LayerLogits lens_for_example(const AnalysisModel& model, const Example& ex);

/// acc(l, j) = fraction of examples whose layer-l lens argmax lies within ks[j]
/// of the answer; rows l = 0..L.
struct AccuracyTable {
    std::vector<int> ks;
    MatD acc;
};

AccuracyTable accuracy_within(const AnalysisModel& model, std::span<const Example> examples,
                              std::vector<int> ks);

/// Module logits around the answer: rows are numbers answer-window..answer+window,
/// columns follow `layers`. Rows that fall outside 0..p-1 hold NaN and set `clamped`.
struct Heatmap {
    std::vector<int> numbers;
    std::vector<int> layers;
    MatD mlp;
    MatD attn;
    bool clamped = false;
};

Heatmap module_heatmap(const AnalysisModel& model, const Example& ex, std::vector<int> layers, int window);

/// Mean over examples and layers of the per-example module-logit magnitudes.
Spectrum avg_spectrum(const AnalysisModel& model, const FourierBasis& basis,
                      std::span<const Example> examples, std::vector<int> layers, ModuleKind module);

/// Last max(2, round(15 L / 48)) blocks, 1-based.
std::vector<int> default_layer_band(int n_layers);

/// Normalized autocorrelation of `v` at `lag` (NaN entries skipped pairwise).
double lag_autocorrelation(std::span<const double> v, int lag);

}  // namespace fprobe

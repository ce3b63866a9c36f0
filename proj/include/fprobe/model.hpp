#pragma once

#include "fprobe/common.hpp"
#include "fprobe/dataset.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fprobe {

enum class EmbeddingMode { random, injected_frozen, injected_trainable };

std::string to_string(EmbeddingMode m);
EmbeddingMode embedding_mode_from_string(const std::string& s);

struct ModelConfig {
    int n_layers = 8;
    int d_model = 128;
    int n_heads = 4;
    int d_ff = 512;
    int vocab_size = 0;  // all tokens, numbers first
    int n_numbers = 0;   // p; the unembedding only scores number tokens
    int max_seq_len = 16;
    EmbeddingMode embedding_mode = EmbeddingMode::random;
    uint64_t seed = 0;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct BlockWeights {
    Mat<T> ln1_gain, ln1_bias;    // 1 x D
    Mat<T> w_qkv, b_qkv;          // D x 3D, 1 x 3D
    Mat<T> w_attn_out, b_attn_out;  // D x D, 1 x D
    Mat<T> ln2_gain, ln2_bias;    // 1 x D
    Mat<T> w_fc, b_fc;            // D x F, 1 x F
    Mat<T> w_proj, b_proj;        // F x D, 1 x D
};

/// All trainable tensors. Biases and layer-norm vectors are stored as 1 x n rows.
template <class T>
struct Weights {
    Mat<T> token_embedding;     // W^E: vocab x D
    Mat<T> position_embedding;  // max_seq_len x D
    std::vector<BlockWeights<T>> blocks;
    Mat<T> unembedding;  // W^U: p x D

    static Weights zeros(const ModelConfig& c);

    // fn(name, tensor, decays) over every tensor in a fixed order.
    template <class Fn>
    void visit(Fn&& fn);
    template <class Fn>
    void visit(Fn&& fn) const;

    template <class U>
    Weights<U> cast() const;
};

/// Per-layer projectors substituted for module outputs during a forward pass.
/// nullptr leaves that module untouched. Positions index tokens in the
/// sequence; negative values count from the end. Empty positions = all tokens.
template <class T>
struct ModuleHooks {
    std::vector<const Mat<T>*> attn;
    std::vector<const Mat<T>*> mlp;
    std::vector<int> positions;
};

/// Residual stream at traced positions; rows follow `positions`.
struct LayerTrace {
    MatD h_in;
    MatD attn_out;
    MatD mlp_out;
    MatD h_out;
};

struct ResidualTrace {
    std::vector<int> positions;
    std::vector<LayerTrace> layers;  // layer l here is block l+1
};

/// Sequences packed row-wise.
struct PackedBatch {
    std::vector<int> tokens;
    std::vector<int> offsets;  // size = n_seq + 1

    static PackedBatch from(std::span<const std::vector<int>> seqs);
    int n_seq() const { return static_cast<int>(offsets.size()) - 1; }
    int length(int s) const { return offsets[s + 1] - offsets[s]; }
    int last_row(int s) const { return offsets[s + 1] - 1; }
};

template <class T>
struct ForwardCache;

/// Decoder-only pre-norm transformer with learned absolute positions, GELU MLPs,
/// untied embeddings and a linear readout: logits = W^U h^(L) at the last token.
template <class T>
class Transformer {
public:
    Transformer() = default;
    Transformer(ModelConfig config, Weights<T> weights);

    static Transformer initialize(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    const Weights<T>& weights() const { return weights_; }
    Weights<T>& mutable_weights() { return weights_; }
    void set_embedding_mode(EmbeddingMode mode) { config_.embedding_mode = mode; }
    const Mat<T>& unembedding() const { return weights_.unembedding; }

    /// Logits over number tokens at each sequence's last position (n_seq x p).
    Mat<T> forward(const PackedBatch& batch, ForwardCache<T>* cache = nullptr,
                   const ModuleHooks<T>* hooks = nullptr) const;

    /// Mean answer-token cross-entropy; accumulates its gradient into `grad`.
    T loss_and_grad(const PackedBatch& batch, std::span<const int> answers, Weights<T>& grad) const;

    T loss(const PackedBatch& batch, std::span<const int> answers) const;

    std::pair<Eigen::VectorXd, ResidualTrace> forward_with_trace(
        std::span<const int> tokens, std::span<const int> positions,
        const ModuleHooks<T>* hooks = nullptr) const;

    template <class U>
    Transformer<U> cast() const {
        return Transformer<U>(config_, weights_.template cast<U>());
    }

private:
    void check_batch(const PackedBatch& batch) const;

    ModelConfig config_;
    Weights<T> weights_;
};

using AnalysisModel = Transformer<double>;

struct ModelState {
    Transformer<float> model;
    int64_t step = 0;

    const ModelConfig& config() const { return model.config(); }
    AnalysisModel analysis() const { return model.cast<double>(); }
};

ModelState init_model(const ModelConfig& config);

struct TrainHyper {
    int epochs = 100;
    int batch_size = 16;
    double lr_start = 1e-3;
    double lr_end = 0.0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    nlohmann::ordered_json to_json() const;
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    ModelState state;
    std::vector<EpochMetrics> metrics;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(int64_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
    int64_t step() const { return step_; }

private:
    int64_t step_;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// AdamW with a linear learning-rate ramp from lr_start to lr_end and no warmup.
/// Batches are reshuffled every epoch from a seed derived from config.seed.
TrainResult train(ModelState state, const NumberDataset& data, const TrainHyper& hyper,
                  const EpochCallback& on_epoch = {});
TrainResult train(const ModelConfig& config, const NumberDataset& data, const TrainHyper& hyper,
                  const EpochCallback& on_epoch = {});

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<int> predictions;  // argmax over numbers, ties to the smaller number
};

template <class T>
EvalResult evaluate(const Transformer<T>& model, std::span<const Example> examples,
                    const ModuleHooks<T>* hooks = nullptr, int batch_size = 64);

/// Argmax with ties broken toward the smaller index.
template <class Derived>
int argmax_first(const Eigen::DenseBase<Derived>& v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i) {
        if (v(i) > v(best)) {
            best = i;
        }
    }
    return best;
}

/// Replace the number-token rows of W^E. Accepts p x D or vocab x D (only number
/// rows are taken). With freeze, those rows are never updated again.
ModelState inject_embeddings(ModelState state, const MatD& embedding, bool freeze);

/// Stand-in for a pre-trained number embedding: each column mixes the constant
/// wave, low-frequency waves (k <= 5) scaled by low_freq_weight, and the sin/cos
/// waves at the requested periods, then is scaled to unit norm.
MatD synth_fourier_embedding(int p, int d_model, std::span<const double> periods,
                             double low_freq_weight, uint64_t seed);

/// Component index nearest to period T: round((p-1)/T).
int component_for_period(int p, double period);

// Checkpoint: "FPRB1", u64 JSON length, JSON header, then per tensor
// u32 name length, name, u32 rank, u64 dims, float32 LE data (row-major).
void save_checkpoint(std::ostream& os, const ModelState& state);
ModelState load_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const ModelState& state);
ModelState load_checkpoint(const std::string& path);

}  // namespace fprobe

#include "fprobe/model_impl.hpp"

#include "fprobe/model.hpp"

#include "fprobe/fourier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

namespace fprobe {

template <class T>
struct ForwardCache {
    struct Layer {
        Mat<T> h_in;
        Mat<T> ln1_xhat, ln1_out;
        std::vector<T> ln1_rstd;
        Mat<T> qkv;
        std::vector<Mat<T>> probs;  // [seq * n_heads + head], T x T
        Mat<T> ctx;
        Mat<T> attn_out;
        Mat<T> h_mid;
        Mat<T> ln2_xhat, ln2_out;
        std::vector<T> ln2_rstd;
        Mat<T> fc_pre, fc_act;
        Mat<T> mlp_out;
        Mat<T> h_out;
    };
    std::vector<Layer> layers;
    Mat<T> last_hidden;
};

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

template <class T>
void layer_norm(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, Mat<T>& xhat,
                std::vector<T>& rstd, Mat<T>& y) {
    const auto n = x.rows();
    xhat.resize(n, x.cols());
    rstd.resize(static_cast<size_t>(n));
    for (Eigen::Index r = 0; r < n; ++r) {
        const T mean = x.row(r).mean();
        auto centered = (x.row(r).array() - mean).eval();
        const T var = centered.square().mean();
        const T rs = T(1) / std::sqrt(var + T(kLayerNormEps));
        rstd[static_cast<size_t>(r)] = rs;
        xhat.row(r) = centered * rs;
    }
    y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

// dx for y = LN(x); accumulates gain/bias gradients.
template <class T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const std::vector<T>& rstd,
                           const Mat<T>& gain, Mat<T>& dgain, Mat<T>& dbias) {
    dgain += (dy.array() * xhat.array()).colwise().sum().matrix();
    dbias += dy.colwise().sum();
    const Mat<T> dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const T mean_d = dxhat.row(r).mean();
        const T mean_dx = (dxhat.row(r).array() * xhat.row(r).array()).mean();
        dx.row(r) = rstd[static_cast<size_t>(r)] *
                    (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
    }
    return dx;
}

template <class T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)
template <class T>
constexpr T kGeluA = T(0.044715);

template <class T>
Mat<T> gelu(const Mat<T>& x) {
    return x.unaryExpr([](T v) {
        const T t = std::tanh(kGeluC<T> * (v + kGeluA<T> * v * v * v));
        return T(0.5) * v * (T(1) + t);
    });
}

template <class T>
Mat<T> gelu_grad(const Mat<T>& x) {
    return x.unaryExpr([](T v) {
        const T t = std::tanh(kGeluC<T> * (v + kGeluA<T> * v * v * v));
        return T(0.5) * (T(1) + t) +
               T(0.5) * v * (T(1) - t * t) * kGeluC<T> * (T(1) + T(3) * kGeluA<T> * v * v);
    });
}

template <class T>
void add_row_bias(Mat<T>& m, const Mat<T>& bias) {
    m.rowwise() += bias.row(0);
}

// Applies row-vector projector hooks in place at the selected positions.
template <class T>
void apply_hook(Mat<T>& out, const Mat<T>* proj, const PackedBatch& batch,
                const std::vector<int>& positions) {
    if (proj == nullptr) {
        return;
    }
    for (int s = 0; s < batch.n_seq(); ++s) {
        const int len = batch.length(s);
        const int off = batch.offsets[s];
        if (positions.empty()) {
            out.middleRows(off, len) = (out.middleRows(off, len) * (*proj)).eval();
            continue;
        }
        for (int pos : positions) {
            const int t = pos < 0 ? len + pos : pos;
            if (t >= 0 && t < len) {
                out.row(off + t) = (out.row(off + t) * (*proj)).eval();
            }
        }
    }
}

template <class T>
void softmax_rows_causal(Mat<T>& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const auto valid = i + 1;
        const T mx = s.row(i).head(valid).maxCoeff();
        T sum = 0;
        for (Eigen::Index j = 0; j < valid; ++j) {
            s(i, j) = std::exp(s(i, j) - mx);
            sum += s(i, j);
        }
        for (Eigen::Index j = 0; j < valid; ++j) {
            s(i, j) /= sum;
        }
        for (Eigen::Index j = valid; j < s.cols(); ++j) {
            s(i, j) = 0;
        }
    }
}

}  // namespace

std::string to_string(EmbeddingMode m) {
    switch (m) {
        case EmbeddingMode::random:
            return "random";
        case EmbeddingMode::injected_frozen:
            return "injected_frozen";
        case EmbeddingMode::injected_trainable:
            return "injected_trainable";
    }
    return "?";
}

EmbeddingMode embedding_mode_from_string(const std::string& s) {
    if (s == "random") {
        return EmbeddingMode::random;
    }
    if (s == "injected_frozen") {
        return EmbeddingMode::injected_frozen;
    }
    if (s == "injected_trainable") {
        return EmbeddingMode::injected_trainable;
    }
    throw std::invalid_argument("unknown embedding mode '" + s + "'");
}

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) {
            throw std::invalid_argument("ModelConfig: " + msg);
        }
    };
    require(n_layers >= 1, "n_layers must be >= 1");
    require(d_model >= 1 && n_heads >= 1, "d_model and n_heads must be positive");
    require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
    require(d_ff >= 1, "d_ff must be positive");
    require(n_numbers >= 3, "n_numbers (p) must be >= 3");
    require(vocab_size >= n_numbers, "vocab_size must be >= p");
    require(max_seq_len >= 1, "max_seq_len must be positive");
}

nlohmann::ordered_json ModelConfig::to_json() const {
    nlohmann::ordered_json j;
    j["n_layers"] = n_layers;
    j["d_model"] = d_model;
    j["n_heads"] = n_heads;
    j["d_ff"] = d_ff;
    j["vocab_size"] = vocab_size;
    j["n_numbers"] = n_numbers;
    j["max_seq_len"] = max_seq_len;
    j["embedding_mode"] = to_string(embedding_mode);
    j["seed"] = seed;
    return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.n_numbers = j.at("n_numbers").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.embedding_mode = embedding_mode_from_string(j.at("embedding_mode").get<std::string>());
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

nlohmann::ordered_json TrainHyper::to_json() const {
    nlohmann::ordered_json j;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["lr_start"] = lr_start;
    j["lr_end"] = lr_end;
    j["weight_decay"] = weight_decay;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["eps"] = eps;
    return j;
}

PackedBatch PackedBatch::from(std::span<const std::vector<int>> seqs) {
    PackedBatch b;
    b.offsets.reserve(seqs.size() + 1);
    b.offsets.push_back(0);
    for (const auto& s : seqs) {
        b.tokens.insert(b.tokens.end(), s.begin(), s.end());
        b.offsets.push_back(static_cast<int>(b.tokens.size()));
    }
    return b;
}

template <class T>
Transformer<T>::Transformer(ModelConfig config, Weights<T> weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
    config_.validate();
    if (weights_.blocks.size() != static_cast<size_t>(config_.n_layers) ||
        weights_.unembedding.rows() != config_.n_numbers ||
        weights_.unembedding.cols() != config_.d_model ||
        weights_.token_embedding.rows() != config_.vocab_size) {
        throw std::invalid_argument("Transformer: weights do not match config");
    }
}

template <class T>
Transformer<T> Transformer<T>::initialize(const ModelConfig& config) {
    config.validate();
    auto w = Weights<T>::zeros(config);
    Rng rng(derive_seed(config.seed, 7));
    const double proj_std = kInitStd / std::sqrt(2.0 * config.n_layers);
    w.visit([&](const std::string& name, Mat<T>& t, bool) {
        const bool is_gain = name.find(".gain") != std::string::npos;
        const bool is_bias = name.find(".b_") != std::string::npos || name.find(".bias") != std::string::npos;
        if (is_gain) {
            t.setOnes();
        } else if (!is_bias) {
            const bool residual_proj = name.ends_with("attn.w_out") || name.ends_with("mlp.w_proj");
            const double sd = residual_proj ? proj_std : kInitStd;
            for (Eigen::Index i = 0; i < t.size(); ++i) {
                t.data()[i] = static_cast<T>(sd * rng.normal());
            }
        }
    });
    return Transformer(config, std::move(w));
}

template <class T>
void Transformer<T>::check_batch(const PackedBatch& batch) const {
    if (batch.n_seq() < 1) {
        throw std::invalid_argument("forward: empty batch");
    }
    for (int s = 0; s < batch.n_seq(); ++s) {
        const int len = batch.length(s);
        if (len < 1) {
            throw std::invalid_argument("forward: empty sequence");
        }
        if (len > config_.max_seq_len) {
            throw std::invalid_argument("forward: sequence length " + std::to_string(len) +
                                        " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
        }
    }
    for (int tok : batch.tokens) {
        if (tok < 0 || tok >= config_.vocab_size) {
            throw std::invalid_argument("forward: token id " + std::to_string(tok) + " out of range");
        }
    }
}

template <class T>
Mat<T> Transformer<T>::forward(const PackedBatch& batch, ForwardCache<T>* cache,
                               const ModuleHooks<T>* hooks) const {
    check_batch(batch);
    const int d = config_.d_model;
    const int n_heads = config_.n_heads;
    const int dh = d / n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const auto n = static_cast<Eigen::Index>(batch.tokens.size());
    const std::vector<int> no_positions;
    const auto& positions = hooks ? hooks->positions : no_positions;

    if (hooks && ((!hooks->attn.empty() && hooks->attn.size() != static_cast<size_t>(config_.n_layers)) ||
                  (!hooks->mlp.empty() && hooks->mlp.size() != static_cast<size_t>(config_.n_layers)))) {
        throw std::invalid_argument("forward: hooks must list one entry per layer");
    }

    ForwardCache<T> local;
    ForwardCache<T>& c = cache ? *cache : local;
    c.layers.assign(static_cast<size_t>(config_.n_layers), {});

    Mat<T> h(n, d);
    for (int s = 0; s < batch.n_seq(); ++s) {
        for (int t = 0; t < batch.length(s); ++t) {
            const int row = batch.offsets[s] + t;
            h.row(row) = weights_.token_embedding.row(batch.tokens[static_cast<size_t>(row)]) +
                         weights_.position_embedding.row(t);
        }
    }

    for (int l = 0; l < config_.n_layers; ++l) {
        const auto& w = weights_.blocks[static_cast<size_t>(l)];
        auto& lc = c.layers[static_cast<size_t>(l)];
        lc.h_in = h;
        layer_norm(lc.h_in, w.ln1_gain, w.ln1_bias, lc.ln1_xhat, lc.ln1_rstd, lc.ln1_out);
        lc.qkv = lc.ln1_out * w.w_qkv;
        add_row_bias(lc.qkv, w.b_qkv);

        lc.ctx.setZero(n, d);
        lc.probs.resize(static_cast<size_t>(batch.n_seq() * n_heads));
        for (int s = 0; s < batch.n_seq(); ++s) {
            const int off = batch.offsets[s];
            const int len = batch.length(s);
            for (int hd = 0; hd < n_heads; ++hd) {
                const auto q = lc.qkv.block(off, hd * dh, len, dh);
                const auto k = lc.qkv.block(off, d + hd * dh, len, dh);
                const auto v = lc.qkv.block(off, 2 * d + hd * dh, len, dh);
                auto& a = lc.probs[static_cast<size_t>(s * n_heads + hd)];
                a = (q * k.transpose()) * scale;
                softmax_rows_causal(a);
                lc.ctx.block(off, hd * dh, len, dh) = a * v;
            }
        }
        lc.attn_out = lc.ctx * w.w_attn_out;
        add_row_bias(lc.attn_out, w.b_attn_out);
        if (hooks && !hooks->attn.empty()) {
            apply_hook(lc.attn_out, hooks->attn[static_cast<size_t>(l)], batch, positions);
        }
        lc.h_mid = lc.h_in + lc.attn_out;

        layer_norm(lc.h_mid, w.ln2_gain, w.ln2_bias, lc.ln2_xhat, lc.ln2_rstd, lc.ln2_out);
        lc.fc_pre = lc.ln2_out * w.w_fc;
        add_row_bias(lc.fc_pre, w.b_fc);
        lc.fc_act = gelu(lc.fc_pre);
        lc.mlp_out = lc.fc_act * w.w_proj;
        add_row_bias(lc.mlp_out, w.b_proj);
        if (hooks && !hooks->mlp.empty()) {
            apply_hook(lc.mlp_out, hooks->mlp[static_cast<size_t>(l)], batch, positions);
        }
        lc.h_out = lc.h_mid + lc.mlp_out;
        h = lc.h_out;
    }

    c.last_hidden.resize(batch.n_seq(), d);
    for (int s = 0; s < batch.n_seq(); ++s) {
        c.last_hidden.row(s) = h.row(batch.last_row(s));
    }
    return c.last_hidden * weights_.unembedding.transpose();
}

namespace {

// Mean cross-entropy over rows and its gradient w.r.t. the logits.
template <class T>
T cross_entropy(const Mat<T>& logits, std::span<const int> answers, Mat<T>* dlogits) {
    const auto b = logits.rows();
    T total = 0;
    if (dlogits) {
        dlogits->resize(b, logits.cols());
    }
    for (Eigen::Index r = 0; r < b; ++r) {
        const T mx = logits.row(r).maxCoeff();
        const auto e = (logits.row(r).array() - mx).exp().eval();
        const T sum = e.sum();
        const int y = answers[static_cast<size_t>(r)];
        total += std::log(sum) - (logits(r, y) - mx);
        if (dlogits) {
            dlogits->row(r) = (e / sum).matrix();
            (*dlogits)(r, y) -= T(1);
        }
    }
    if (dlogits) {
        *dlogits /= static_cast<T>(b);
    }
    return total / static_cast<T>(b);
}

}  // namespace

template <class T>
T Transformer<T>::loss(const PackedBatch& batch, std::span<const int> answers) const {
    const Mat<T> logits = forward(batch);
    return cross_entropy<T>(logits, answers, nullptr);
}

template <class T>
T Transformer<T>::loss_and_grad(const PackedBatch& batch, std::span<const int> answers,
                                Weights<T>& grad) const {
    if (static_cast<int>(answers.size()) != batch.n_seq()) {
        throw std::invalid_argument("loss_and_grad: one answer per sequence required");
    }
    for (int a : answers) {
        if (a < 0 || a >= config_.n_numbers) {
            throw std::invalid_argument("loss_and_grad: answer " + std::to_string(a) + " is not a number token");
        }
    }
    ForwardCache<T> c;
    const Mat<T> logits = forward(batch, &c);
    Mat<T> dlogits;
    const T value = cross_entropy<T>(logits, answers, &dlogits);

    const int d = config_.d_model;
    const int n_heads = config_.n_heads;
    const int dh = d / n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const auto n = static_cast<Eigen::Index>(batch.tokens.size());

    grad.unembedding.noalias() += dlogits.transpose() * c.last_hidden;
    const Mat<T> dlast = dlogits * weights_.unembedding;
    Mat<T> dh_res = Mat<T>::Zero(n, d);
    for (int s = 0; s < batch.n_seq(); ++s) {
        dh_res.row(batch.last_row(s)) = dlast.row(s);
    }

    for (int l = config_.n_layers - 1; l >= 0; --l) {
        const auto& w = weights_.blocks[static_cast<size_t>(l)];
        auto& g = grad.blocks[static_cast<size_t>(l)];
        const auto& lc = c.layers[static_cast<size_t>(l)];

        // MLP branch: h_out = h_mid + mlp(LN2(h_mid))
        const Mat<T>& dmlp = dh_res;
        g.w_proj.noalias() += lc.fc_act.transpose() * dmlp;
        g.b_proj += dmlp.colwise().sum();
        const Mat<T> dfc_pre = ((dmlp * w.w_proj.transpose()).array() * gelu_grad(lc.fc_pre).array()).matrix();
        g.w_fc.noalias() += lc.ln2_out.transpose() * dfc_pre;
        g.b_fc += dfc_pre.colwise().sum();
        const Mat<T> dln2 = dfc_pre * w.w_fc.transpose();
        const Mat<T> dh_mid = dh_res + layer_norm_backward(dln2, lc.ln2_xhat, lc.ln2_rstd, w.ln2_gain,
                                                           g.ln2_gain, g.ln2_bias);

        // Attention branch: h_mid = h_in + attn(LN1(h_in))
        g.w_attn_out.noalias() += lc.ctx.transpose() * dh_mid;
        g.b_attn_out += dh_mid.colwise().sum();
        const Mat<T> dctx = dh_mid * w.w_attn_out.transpose();
        Mat<T> dqkv = Mat<T>::Zero(n, 3 * d);
        for (int s = 0; s < batch.n_seq(); ++s) {
            const int off = batch.offsets[s];
            const int len = batch.length(s);
            for (int hd = 0; hd < n_heads; ++hd) {
                const auto q = lc.qkv.block(off, hd * dh, len, dh);
                const auto k = lc.qkv.block(off, d + hd * dh, len, dh);
                const auto v = lc.qkv.block(off, 2 * d + hd * dh, len, dh);
                const auto& a = lc.probs[static_cast<size_t>(s * n_heads + hd)];
                const auto dout = dctx.block(off, hd * dh, len, dh);
                const Mat<T> da = dout * v.transpose();
                dqkv.block(off, 2 * d + hd * dh, len, dh) = a.transpose() * dout;
                const auto row_dot = (da.array() * a.array()).rowwise().sum().eval();
                const Mat<T> ds = (a.array() * (da.array().colwise() - row_dot)).matrix() * scale;
                dqkv.block(off, hd * dh, len, dh) = ds * k;
                dqkv.block(off, d + hd * dh, len, dh) = ds.transpose() * q;
            }
        }
        g.w_qkv.noalias() += lc.ln1_out.transpose() * dqkv;
        g.b_qkv += dqkv.colwise().sum();
        const Mat<T> dln1 = dqkv * w.w_qkv.transpose();
        dh_res = dh_mid + layer_norm_backward(dln1, lc.ln1_xhat, lc.ln1_rstd, w.ln1_gain, g.ln1_gain,
                                              g.ln1_bias);
    }

    for (int s = 0; s < batch.n_seq(); ++s) {
        for (int t = 0; t < batch.length(s); ++t) {
            const int row = batch.offsets[s] + t;
            grad.token_embedding.row(batch.tokens[static_cast<size_t>(row)]) += dh_res.row(row);
            grad.position_embedding.row(t) += dh_res.row(row);
        }
    }
    return value;
}

template <class T>
std::pair<Eigen::VectorXd, ResidualTrace> Transformer<T>::forward_with_trace(
    std::span<const int> tokens, std::span<const int> positions, const ModuleHooks<T>* hooks) const {
    const std::vector<int> seq(tokens.begin(), tokens.end());
    const auto batch = PackedBatch::from(std::span(&seq, 1));
    ForwardCache<T> c;
    const Mat<T> logits = forward(batch, &c, hooks);

    ResidualTrace trace;
    const int len = static_cast<int>(seq.size());
    for (int pos : positions) {
        const int t = pos < 0 ? len + pos : pos;
        if (t < 0 || t >= len) {
            throw std::invalid_argument("forward_with_trace: position " + std::to_string(pos) +
                                        " outside sequence of length " + std::to_string(len));
        }
        trace.positions.push_back(t);
    }
    const auto rows = static_cast<Eigen::Index>(trace.positions.size());
    for (const auto& lc : c.layers) {
        LayerTrace lt;
        lt.h_in.resize(rows, config_.d_model);
        lt.attn_out.resize(rows, config_.d_model);
        lt.mlp_out.resize(rows, config_.d_model);
        lt.h_out.resize(rows, config_.d_model);
        for (Eigen::Index r = 0; r < rows; ++r) {
            const int t = trace.positions[static_cast<size_t>(r)];
            lt.h_in.row(r) = lc.h_in.row(t).template cast<double>();
            lt.attn_out.row(r) = lc.attn_out.row(t).template cast<double>();
            lt.mlp_out.row(r) = lc.mlp_out.row(t).template cast<double>();
            lt.h_out.row(r) = lc.h_out.row(t).template cast<double>();
        }
        trace.layers.push_back(std::move(lt));
    }
    Eigen::VectorXd out = logits.row(0).transpose().template cast<double>();
    return {std::move(out), std::move(trace)};
}

template class Transformer<float>;
template class Transformer<double>;

ModelState init_model(const ModelConfig& config) {
    return ModelState{Transformer<float>::initialize(config), 0};
}

template <class T>
EvalResult evaluate(const Transformer<T>& model, std::span<const Example> examples,
                    const ModuleHooks<T>* hooks, int batch_size) {
    if (examples.empty()) {
        throw std::invalid_argument("evaluate: no examples");
    }
    if (batch_size < 1) {
        throw std::invalid_argument("evaluate: batch_size must be positive");
    }
    const size_t bs = static_cast<size_t>(batch_size);
    const size_t n_chunks = (examples.size() + bs - 1) / bs;
    std::vector<double> losses(examples.size());
    std::vector<int> preds(examples.size());
    // Chunk boundaries are fixed by batch_size, so results do not depend on thread count.
    parallel_for(n_chunks, [&](size_t chunk) {
        const size_t start = chunk * bs;
        const size_t end = std::min(examples.size(), start + bs);
        std::vector<std::vector<int>> seqs;
        for (size_t i = start; i < end; ++i) {
            seqs.push_back(examples[i].tokens);
        }
        const Mat<T> logits = model.forward(PackedBatch::from(seqs), nullptr, hooks);
        for (size_t i = start; i < end; ++i) {
            const auto row = logits.row(static_cast<Eigen::Index>(i - start)).template cast<double>().eval();
            const double mx = row.maxCoeff();
            const double lse = mx + std::log((row.array() - mx).exp().sum());
            losses[i] = lse - row(examples[i].answer);
            preds[i] = argmax_first(row);
        }
    });
    EvalResult res;
    double loss_sum = 0.0;
    size_t correct = 0;
    for (size_t i = 0; i < examples.size(); ++i) {
        loss_sum += losses[i];
        correct += preds[i] == examples[i].answer ? 1 : 0;
    }
    res.predictions = std::move(preds);
    res.loss = loss_sum / static_cast<double>(examples.size());
    res.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
    return res;
}

template EvalResult evaluate<float>(const Transformer<float>&, std::span<const Example>,
                                    const ModuleHooks<float>*, int);
template EvalResult evaluate<double>(const Transformer<double>&, std::span<const Example>,
                                     const ModuleHooks<double>*, int);

namespace {

struct AdamState {
    Weights<float> m;
    Weights<float> v;
};

void check_dataset_fits(const ModelConfig& config, const NumberDataset& data) {
    for (const auto& ex : data.examples) {
        if (static_cast<int>(ex.tokens.size()) > config.max_seq_len) {
            throw std::invalid_argument("train: question longer than max_seq_len: " + ex.question);
        }
        for (int t : ex.tokens) {
            if (t < 0 || t >= config.vocab_size) {
                throw std::invalid_argument("train: token outside model vocabulary in: " + ex.question);
            }
        }
        if (ex.answer < 0 || ex.answer >= config.n_numbers) {
            throw std::invalid_argument("train: answer outside number range: " + std::to_string(ex.answer));
        }
    }
}

}  // namespace

TrainResult train(ModelState state, const NumberDataset& data, const TrainHyper& hyper,
                  const EpochCallback& on_epoch) {
    const auto& config = state.model.config();
    if (hyper.epochs < 0 || hyper.batch_size < 1) {
        throw std::invalid_argument("train: epochs must be >= 0 and batch_size >= 1");
    }
    const auto train_set = data.subset(Split::train);
    const auto val_set = data.subset(Split::val);
    if (train_set.empty()) {
        throw std::invalid_argument("train: training split is empty");
    }
    check_dataset_fits(config, data);

    TrainResult result;
    const bool frozen = config.embedding_mode == EmbeddingMode::injected_frozen;
    const int p = config.n_numbers;
    auto grad = Weights<float>::zeros(config);
    AdamState adam{Weights<float>::zeros(config), Weights<float>::zeros(config)};

    const auto n_train = train_set.size();
    const auto bs = static_cast<size_t>(hyper.batch_size);
    const int64_t steps_per_epoch = static_cast<int64_t>((n_train + bs - 1) / bs);
    const int64_t total_steps = steps_per_epoch * hyper.epochs;
    int64_t local_step = 0;

    std::vector<size_t> order(n_train);
    for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), size_t{0});
        Rng rng(derive_seed(config.seed, 0x1000 + static_cast<uint64_t>(epoch)));
        rng.shuffle(order.begin(), order.end());

        double loss_sum = 0.0;
        for (size_t start = 0; start < n_train; start += bs) {
            const size_t end = std::min(n_train, start + bs);
            std::vector<std::vector<int>> seqs;
            std::vector<int> answers;
            for (size_t i = start; i < end; ++i) {
                seqs.push_back(train_set[order[i]].tokens);
                answers.push_back(train_set[order[i]].answer);
            }
            const auto batch = PackedBatch::from(seqs);
            grad.visit([](const std::string&, MatF& t, bool) { t.setZero(); });
            const float loss = state.model.loss_and_grad(batch, answers, grad);
            if (!std::isfinite(loss)) {
                throw TrainingDiverged(state.step, "train: non-finite loss at step " + std::to_string(state.step) +
                                                       " (epoch " + std::to_string(epoch) + ")");
            }
            loss_sum += static_cast<double>(loss) * static_cast<double>(end - start);
            if (frozen) {
                grad.token_embedding.topRows(p).setZero();
            }

            const double lr = hyper.lr_start + (hyper.lr_end - hyper.lr_start) *
                                                   static_cast<double>(local_step) /
                                                   static_cast<double>(total_steps);
            ++local_step;
            const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(local_step));
            const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(local_step));

            std::vector<MatF*> ms;
            std::vector<MatF*> vs;
            std::vector<const MatF*> gs;
            adam.m.visit([&](const std::string&, MatF& t, bool) { ms.push_back(&t); });
            adam.v.visit([&](const std::string&, MatF& t, bool) { vs.push_back(&t); });
            grad.visit([&](const std::string&, MatF& t, bool) { gs.push_back(&t); });
            size_t idx = 0;
            const auto b1 = static_cast<float>(hyper.beta1);
            const auto b2 = static_cast<float>(hyper.beta2);
            state.model.mutable_weights().visit([&](const std::string&, MatF& w, bool decays) {
                auto& m = *ms[idx];
                auto& v = *vs[idx];
                const auto& g = *gs[idx];
                ++idx;
                m = b1 * m + (1.0f - b1) * g;
                v = (b2 * v.array() + (1.0f - b2) * g.array().square()).matrix();
                const auto step_size = static_cast<float>(lr / bc1);
                const auto denom_scale = static_cast<float>(1.0 / std::sqrt(bc2));
                if (decays && hyper.weight_decay > 0.0) {
                    w *= static_cast<float>(1.0 - lr * hyper.weight_decay);
                }
                w.array() -= step_size * m.array() /
                             (v.array().sqrt() * denom_scale + static_cast<float>(hyper.eps));
            });
            ++state.step;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / static_cast<double>(n_train);
        if (!val_set.empty()) {
            const auto ev = evaluate(state.model, std::span<const Example>(val_set));
            em.val_loss = ev.loss;
            em.val_accuracy = ev.accuracy;
        } else {
            em.val_loss = std::numeric_limits<double>::quiet_NaN();
            em.val_accuracy = std::numeric_limits<double>::quiet_NaN();
        }
        result.metrics.push_back(em);
        if (on_epoch) {
            on_epoch(em);
        }
    }
    result.state = std::move(state);
    return result;
}

TrainResult train(const ModelConfig& config, const NumberDataset& data, const TrainHyper& hyper,
                  const EpochCallback& on_epoch) {
    return train(init_model(config), data, hyper, on_epoch);
}

ModelState inject_embeddings(ModelState state, const MatD& embedding, bool freeze) {
    const auto& c = state.model.config();
    if ((embedding.rows() != c.n_numbers && embedding.rows() != c.vocab_size) ||
        embedding.cols() != c.d_model) {
        throw std::invalid_argument("inject_embeddings: expected " + std::to_string(c.n_numbers) + " x " +
                                    std::to_string(c.d_model) + " (or vocab x D), got " +
                                    std::to_string(embedding.rows()) + " x " + std::to_string(embedding.cols()));
    }
    state.model.mutable_weights().token_embedding.topRows(c.n_numbers) =
        embedding.topRows(c.n_numbers).cast<float>();
    state.model.set_embedding_mode(freeze ? EmbeddingMode::injected_frozen : EmbeddingMode::injected_trainable);
    return state;
}

int component_for_period(int p, double period) {
    if (!(period > 0.0)) {
        throw std::invalid_argument("period must be positive");
    }
    return static_cast<int>(std::lround(static_cast<double>(p - 1) / period));
}

MatD synth_fourier_embedding(int p, int d_model, std::span<const double> periods, double low_freq_weight,
                             uint64_t seed) {
    if (periods.empty()) {
        throw std::invalid_argument("synth_fourier_embedding: periods must be nonempty");
    }
    if (d_model < 1) {
        throw std::invalid_argument("synth_fourier_embedding: d_model must be positive");
    }
    const FourierBasis basis(p);
    std::vector<int> comps;
    for (double t : periods) {
        const int k = component_for_period(p, t);
        if (k < 1 || k > basis.max_component()) {
            throw std::invalid_argument("synth_fourier_embedding: period " + std::to_string(t) +
                                        " has no component for p=" + std::to_string(p));
        }
        comps.push_back(k);
    }
    const int low_top = std::min(5, basis.max_component());
    Rng rng(seed);
    MatD out(p, d_model);
    const auto& f = basis.matrix();
    for (int j = 0; j < d_model; ++j) {
        Eigen::VectorXd col = rng.normal() * f.row(0).transpose();
        for (int k = 1; k <= low_top; ++k) {
            const auto [rs, rc] = FourierBasis::rows_of_component(k);
            col += low_freq_weight * (rng.normal() * f.row(rs).transpose() + rng.normal() * f.row(rc).transpose());
        }
        for (int k : comps) {
            const auto [rs, rc] = FourierBasis::rows_of_component(k);
            // At the top component the sin row vanishes and the cos row has twice the
            // energy; halving its weight keeps every requested period equally strong.
            const double cos_weight = 2 * k == p - 1 ? std::sqrt(0.5) : 1.0;
            col += rng.normal() * f.row(rs).transpose() + cos_weight * rng.normal() * f.row(rc).transpose();
        }
        const double norm = col.norm();
        out.col(j) = norm > 0.0 ? (col / norm).eval() : col;
    }
    return out;
}

namespace {

constexpr char kMagic[5] = {'F', 'P', 'R', 'B', '1'};

template <class U>
void put(std::ostream& os, U v) {
    static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U get(std::istream& is) {
    U v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw std::runtime_error("checkpoint: truncated file");
    }
    return v;
}

}  // namespace

void save_checkpoint(std::ostream& os, const ModelState& state) {
    nlohmann::ordered_json header;
    header["format"] = "fprobe-checkpoint";
    header["version"] = std::string(kToolVersion);
    header["config"] = state.config().to_json();
    header["step"] = state.step;
    const std::string text = header.dump();
    os.write(kMagic, sizeof kMagic);
    put<uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    state.model.weights().visit([&](const std::string& name, const MatF& t, bool) {
        put<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<uint32_t>(os, 2);
        put<uint64_t>(os, static_cast<uint64_t>(t.rows()));
        put<uint64_t>(os, static_cast<uint64_t>(t.cols()));
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    });
    if (!os) {
        throw std::runtime_error("checkpoint: write failed");
    }
}

ModelState load_checkpoint(std::istream& is) {
    char magic[5];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw std::runtime_error("checkpoint: bad magic (expected FPRB1)");
    }
    const auto len = get<uint64_t>(is);
    if (len > (1u << 24)) {
        throw std::runtime_error("checkpoint: implausible header length");
    }
    std::string text(len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(len))) {
        throw std::runtime_error("checkpoint: truncated header");
    }
    const auto header = nlohmann::json::parse(text);
    const auto config = ModelConfig::from_json(header.at("config"));
    config.validate();
    auto w = Weights<float>::zeros(config);
    w.visit([&](const std::string& name, MatF& t, bool) {
        const auto name_len = get<uint32_t>(is);
        std::string got(name_len, '\0');
        if (!is.read(got.data(), name_len) || got != name) {
            throw std::runtime_error("checkpoint: expected tensor '" + name + "', found '" + got + "'");
        }
        const auto rank = get<uint32_t>(is);
        if (rank != 2) {
            throw std::runtime_error("checkpoint: tensor '" + name + "' has unsupported rank");
        }
        const auto rows = get<uint64_t>(is);
        const auto cols = get<uint64_t>(is);
        if (rows != static_cast<uint64_t>(t.rows()) || cols != static_cast<uint64_t>(t.cols())) {
            throw std::runtime_error("checkpoint: tensor '" + name + "' shape mismatch");
        }
        if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
            throw std::runtime_error("checkpoint: truncated tensor '" + name + "'");
        }
    });
    ModelState state{Transformer<float>(config, std::move(w)), header.at("step").get<int64_t>()};
    return state;
}

void save_checkpoint(const std::string& path, const ModelState& state) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    save_checkpoint(os, state);
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open checkpoint " + path);
    }
    return load_checkpoint(is);
}

}  // namespace fprobe

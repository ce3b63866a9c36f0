#pragma once

// Template members of Weights; included from model.hpp.

namespace fprobe {

namespace detail {

template <class W, class Fn>
void visit_weights(W& w, Fn&& fn) {
    fn(std::string("tok_emb"), w.token_embedding, false);
    fn(std::string("pos_emb"), w.position_embedding, false);
    for (size_t l = 0; l < w.blocks.size(); ++l) {
        auto& b = w.blocks[l];
        const std::string p = "blocks." + std::to_string(l) + ".";
        fn(p + "ln1.gain", b.ln1_gain, false);
        fn(p + "ln1.bias", b.ln1_bias, false);
        fn(p + "attn.w_qkv", b.w_qkv, true);
        fn(p + "attn.b_qkv", b.b_qkv, false);
        fn(p + "attn.w_out", b.w_attn_out, true);
        fn(p + "attn.b_out", b.b_attn_out, false);
        fn(p + "ln2.gain", b.ln2_gain, false);
        fn(p + "ln2.bias", b.ln2_bias, false);
        fn(p + "mlp.w_fc", b.w_fc, true);
        fn(p + "mlp.b_fc", b.b_fc, false);
        fn(p + "mlp.w_proj", b.w_proj, true);
        fn(p + "mlp.b_proj", b.b_proj, false);
    }
    fn(std::string("unembed"), w.unembedding, true);
}

}  // namespace detail

template <class T>
template <class Fn>
void Weights<T>::visit(Fn&& fn) {
    detail::visit_weights(*this, std::forward<Fn>(fn));
}

template <class T>
template <class Fn>
void Weights<T>::visit(Fn&& fn) const {
    detail::visit_weights(*this, std::forward<Fn>(fn));
}

template <class T>
Weights<T> Weights<T>::zeros(const ModelConfig& c) {
    const int d = c.d_model;
    Weights w;
    w.token_embedding = Mat<T>::Zero(c.vocab_size, d);
    w.position_embedding = Mat<T>::Zero(c.max_seq_len, d);
    w.blocks.resize(static_cast<size_t>(c.n_layers));
    for (auto& b : w.blocks) {
        b.ln1_gain = Mat<T>::Zero(1, d);
        b.ln1_bias = Mat<T>::Zero(1, d);
        b.w_qkv = Mat<T>::Zero(d, 3 * d);
        b.b_qkv = Mat<T>::Zero(1, 3 * d);
        b.w_attn_out = Mat<T>::Zero(d, d);
        b.b_attn_out = Mat<T>::Zero(1, d);
        b.ln2_gain = Mat<T>::Zero(1, d);
        b.ln2_bias = Mat<T>::Zero(1, d);
        b.w_fc = Mat<T>::Zero(d, c.d_ff);
        b.b_fc = Mat<T>::Zero(1, c.d_ff);
        b.w_proj = Mat<T>::Zero(c.d_ff, d);
        b.b_proj = Mat<T>::Zero(1, d);
    }
    w.unembedding = Mat<T>::Zero(c.n_numbers, d);
    return w;
}

template <class T>
template <class U>
Weights<U> Weights<T>::cast() const {
    Weights<U> out;
    out.token_embedding = token_embedding.template cast<U>();
    out.position_embedding = position_embedding.template cast<U>();
    out.unembedding = unembedding.template cast<U>();
    out.blocks.reserve(blocks.size());
    for (const auto& b : blocks) {
        BlockWeights<U> o;
        o.ln1_gain = b.ln1_gain.template cast<U>();
        o.ln1_bias = b.ln1_bias.template cast<U>();
        o.w_qkv = b.w_qkv.template cast<U>();
        o.b_qkv = b.b_qkv.template cast<U>();
        o.w_attn_out = b.w_attn_out.template cast<U>();
        o.b_attn_out = b.b_attn_out.template cast<U>();
        o.ln2_gain = b.ln2_gain.template cast<U>();
        o.ln2_bias = b.ln2_bias.template cast<U>();
        o.w_fc = b.w_fc.template cast<U>();
        o.b_fc = b.b_fc.template cast<U>();
        o.w_proj = b.w_proj.template cast<U>();
        o.b_proj = b.b_proj.template cast<U>();
        out.blocks.push_back(std::move(o));
    }
    return out;
}

}  // namespace fprobe

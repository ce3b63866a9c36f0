#pragma once

#include "fprobe/dataset.hpp"
#include "fprobe/model.hpp"

namespace fprobe::testing {

struct Tiny {
    NumberVocab vocab;
    NumberDataset data;
    ModelConfig config;
};

// Numbers 0..20, operands <= 10; small enough to train in well under a second.
inline Tiny tiny_setup(int n_layers = 2, int d_model = 16, uint64_t seed = 3) {
    Tiny t{NumberVocab(20), {}, {}};
    t.data = gen_addition(10, t.vocab, seed);
    t.config.n_layers = n_layers;
    t.config.d_model = d_model;
    t.config.n_heads = 2;
    t.config.d_ff = 4 * d_model;
    t.config.vocab_size = t.vocab.size();
    t.config.n_numbers = t.vocab.p();
    t.config.max_seq_len = 16;
    t.config.seed = seed;
    return t;
}

inline double max_rel_diff(const MatD& a, const MatD& b) {
    const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-300});
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace fprobe::testing

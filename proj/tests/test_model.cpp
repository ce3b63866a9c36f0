#include "doctest.h"
#include "helpers.hpp"

#include "fprobe/fourier.hpp"
#include "fprobe/embed_analysis.hpp"
#include "fprobe/filters.hpp"

#include <sstream>

using namespace fprobe;
using fprobe::testing::tiny_setup;

namespace {

// Flat views over every parameter so tests can poke individual entries.
template <class T>
std::vector<std::pair<std::string, Mat<T>*>> tensors(Weights<T>& w) {
    std::vector<std::pair<std::string, Mat<T>*>> out;
    w.visit([&](const std::string& name, Mat<T>& t, bool) { out.emplace_back(name, &t); });
    return out;
}

bool same_weights(const Weights<float>& a, const Weights<float>& b) {
    std::vector<const MatF*> ta;
    std::vector<const MatF*> tb;
    a.visit([&](const std::string&, const MatF& t, bool) { ta.push_back(&t); });
    b.visit([&](const std::string&, const MatF& t, bool) { tb.push_back(&t); });
    for (size_t i = 0; i < ta.size(); ++i) {
        if (*ta[i] != *tb[i]) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("backprop matches central finite differences on a 1-layer D=8 model") {
    auto t = tiny_setup(1, 8, 11);
    auto model = Transformer<double>::initialize(t.config);
    // Scale weights up from the 0.02 init so every path carries a visible gradient.
    Rng rng(99);
    for (auto& [name, m] : tensors(model.mutable_weights())) {
        for (Eigen::Index i = 0; i < m->size(); ++i) {
            m->data()[i] += 0.3 * rng.normal();
        }
    }
    std::vector<std::vector<int>> seqs;
    std::vector<int> answers;
    for (size_t i = 0; i < 6; ++i) {
        seqs.push_back(t.data.examples[i].tokens);
        answers.push_back(t.data.examples[i].answer);
    }
    const auto batch = PackedBatch::from(seqs);
    auto grad = Weights<double>::zeros(t.config);
    model.loss_and_grad(batch, answers, grad);

    auto params = tensors(model.mutable_weights());
    auto grads = tensors(grad);
    const double h = 1e-4;
    int checked = 0;
    double worst = 0.0;
    Rng pick(5);
    while (checked < 100) {
        const auto ti = pick.below(params.size());
        auto* m = params[ti].second;
        const auto idx = static_cast<Eigen::Index>(pick.below(static_cast<uint64_t>(m->size())));
        const double analytic = grads[ti].second->data()[idx];
        const double saved = m->data()[idx];
        m->data()[idx] = saved + h;
        const double up = model.loss(batch, answers);
        m->data()[idx] = saved - h;
        const double down = model.loss(batch, answers);
        m->data()[idx] = saved;
        const double numeric = (up - down) / (2 * h);
        if (std::max(std::abs(analytic), std::abs(numeric)) < 1e-10) {
            // Structurally zero: unseen tokens, or key biases (softmax is shift invariant).
            continue;
        }
        const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
        INFO(params[ti].first, "[", idx, "] analytic=", analytic, " numeric=", numeric);
        CHECK(rel <= 1e-3);
        worst = std::max(worst, rel);
        ++checked;
    }
    MESSAGE("worst relative gradient error: ", worst);
}

TEST_CASE("residual identity holds per layer in 32-bit") {
    auto t = tiny_setup(3, 16);
    const auto state = init_model(t.config);
    const auto& ex = t.data.examples[0];
    std::vector<int> pos(ex.tokens.size());
    std::iota(pos.begin(), pos.end(), 0);
    const auto [logits, trace] = state.model.forward_with_trace(ex.tokens, pos);
    REQUIRE(trace.layers.size() == 3);
    for (const auto& lt : trace.layers) {
        const MatD sum = lt.h_in + lt.attn_out + lt.mlp_out;
        CHECK(fprobe::testing::max_rel_diff(sum, lt.h_out) <= 1e-5);
    }
    // The returned logits are W^U h^(L) at the last token.
    const Eigen::VectorXd direct = state.model.unembedding().cast<double>() * trace.layers.back().h_out.bottomRows(1).transpose();
    CHECK((direct - logits).cwiseAbs().maxCoeff() <= 1e-5 * std::max(1.0, direct.cwiseAbs().maxCoeff()));
}

TEST_CASE("attention is causal: future tokens do not move earlier positions") {
    auto t = tiny_setup(2, 16);
    const auto model = init_model(t.config).analysis();
    std::vector<int> tokens = t.data.examples[3].tokens;
    REQUIRE(tokens.size() >= 6);
    std::vector<int> pos(tokens.size());
    std::iota(pos.begin(), pos.end(), 0);
    const auto [l0, base] = model.forward_with_trace(tokens, pos);
    const size_t cut = 3;
    std::vector<int> shuffled = tokens;
    std::reverse(shuffled.begin() + cut + 1, shuffled.end());
    shuffled.back() = (shuffled.back() + 1) % t.config.vocab_size;
    const auto [l1, other] = model.forward_with_trace(shuffled, pos);
    for (size_t l = 0; l < base.layers.size(); ++l) {
        CHECK(base.layers[l].h_out.topRows(cut + 1) == other.layers[l].h_out.topRows(cut + 1));
    }
}

TEST_CASE("seeded init gives reproducible logits matching the recorded snapshot") {
    auto t = tiny_setup(2, 16, 42);
    const auto a = init_model(t.config);
    const auto b = init_model(t.config);
    std::vector<std::vector<int>> seqs{t.data.examples[0].tokens};
    const MatF la = a.model.forward(PackedBatch::from(seqs));
    const MatF lb = b.model.forward(PackedBatch::from(seqs));
    CHECK(la == lb);
    // Recorded from the first build; tolerance covers FMA contraction differences.
    const std::vector<double> golden = {
        -0.00193954026, 0.000413981528, -0.000455962378, -0.0010955733, -0.00380986184, 0.000569499098, -0.00246567046, -0.00210404163, 0.00082627451,
        -0.0010519966, 0.00205653999, 0.0028394293, -6.82024984e-06, 0.00265724096, 0.000587703427, -0.000153768691, -0.000180498813, 0.00164584827, 0.000345425273, -0.000615308993, 4.5276829e-05};
    REQUIRE(la.cols() == static_cast<Eigen::Index>(golden.size()));
    for (size_t i = 0; i < golden.size(); ++i) {
        CHECK(std::abs(la(0, static_cast<Eigen::Index>(i)) - golden[i]) <= 1e-4 * 0.0038);
    }
}

TEST_CASE("training with zero epochs returns the initial state") {
    auto t = tiny_setup();
    const auto init = init_model(t.config);
    TrainHyper hyper;
    hyper.epochs = 0;
    const auto res = train(init, t.data, hyper);
    CHECK(res.metrics.empty());
    CHECK(same_weights(res.state.model.weights(), init.model.weights()));
}

TEST_CASE("training is deterministic and reduces the loss") {
    auto t = tiny_setup();
    TrainHyper hyper;
    hyper.epochs = 30;
    hyper.lr_start = 3e-3;
    const auto a = train(t.config, t.data, hyper);
    const auto b = train(t.config, t.data, hyper);
    REQUIRE(a.metrics.size() == 30);
    for (size_t i = 0; i < a.metrics.size(); ++i) {
        CHECK(a.metrics[i].train_loss == b.metrics[i].train_loss);
        CHECK(a.metrics[i].val_accuracy == b.metrics[i].val_accuracy);
    }
    CHECK(a.metrics.back().train_loss < 0.9 * a.metrics.front().train_loss);
    CHECK(same_weights(a.state.model.weights(), b.state.model.weights()));
}

TEST_CASE("frozen injected embeddings stay bit-identical; trainable ones move") {
    auto t = tiny_setup();
    const std::vector<double> periods{2.0, 5.0};
    const MatD emb = synth_fourier_embedding(t.config.n_numbers, t.config.d_model, periods, 0.5, 1);
    TrainHyper hyper;
    hyper.epochs = 3;

    auto frozen = inject_embeddings(init_model(t.config), emb, true);
    const MatF before = frozen.model.weights().token_embedding;
    const auto after = train(frozen, t.data, hyper).state;
    CHECK(after.model.weights().token_embedding.topRows(t.config.n_numbers) == before.topRows(t.config.n_numbers));
    CHECK(after.config().embedding_mode == EmbeddingMode::injected_frozen);

    auto loose = inject_embeddings(init_model(t.config), emb, false);
    hyper.epochs = 1;
    const auto moved = train(loose, t.data, hyper).state;
    CHECK(moved.model.weights().token_embedding.topRows(t.config.n_numbers) !=
          loose.model.weights().token_embedding.topRows(t.config.n_numbers));
}

TEST_CASE("inject_embeddings validates shape") {
    auto t = tiny_setup();
    CHECK_THROWS_AS(inject_embeddings(init_model(t.config), MatD::Zero(5, t.config.d_model), true),
                    std::invalid_argument);
    CHECK_THROWS_AS(inject_embeddings(init_model(t.config), MatD::Zero(t.config.n_numbers, 3), true),
                    std::invalid_argument);
}

TEST_CASE("synthetic Fourier embedding: deterministic, unit columns, peaks at requested periods") {
    const int p = 521;
    const std::vector<double> periods{2.0, 10.0};
    const MatD a = synth_fourier_embedding(p, 32, periods, 0.3, 7);
    const MatD b = synth_fourier_embedding(p, 32, periods, 0.3, 7);
    CHECK(a == b);
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
        CHECK(a.col(c).norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
    const FourierBasis basis(p);
    const auto s = embedding_spectrum(basis, a);
    const auto out = sigma_outliers(s, default_tau(p));
    std::vector<int> ks;
    for (const auto& o : out) {
        ks.push_back(o.k);
    }
    std::sort(ks.begin(), ks.end());
    CHECK(ks == std::vector<int>{52, 260});
    CHECK_THROWS(synth_fourier_embedding(p, 8, std::vector<double>{}, 0.3, 1));
}

TEST_CASE("checkpoint round trip preserves config, step and every tensor") {
    auto t = tiny_setup();
    auto state = init_model(t.config);
    state.step = 17;
    std::stringstream ss;
    save_checkpoint(ss, state);
    const auto bytes = ss.str();
    CHECK(bytes.substr(0, 5) == "FPRB1");
    const auto back = load_checkpoint(ss);
    CHECK(back.step == 17);
    CHECK(back.config() == state.config());
    CHECK(same_weights(back.model.weights(), state.model.weights()));

    std::stringstream bad("FPRB0garbage");
    CHECK_THROWS(load_checkpoint(bad));
}

TEST_CASE("forward rejects bad input") {
    auto t = tiny_setup();
    const auto model = init_model(t.config).analysis();
    const std::vector<int> too_long(20, 0);
    const int last = -1;
    CHECK_THROWS(model.forward_with_trace(too_long, std::span(&last, 1)));
    const std::vector<int> bad_tok{0, 1, t.config.vocab_size};
    CHECK_THROWS(model.forward_with_trace(bad_tok, std::span(&last, 1)));
}

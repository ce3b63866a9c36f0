#include "doctest.h"
#include "helpers.hpp"

#include "fprobe/lens.hpp"

#include <random>

using namespace fprobe;
using fprobe::testing::tiny_setup;

namespace {

struct Trained {
    fprobe::testing::Tiny setup;
    AnalysisModel model;
};

const Trained& trained_tiny() {
    static const Trained t = [] {
        auto s = tiny_setup(2, 16, 4);
        TrainHyper hyper;
        hyper.epochs = 40;
        hyper.lr_start = 3e-3;
        auto res = train(s.config, s.data, hyper);
        return Trained{s, res.state.analysis()};
    }();
    return t;
}

}  // namespace

TEST_CASE("layer differences equal module logits") {
    const auto& t = trained_tiny();
    for (size_t i = 0; i < 10; ++i) {
        const auto lens = lens_for_example(t.model, t.setup.data.examples[i]);
        REQUIRE(lens.residual.size() == 3);
        for (int l = 1; l <= 2; ++l) {
            const Eigen::VectorXd diff = lens.residual[l] - lens.residual[l - 1];
            const Eigen::VectorXd sum = lens.module(ModuleKind::attn, l) + lens.module(ModuleKind::mlp, l);
            CHECK((diff - sum).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, diff.cwiseAbs().maxCoeff()));
        }
    }
}

TEST_CASE("last-layer lens is the model's own prediction") {
    const auto& t = trained_tiny();
    const auto test = t.setup.data.subset(Split::test);
    const auto ev = evaluate(t.model, std::span<const Example>(test));
    const auto table = accuracy_within(t.model, test, {0, 2, 10});
    CHECK(table.acc(2, 0) == doctest::Approx(ev.accuracy).epsilon(1e-12));
    for (size_t i = 0; i < test.size(); ++i) {
        const auto lens = lens_for_example(t.model, test[i]);
        CHECK(argmax_first(lens.residual.back()) == ev.predictions[i]);
    }
    for (Eigen::Index l = 0; l < table.acc.rows(); ++l) {
        CHECK(table.acc(l, 0) <= table.acc(l, 1));
        CHECK(table.acc(l, 1) <= table.acc(l, 2));
    }
    CHECK_THROWS(accuracy_within(t.model, test, {2, 0}));
    CHECK_THROWS(accuracy_within(t.model, std::span<const Example>(), {0}));
}

TEST_CASE("heatmap shape and boundary flag") {
    const auto& t = trained_tiny();
    const auto& ex = t.setup.data.examples[0];
    const auto hm = module_heatmap(t.model, ex, {1, 2}, 3);
    CHECK(hm.mlp.rows() == 7);
    CHECK(hm.mlp.cols() == 2);
    CHECK(hm.attn.rows() == 7);
    CHECK(hm.numbers.front() == ex.answer - 3);

    Example low = ex;
    low.answer = 1;
    const auto edge = module_heatmap(t.model, low, {2}, 4);
    CHECK(edge.clamped);
    CHECK(std::isnan(edge.mlp(0, 0)));
    CHECK_FALSE(std::isnan(edge.mlp(4, 0)));
    CHECK_THROWS(module_heatmap(t.model, ex, {3}, 2));
    CHECK_THROWS(module_heatmap(t.model, ex, {1}, 11));
}

TEST_CASE("avg_spectrum of one example and one layer equals that example's spectrum") {
    const auto& t = trained_tiny();
    const FourierBasis basis(t.setup.config.n_numbers);
    const auto& ex = t.setup.data.examples[5];
    const auto avg = avg_spectrum(t.model, basis, std::span(&ex, 1), {2}, ModuleKind::mlp);
    const auto direct = dft(basis, lens_for_example(t.model, ex).module(ModuleKind::mlp, 2));
    CHECK((avg.magnitudes - direct.magnitudes).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("avg_spectrum is invariant to example order") {
    const auto& t = trained_tiny();
    const FourierBasis basis(t.setup.config.n_numbers);
    auto exs = t.setup.data.subset(Split::train);
    exs.resize(20);
    const auto a = avg_spectrum(t.model, basis, exs, {1, 2}, ModuleKind::attn);
    std::reverse(exs.begin(), exs.end());
    const auto b = avg_spectrum(t.model, basis, exs, {1, 2}, ModuleKind::attn);
    CHECK((a.magnitudes - b.magnitudes).cwiseAbs().maxCoeff() <= 1e-12 * a.magnitudes.maxCoeff());
}

TEST_CASE("layer band and autocorrelation helpers") {
    CHECK(default_layer_band(48) == std::vector<int>{34, 35, 36, 37, 38, 39, 40, 41, 42, 43, 44, 45, 46, 47, 48});
    CHECK(default_layer_band(4) == std::vector<int>{3, 4});
    CHECK(default_layer_band(8) == std::vector<int>{6, 7, 8});
    CHECK(default_layer_band(1) == std::vector<int>{1});

    std::vector<double> stripe;
    for (int i = 0; i < 21; ++i) {
        stripe.push_back(i % 2 == 0 ? 1.0 : -1.0);
    }
    CHECK(lag_autocorrelation(stripe, 2) > 0.8);
    CHECK(lag_autocorrelation(stripe, 1) < -0.8);
    stripe[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK(lag_autocorrelation(stripe, 2) > 0.7);
}

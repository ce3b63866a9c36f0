#include "doctest.h"
#include "helpers.hpp"

#include "fprobe/ablation.hpp"
#include "fprobe/config.hpp"

#include <filesystem>
#include <fstream>

using namespace fprobe;
using fprobe::testing::tiny_setup;

namespace {

struct Setup {
    fprobe::testing::Tiny tiny;
    AnalysisModel model;
    FourierBasis basis;
};

const Setup& setup() {
    static const Setup s = [] {
        auto t = tiny_setup(2, 32, 6);
        TrainHyper hyper;
        hyper.epochs = 20;
        hyper.lr_start = 3e-3;
        auto m = train(t.config, t.data, hyper).state.analysis();
        return Setup{t, m, FourierBasis(t.config.n_numbers)};
    }();
    return s;
}

uint64_t weights_hash(const AnalysisModel& m) {
    uint64_t h = 0;
    m.weights().visit([&](const std::string&, const MatD& t, bool) { h ^= content_hash(t) + 0x9e37 + (h << 6); });
    return h;
}

}  // namespace

TEST_CASE("error histogram statistics") {
    SUBCASE("all correct") {
        const std::vector<int> a{1, 2, 3};
        const auto s = error_histogram(a, a);
        CHECK(s.histogram.at(0) == 3);
        CHECK(s.no_errors);
        CHECK(std::isnan(s.frac_mult10));
        CHECK(s.parity_accuracy == 1.0);
    }
    SUBCASE("multiples of ten") {
        const std::vector<int> pred{40, 0, 60};
        const std::vector<int> ans{30, 20, 30};
        const auto s = error_histogram(pred, ans);
        CHECK(s.frac_mult10 == 1.0);
        CHECK(s.frac_le6 == 0.0);
        CHECK(s.n_errors == 3);
        CHECK(s.mean_signed_error == doctest::Approx(20.0 / 3.0));
        int total = 0;
        for (const auto& [e, c] : s.histogram) {
            total += c;
        }
        CHECK(total == 3);
    }
    SUBCASE("parity") {
        const std::vector<int> pred{3, 4, 7, 10};
        const std::vector<int> ans{5, 5, 7, 11};
        const auto s = error_histogram(pred, ans);
        CHECK(s.parity_accuracy == doctest::Approx(0.5));
        CHECK(s.frac_le2 == doctest::Approx(1.0));
    }
    CHECK_THROWS(error_histogram(std::vector<int>{1}, std::vector<int>{1, 2}));
}

TEST_CASE("a filter that removes nothing changes nothing") {
    const auto& s = setup();
    const auto val = s.tiny.data.subset(Split::val);
    ProjectorCache cache;
    AblationSpec spec;
    spec.name = "none";
    spec.filter = FilterSpec::identity(s.basis.p());
    const auto rep = ablate_eval(s.model, s.basis, val, spec, cache);
    const auto ev = evaluate(s.model, std::span<const Example>(val));
    CHECK(rep.loss == ev.loss);
    CHECK(rep.accuracy == ev.accuracy);
    CHECK(rep.predictions == ev.predictions);
    CHECK(rep.spec.removed_band() == "none");
}

TEST_CASE("ablation leaves weights alone and ignores example order") {
    const auto& s = setup();
    auto val = s.tiny.data.subset(Split::train);
    ProjectorCache cache;
    const auto before = weights_hash(s.model);
    const auto specs = standard_table_specs(s.basis.p(), default_tau(s.basis.p()));
    const auto reps = run_sweep(s.model, s.basis, val, specs, cache);
    CHECK(weights_hash(s.model) == before);
    REQUIRE(reps.size() == 7);
    CHECK(reps[0].spec.name == "none");
    CHECK(reps[3].spec.targets() == "mlp");
    CHECK(reps[3].spec.removed_band() == "low");
    CHECK(reps[4].spec.removed_band() == "high");

    std::reverse(val.begin(), val.end());
    const auto again = ablate_eval(s.model, s.basis, val, specs[1], cache);
    CHECK(again.loss == doctest::Approx(reps[1].loss).epsilon(1e-12));
    CHECK(again.accuracy == reps[1].accuracy);
}

TEST_CASE("single-pass hooks confine module logits to the kept component") {
    const auto& s = setup();
    const int p = s.basis.p();
    const int gamma = 5;
    const auto proj = build_projector(s.basis, s.model.unembedding(), FilterSpec::single_pass(p, gamma));
    ModuleHooks<double> hooks;
    hooks.attn.assign(2, &proj.matrix);
    hooks.mlp.assign(2, &proj.matrix);
    const auto& ex = s.tiny.data.examples[0];
    const int last = -1;
    const auto [logits, trace] = s.model.forward_with_trace(ex.tokens, std::span(&last, 1), &hooks);
    const auto lens = logit_lens(trace, s.model.unembedding());
    for (int l = 1; l <= 2; ++l) {
        for (auto m : {ModuleKind::attn, ModuleKind::mlp}) {
            const auto& v = lens.module(m, l);
            const auto spec = dft(s.basis, v);
            for (int k = 1; k < spec.magnitudes.size(); ++k) {
                if (k != gamma) {
                    CHECK(spec.magnitudes[k] <= 1e-6 * std::max(1e-12, v.norm()) + 1e-12);
                }
            }
        }
    }
}

TEST_CASE("single component eval reports the modulus when the period is whole") {
    const auto& s = setup();
    const auto val = s.tiny.data.subset(Split::val);
    ProjectorCache cache;
    const auto two = single_component_eval(s.model, s.basis, val, 10, cache);
    CHECK(two.modulus == 2);
    CHECK(two.modular_accuracy == doctest::Approx(two.errors.parity_accuracy));
    const auto odd = single_component_eval(s.model, s.basis, val, 3, cache);
    CHECK(odd.modulus == 0);
    CHECK(std::isnan(odd.modular_accuracy));
}

TEST_CASE("run file parsing") {
    const auto doc = parse_toml(R"(
# paper-style rows
[[ablation]]
name = "none"
filter = { kind = "none" }

[[ablation]]
name = "mlp-low"
filter = { kind = "high_pass", tau = 3, targets = ["mlp"] }
layers = [1, 2]

[[ablation]]
name = "parity"
filter = { kind = "single_pass", gamma = 10, targets = ["attn", "mlp"] }
positions = [-1]
)");
    const auto specs = parse_run_file(doc, 21);
    REQUIRE(specs.size() == 3);
    CHECK(specs[0].filter == FilterSpec::identity(21));
    CHECK(specs[1].filter == FilterSpec::high_pass(21, 3));
    CHECK_FALSE(specs[1].attn);
    CHECK(specs[1].mlp);
    CHECK(specs[1].layers == std::vector<int>{1, 2});
    CHECK(specs[2].filter == FilterSpec::single_pass(21, 10));
    CHECK(specs[2].positions == std::vector<int>{-1});

    CHECK_THROWS(parse_run_file(parse_toml("[[ablation]]\nname = \"x\"\n"), 21));
    CHECK_THROWS(parse_run_file(parse_toml("[[ablation]]\nfilter = { kind = \"single_pass\" }\n"), 21));
    CHECK_THROWS(parse_run_file(parse_toml("[[ablation]]\nfilter = { kind = \"band\" }\n"), 21));
    CHECK_THROWS(parse_run_file(parse_toml("[[ablation]]\nfilter = { kind = \"none\", targets = [\"head\"] }\n"), 21));
    CHECK_THROWS(parse_run_file(parse_toml("x = 1\n"), 21));
}

TEST_CASE("table CSV has one row per spec") {
    const auto& s = setup();
    const auto val = s.tiny.data.subset(Split::val);
    ProjectorCache cache;
    const auto reps = run_sweep(s.model, s.basis, val, standard_table_specs(s.basis.p(), 3), cache);
    const auto path = std::filesystem::temp_directory_path() / "fprobe_table_test.csv";
    write_ablation_table(path.string(), reps);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line.starts_with("name,module,component_removed,validation_loss,accuracy"));
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
    }
    CHECK(rows == 7);
    std::filesystem::remove(path);
}

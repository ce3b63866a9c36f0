#include "fprobe/ablation.hpp"

#include "fprobe/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

namespace fprobe {

void AblationSpec::validate(int n_layers) const {
    filter.validate();
    if (!attn && !mlp) {
        throw std::invalid_argument("ablation '" + name + "': targets must include attn or mlp");
    }
    for (int l : layers) {
        if (l < 1 || l > n_layers) {
            throw std::invalid_argument("ablation '" + name + "': layer " + std::to_string(l) + " outside 1.." +
                                        std::to_string(n_layers));
        }
    }
}

std::string AblationSpec::targets() const {
    if (attn && mlp) {
        return "both";
    }
    return attn ? "attn" : "mlp";
}

std::string AblationSpec::removed_band() const {
    switch (filter.kind) {
        case FilterKind::low_pass:
            return filter.tau > (filter.p - 1) / 2 ? "none" : "high";
        case FilterKind::high_pass:
            return "low";
        case FilterKind::single_pass:
            return "all_but_" + std::to_string(filter.gamma);
    }
    return "?";
}

ErrorStats error_histogram(std::span<const int> predictions, std::span<const int> answers) {
    if (predictions.size() != answers.size()) {
        throw std::invalid_argument("error_histogram: predictions and answers differ in length");
    }
    ErrorStats s;
    s.n = static_cast<int>(predictions.size());
    int mult10 = 0;
    int le6 = 0;
    int le2 = 0;
    int parity_ok = 0;
    double signed_sum = 0.0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        const int e = predictions[i] - answers[i];
        ++s.histogram[e];
        signed_sum += e;
        parity_ok += (std::abs(e) % 2 == 0) ? 1 : 0;
        if (e == 0) {
            continue;
        }
        ++s.n_errors;
        mult10 += (std::abs(e) % 10 == 0) ? 1 : 0;
        le6 += std::abs(e) <= 6 ? 1 : 0;
        le2 += std::abs(e) <= 2 ? 1 : 0;
    }
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    s.no_errors = s.n_errors == 0;
    s.frac_mult10 = s.no_errors ? nan : static_cast<double>(mult10) / s.n_errors;
    s.frac_le6 = s.no_errors ? nan : static_cast<double>(le6) / s.n_errors;
    s.frac_le2 = s.no_errors ? nan : static_cast<double>(le2) / s.n_errors;
    s.parity_accuracy = s.n > 0 ? static_cast<double>(parity_ok) / s.n : nan;
    s.mean_signed_error = s.n > 0 ? signed_sum / s.n : nan;
    return s;
}

AblationReport ablate_eval(const AnalysisModel& model, const FourierBasis& basis, std::span<const Example> examples,
                           const AblationSpec& spec, ProjectorCache& cache) {
    const int n_layers = model.config().n_layers;
    spec.validate(n_layers);
    if (spec.filter.p != basis.p() || basis.p() != model.config().n_numbers) {
        throw std::invalid_argument("ablate_eval: filter, basis and model disagree on p");
    }
    if (examples.empty()) {
        throw std::invalid_argument("ablate_eval: empty split");
    }
    const auto proj = cache.get(basis, model.unembedding(), spec.filter);

    AblationReport rep;
    rep.spec = spec;
    EvalResult ev;
    if (proj->is_identity()) {
        // No hooks at all keeps the logits bitwise identical to a plain pass.
        ev = evaluate(model, examples);
    } else {
        ModuleHooks<double> hooks;
        hooks.attn.assign(static_cast<size_t>(n_layers), nullptr);
        hooks.mlp.assign(static_cast<size_t>(n_layers), nullptr);
        hooks.positions = spec.positions;
        for (int l = 1; l <= n_layers; ++l) {
            const bool chosen = spec.layers.empty() || std::find(spec.layers.begin(), spec.layers.end(), l) != spec.layers.end();
            if (!chosen) {
                continue;
            }
            if (spec.attn) {
                hooks.attn[static_cast<size_t>(l - 1)] = &proj->matrix;
            }
            if (spec.mlp) {
                hooks.mlp[static_cast<size_t>(l - 1)] = &proj->matrix;
            }
        }
        ev = evaluate(model, examples, &hooks);
    }
    rep.loss = ev.loss;
    rep.accuracy = ev.accuracy;
    rep.predictions = std::move(ev.predictions);

    std::vector<int> answers;
    answers.reserve(examples.size());
    for (const auto& ex : examples) {
        answers.push_back(ex.answer);
    }
    rep.errors = error_histogram(rep.predictions, answers);

    if (spec.filter.kind == FilterKind::single_pass && (basis.p() - 1) % spec.filter.gamma == 0) {
        rep.modulus = (basis.p() - 1) / spec.filter.gamma;
        int ok = 0;
        for (size_t i = 0; i < answers.size(); ++i) {
            ok += rep.predictions[i] % rep.modulus == answers[i] % rep.modulus ? 1 : 0;
        }
        rep.modular_accuracy = static_cast<double>(ok) / static_cast<double>(answers.size());
    }
    return rep;
}

AblationReport single_component_eval(const AnalysisModel& model, const FourierBasis& basis,
                                     std::span<const Example> examples, int gamma, ProjectorCache& cache) {
    AblationSpec spec;
    spec.name = "single_" + std::to_string(gamma);
    spec.filter = FilterSpec::single_pass(basis.p(), gamma);
    return ablate_eval(model, basis, examples, spec, cache);
}

std::vector<AblationReport> run_sweep(const AnalysisModel& model, const FourierBasis& basis,
                                      std::span<const Example> examples, std::span<const AblationSpec> specs,
                                      ProjectorCache& cache) {
    std::vector<AblationReport> out;
    out.reserve(specs.size());
    for (const auto& s : specs) {
        out.push_back(ablate_eval(model, basis, examples, s, cache));
    }
    return out;
}

namespace {

std::vector<int> int_list(const nlohmann::ordered_json& j, const char* key) {
    std::vector<int> out;
    if (j.contains(key)) {
        for (const auto& v : j.at(key)) {
            out.push_back(v.get<int>());
        }
    }
    return out;
}

}  // namespace

std::vector<AblationSpec> parse_run_file(const nlohmann::ordered_json& doc, int p) {
    if (!doc.contains("ablation") || !doc.at("ablation").is_array() || doc.at("ablation").empty()) {
        throw std::invalid_argument("run file has no [[ablation]] entries");
    }
    std::vector<AblationSpec> specs;
    for (const auto& entry : doc.at("ablation")) {
        AblationSpec s;
        s.name = entry.value("name", "row" + std::to_string(specs.size() + 1));
        if (!entry.contains("filter")) {
            throw std::invalid_argument("ablation '" + s.name + "' has no filter");
        }
        const auto& f = entry.at("filter");
        const auto kind = f.at("kind").get<std::string>();
        const int tau = f.value("tau", default_tau(p));
        if (kind == "none") {
            s.filter = FilterSpec::identity(p);
        } else if (kind == "single_pass") {
            if (!f.contains("gamma")) {
                throw std::invalid_argument("ablation '" + s.name + "': single_pass needs gamma");
            }
            s.filter = FilterSpec::single_pass(p, f.at("gamma").get<int>());
        } else {
            s.filter = {filter_kind_from_string(kind), tau, 0, p};
        }
        if (f.contains("targets")) {
            s.attn = false;
            s.mlp = false;
            for (const auto& t : f.at("targets")) {
                const auto m = module_kind_from_string(t.get<std::string>());
                (m == ModuleKind::attn ? s.attn : s.mlp) = true;
            }
        }
        s.layers = int_list(entry, "layers");
        s.positions = int_list(entry, "positions");
        s.filter.validate();
        specs.push_back(std::move(s));
    }
    return specs;
}

std::vector<AblationSpec> standard_table_specs(int p, int tau) {
    std::vector<AblationSpec> specs;
    auto add = [&](std::string name, FilterSpec f, bool attn, bool mlp) {
        AblationSpec s;
        s.name = std::move(name);
        s.filter = f;
        s.attn = attn;
        s.mlp = mlp;
        specs.push_back(std::move(s));
    };
    add("none", FilterSpec::identity(p), true, true);
    add("both-low", FilterSpec::high_pass(p, tau), true, true);
    add("attn-low", FilterSpec::high_pass(p, tau), true, false);
    add("mlp-low", FilterSpec::high_pass(p, tau), false, true);
    add("both-high", FilterSpec::low_pass(p, tau), true, true);
    add("attn-high", FilterSpec::low_pass(p, tau), true, false);
    add("mlp-high", FilterSpec::low_pass(p, tau), false, true);
    return specs;
}

void write_ablation_table(const std::string& path, std::span<const AblationReport> reports) {
    CsvWriter csv(path, {"name", "module", "component_removed", "validation_loss", "accuracy", "parity_accuracy",
                         "frac_err_mult10", "frac_err_le6", "mean_signed_error", "modulus", "modular_accuracy"});
    for (const auto& r : reports) {
        csv.row({r.spec.name, r.spec.targets(), r.spec.removed_band(), format_double(r.loss),
                 format_double(r.accuracy), format_double(r.errors.parity_accuracy),
                 format_double(r.errors.frac_mult10), format_double(r.errors.frac_le6),
                 format_double(r.errors.mean_signed_error), r.modulus > 0 ? std::to_string(r.modulus) : "",
                 r.modulus > 0 ? format_double(r.modular_accuracy) : ""});
    }
    csv.close();
}

void write_error_histogram(const std::string& path, const ErrorStats& stats) {
    CsvWriter csv(path, {"signed_error", "count"});
    for (const auto& [e, c] : stats.histogram) {
        csv.row({std::to_string(e), std::to_string(c)});
    }
    csv.close();
}

}  // namespace fprobe

#pragma once

#include "fprobe/filters.hpp"
#include "fprobe/lens.hpp"
#include "fprobe/model.hpp"

#include <nlohmann/json.hpp>

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fprobe {

/// A filter substituted for module outputs during the forward pass. Layers are
/// 1-based; empty layers or positions mean all of them. The embedding input
/// h^(0) is never filtered.
struct AblationSpec {
    std::string name;
    FilterSpec filter;
    bool attn = true;
    bool mlp = true;
    std::vector<int> layers;
    std::vector<int> positions;

    void validate(int n_layers) const;
    std::string targets() const;  // "attn", "mlp" or "both"
    // "none", "low", "high" or "all_but_<gamma>", naming what is taken out.
    std::string removed_band() const;
};

/// Signed errors (prediction - answer). Fractions other than parity and mean are
/// over the nonzero errors and are NaN when every prediction is right.
struct ErrorStats {
    std::map<int, int> histogram;  // includes error 0; counts sum to n
    int n = 0;
    int n_errors = 0;
    bool no_errors = false;
    double frac_mult10 = 0.0;
    double frac_le6 = 0.0;
    double frac_le2 = 0.0;
    double parity_accuracy = 0.0;
    double mean_signed_error = 0.0;  // over all examples
};

ErrorStats error_histogram(std::span<const int> predictions, std::span<const int> answers);

struct AblationReport {
    AblationSpec spec;
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<int> predictions;
    ErrorStats errors;
    // Set for single-pass filters with an integer period; NaN / 0 otherwise.
    int modulus = 0;
    double modular_accuracy = std::numeric_limits<double>::quiet_NaN();
};

AblationReport ablate_eval(const AnalysisModel& model, const FourierBasis& basis,
                           std::span<const Example> examples, const AblationSpec& spec,
                           ProjectorCache& cache);

/// single_pass(gamma) on every attention and MLP output.
AblationReport single_component_eval(const AnalysisModel& model, const FourierBasis& basis,
                                     std::span<const Example> examples, int gamma, ProjectorCache& cache);

/// Runs specs in order; reports come back in the same order.
std::vector<AblationReport> run_sweep(const AnalysisModel& model, const FourierBasis& basis,
                                      std::span<const Example> examples, std::span<const AblationSpec> specs,
                                      ProjectorCache& cache);

/// Parses [[ablation]] tables:
///   name = "mlp-low"
///   filter = { kind = "high_pass", tau = 10, targets = ["mlp"] }
///   layers = [1, 2]      (optional)
///   positions = [-1]     (optional)
/// kind is low_pass | high_pass | single_pass | none; tau defaults to default_tau(p).
std::vector<AblationSpec> parse_run_file(const nlohmann::ordered_json& doc, int p);

/// The seven rows of the paper-style table (none, then low/high removed from
/// both, attention and MLP), at threshold tau.
std::vector<AblationSpec> standard_table_specs(int p, int tau);

void write_ablation_table(const std::string& path, std::span<const AblationReport> reports);
void write_error_histogram(const std::string& path, const ErrorStats& stats);

}  // namespace fprobe

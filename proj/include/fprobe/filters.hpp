#pragma once

#include "fprobe/fourier.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>

namespace fprobe {

enum class FilterKind { low_pass, high_pass, single_pass };

/// Which Fourier components a filter strips from a module's logit contribution.
/// low_pass removes k >= tau, high_pass removes 1 <= k < tau, single_pass removes
/// everything except gamma. The constant component is always kept.
struct FilterSpec {
    FilterKind kind = FilterKind::low_pass;
    int tau = 0;
    int gamma = 0;
    int p = 0;

    static FilterSpec low_pass(int p, int tau) { return {FilterKind::low_pass, tau, 0, p}; }
    static FilterSpec high_pass(int p, int tau) { return {FilterKind::high_pass, tau, 0, p}; }
    static FilterSpec single_pass(int p, int gamma) { return {FilterKind::single_pass, 0, gamma, p}; }
    // A low-pass above the top component removes nothing.
    static FilterSpec identity(int p) { return low_pass(p, (p - 1) / 2 + 1); }

    bool removes(int k) const;
    void validate() const;

    auto key() const { return std::tuple(static_cast<int>(kind), tau, gamma, p); }
    bool operator==(const FilterSpec&) const = default;
};

std::string to_string(FilterKind kind);
FilterKind filter_kind_from_string(const std::string& s);

/// Component threshold 50 at p = 521, scaled by (p-1)/520 for smaller vocabularies.
int default_tau(int p);

/// Diagonal of the binary row mask B (1 = row is constrained to zero).
Eigen::VectorXd build_mask(const FilterSpec& spec);

/// Orthogonal projector onto the null space of B F W_U.
struct Projector {
    MatD matrix;  // D x D
    FilterSpec spec;
    int rank_removed = 0;  // masked Fourier rows
    int null_dim = 0;
    bool degenerate_unembedding = false;  // W_U was all zero; matrix is I

    int dim() const { return static_cast<int>(matrix.rows()); }
    bool is_identity() const { return null_dim == dim(); }
};

/// Singular values at or below kSvdCutoff * sigma_max count as zero.
inline constexpr double kSvdCutoff = 1e-8;

Projector build_projector(const FourierBasis& basis, const MatD& unembed, const FilterSpec& spec);

Eigen::VectorXd apply_filter(const Projector& proj, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Thread-safe memo of projectors keyed by W_U content hash and filter spec.
class ProjectorCache {
public:
    std::shared_ptr<const Projector> get(const FourierBasis& basis, const MatD& unembed,
                                         const FilterSpec& spec);
    size_t size() const;

private:
    using Key = std::tuple<uint64_t, int, int, int, int>;
    mutable std::mutex mu_;
    std::map<Key, std::shared_ptr<const Projector>> entries_;
};

}  // namespace fprobe

#include "fprobe/filters.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace fprobe {

bool FilterSpec::removes(int k) const {
    if (k == 0) {
        return false;
    }
    switch (kind) {
        case FilterKind::low_pass:
            return k >= tau;
        case FilterKind::high_pass:
            return k < tau;
        case FilterKind::single_pass:
            return k != gamma;
    }
    return false;
}

void FilterSpec::validate() const {
    if (p < 3 || p % 2 == 0) {
        throw std::invalid_argument("FilterSpec: p must be odd and >= 3");
    }
    const int top = (p - 1) / 2;
    if (kind == FilterKind::single_pass) {
        if (gamma < 1 || gamma > top) {
            throw std::invalid_argument("FilterSpec: gamma=" + std::to_string(gamma) +
                                        " outside [1, " + std::to_string(top) + "]");
        }
    } else if (tau < 1 || tau > top + 1) {
        throw std::invalid_argument("FilterSpec: tau=" + std::to_string(tau) + " outside [1, " +
                                    std::to_string(top + 1) + "]");
    }
}

std::string to_string(FilterKind kind) {
    switch (kind) {
        case FilterKind::low_pass:
            return "low_pass";
        case FilterKind::high_pass:
            return "high_pass";
        case FilterKind::single_pass:
            return "single_pass";
    }
    return "?";
}

FilterKind filter_kind_from_string(const std::string& s) {
    if (s == "low_pass") {
        return FilterKind::low_pass;
    }
    if (s == "high_pass") {
        return FilterKind::high_pass;
    }
    if (s == "single_pass") {
        return FilterKind::single_pass;
    }
    throw std::invalid_argument("unknown filter kind '" + s + "'");
}

int default_tau(int p) {
    const int tau = static_cast<int>(std::lround(50.0 * (p - 1) / 520.0));
    return tau < 1 ? 1 : tau;
}

Eigen::VectorXd build_mask(const FilterSpec& spec) {
    spec.validate();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(spec.p);
    for (int i = 1; i < spec.p; ++i) {
        if (spec.removes(FourierBasis::component_of_row(i))) {
            b[i] = 1.0;
        }
    }
    return b;
}

Projector build_projector(const FourierBasis& basis, const MatD& unembed, const FilterSpec& spec) {
    if (spec.p != basis.p()) {
        throw std::invalid_argument("build_projector: filter p does not match basis p");
    }
    if (unembed.rows() != basis.p() || unembed.cols() < 1) {
        throw std::invalid_argument("build_projector: W_U must be p x D with p=" +
                                    std::to_string(basis.p()));
    }
    const Eigen::VectorXd mask = build_mask(spec);
    const auto dim = unembed.cols();

    Projector proj;
    proj.spec = spec;
    proj.rank_removed = static_cast<int>(mask.sum());
    proj.matrix = MatD::Identity(dim, dim);
    proj.null_dim = static_cast<int>(dim);

    if (unembed.isZero(0.0)) {
        proj.degenerate_unembedding = true;
        return proj;
    }
    if (proj.rank_removed == 0) {
        return proj;
    }

    // B F W_U restricted to its nonzero rows has the same null space.
    const Eigen::MatrixXd fw = basis.matrix() * unembed;
    Eigen::MatrixXd constrained(proj.rank_removed, dim);
    for (int i = 0, r = 0; i < basis.p(); ++i) {
        if (mask[i] != 0.0) {
            constrained.row(r++) = fw.row(i);
        }
    }

    Eigen::BDCSVD<Eigen::MatrixXd> svd(constrained, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double sigma_max = sv.size() > 0 ? sv[0] : 0.0;
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv[i] > kSvdCutoff * sigma_max) {
            ++rank;
        }
    }
    const Eigen::MatrixXd null_basis = svd.matrixV().rightCols(dim - rank);
    proj.null_dim = static_cast<int>(null_basis.cols());
    proj.matrix = null_basis * null_basis.transpose();
    return proj;
}

Eigen::VectorXd apply_filter(const Projector& proj, const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (x.size() != proj.dim()) {
        throw std::invalid_argument("apply_filter: vector length " + std::to_string(x.size()) +
                                    " does not match projector dimension " +
                                    std::to_string(proj.dim()));
    }
    return proj.matrix * x;
}

std::shared_ptr<const Projector> ProjectorCache::get(const FourierBasis& basis, const MatD& unembed,
                                                     const FilterSpec& spec) {
    const Key key{content_hash(unembed), static_cast<int>(spec.kind), spec.tau, spec.gamma, spec.p};
    {
        std::lock_guard lock(mu_);
        if (auto it = entries_.find(key); it != entries_.end()) {
            return it->second;
        }
    }
    auto built = std::make_shared<const Projector>(build_projector(basis, unembed, spec));
    std::lock_guard lock(mu_);
    auto [it, inserted] = entries_.emplace(key, std::move(built));
    return it->second;
}

size_t ProjectorCache::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

}  // namespace fprobe

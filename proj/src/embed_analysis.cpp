#include "fprobe/embed_analysis.hpp"

#include <limits>

namespace fprobe {

Spectrum embedding_spectrum(const FourierBasis& basis, const MatD& number_embeddings) {
    if (number_embeddings.rows() != basis.p()) {
        throw std::invalid_argument("embedding_spectrum: expected " + std::to_string(basis.p()) +
                                    " rows, got " + std::to_string(number_embeddings.rows()));
    }
    const MatD v = basis.matrix() * number_embeddings;
    Spectrum s;
    s.p = basis.p();
    s.raw = v.rowwise().norm();
    s.magnitudes = fold_magnitudes(basis.p(), s.raw);
    return s;
}

namespace {

struct RunResult {
    std::vector<int> assignment;
    MatD centroids;
    double inertia = 0.0;
    std::vector<double> trace;
};

double sq_dist(const MatD& a, Eigen::Index i, const MatD& b, Eigen::Index j) {
    return (a.row(i) - b.row(j)).squaredNorm();
}

MatD plus_plus_init(const MatD& x, int k, Rng& rng) {
    const auto n = x.rows();
    MatD c(k, x.cols());
    c.row(0) = x.row(static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(n))));
    std::vector<double> d2(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        d2[static_cast<size_t>(i)] = sq_dist(x, i, c, 0);
    }
    for (int j = 1; j < k; ++j) {
        double total = 0.0;
        for (double d : d2) {
            total += d;
        }
        Eigen::Index pick = 0;
        if (total <= 0.0) {
            // All remaining points coincide with a centre; any choice is as good.
            pick = static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(n)));
        } else {
            double r = rng.uniform() * total;
            pick = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                r -= d2[static_cast<size_t>(i)];
                if (r < 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        c.row(j) = x.row(pick);
        for (Eigen::Index i = 0; i < n; ++i) {
            d2[static_cast<size_t>(i)] = std::min(d2[static_cast<size_t>(i)], sq_dist(x, i, c, j));
        }
    }
    return c;
}

RunResult lloyd(const MatD& x, int k, Rng& rng, int max_iter) {
    const auto n = x.rows();
    RunResult res;
    res.centroids = plus_plus_init(x, k, rng);
    res.assignment.assign(static_cast<size_t>(n), -1);
    for (int it = 0; it < max_iter; ++it) {
        bool changed = false;
        double inertia = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j) {
                const double d = sq_dist(x, i, res.centroids, j);
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            inertia += best_d;
            if (res.assignment[static_cast<size_t>(i)] != best) {
                res.assignment[static_cast<size_t>(i)] = best;
                changed = true;
            }
        }
        res.inertia = inertia;
        res.trace.push_back(inertia);
        if (!changed) {
            break;
        }
        MatD sums = MatD::Zero(k, x.cols());
        std::vector<int> counts(static_cast<size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int a = res.assignment[static_cast<size_t>(i)];
            sums.row(a) += x.row(i);
            ++counts[static_cast<size_t>(a)];
        }
        for (int j = 0; j < k; ++j) {
            // An emptied cluster keeps its old centre.
            if (counts[static_cast<size_t>(j)] > 0) {
                res.centroids.row(j) = sums.row(j) / counts[static_cast<size_t>(j)];
            }
        }
    }
    return res;
}

}  // namespace

ClusterResult cluster_embeddings(const MatD& number_embeddings, int k, uint64_t seed, const KMeansOptions& opts) {
    const auto n = number_embeddings.rows();
    if (k < 1 || k > n) {
        throw std::invalid_argument("cluster_embeddings: k must be in [1, " + std::to_string(n) + "]");
    }
    if (opts.restarts < 1 || opts.max_iter < 1) {
        throw std::invalid_argument("cluster_embeddings: restarts and max_iter must be positive");
    }
    std::vector<RunResult> runs(static_cast<size_t>(opts.restarts));
    parallel_for(runs.size(), [&](size_t r) {
        Rng rng(derive_seed(seed, r));
        runs[r] = lloyd(number_embeddings, k, rng, opts.max_iter);
    });
    ClusterResult out;
    for (size_t r = 0; r < runs.size(); ++r) {
        out.restart_inertia.push_back(runs[r].inertia);
        if (runs[r].inertia < runs[static_cast<size_t>(out.best_restart)].inertia) {
            out.best_restart = static_cast<int>(r);
        }
    }
    auto& best = runs[static_cast<size_t>(out.best_restart)];
    out.assignment = std::move(best.assignment);
    out.centroids = std::move(best.centroids);
    out.inertia = best.inertia;
    out.inertia_trace = std::move(best.trace);
    out.coords = principal_coords(number_embeddings);
    return out;
}

MatD principal_coords(const MatD& rows) {
    const MatD centred = rows.rowwise() - rows.colwise().mean();
    MatD coords = MatD::Zero(rows.rows(), 2);
    if (rows.cols() == 0 || rows.rows() < 2) {
        return coords;
    }
    Eigen::BDCSVD<MatD> svd(centred, Eigen::ComputeThinV);
    const MatD& v = svd.matrixV();
    for (Eigen::Index a = 0; a < std::min<Eigen::Index>(2, v.cols()); ++a) {
        Eigen::VectorXd axis = v.col(a);
        Eigen::Index idx = 0;
        axis.cwiseAbs().maxCoeff(&idx);
        if (axis(idx) < 0) {
            axis = -axis;
        }
        coords.col(a) = centred * axis;
    }
    return coords;
}

}  // namespace fprobe

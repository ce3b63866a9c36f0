#pragma once

#include "fprobe/fourier.hpp"

#include <vector>

namespace fprobe {

/// Column-wise DFT of the number embeddings (V = F W), then the L2 norm of each
/// Fourier row across columns. raw holds the per-row norms; magnitudes fold
/// each sin/cos pair into one component.
Spectrum embedding_spectrum(const FourierBasis& basis, const MatD& number_embeddings);

struct ClusterResult {
    std::vector<int> assignment;  // cluster id per number
    MatD centroids;               // k x D
    double inertia = 0.0;
    int best_restart = 0;
    std::vector<double> restart_inertia;
    std::vector<double> inertia_trace;  // best restart, one entry per Lloyd iteration
    MatD coords;                        // p x 2 principal-component projection
};

struct KMeansOptions {
    int restarts = 50;
    int max_iter = 300;
};

/// k-means with k-means++ seeding; each restart draws from derive_seed(seed, restart)
/// and the lowest inertia wins (earliest restart on ties).
ClusterResult cluster_embeddings(const MatD& number_embeddings, int k, uint64_t seed,
                                 const KMeansOptions& opts = {});

/// Rows projected on the top two principal axes of the mean-centred data. Each
/// axis is signed so its largest-magnitude loading is positive.
MatD principal_coords(const MatD& rows);

}  // namespace fprobe

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fprobe {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using MatD = Mat<double>;
using MatF = Mat<float>;

inline constexpr std::string_view kToolVersion = "0.1.0";

// Seeded generator with platform-independent sampling. std:: distributions are
// implementation-defined, which would break byte-identical reruns across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n);

    double normal();

    template <class It>
    void shuffle(It first, It last) {
        const auto n = static_cast<uint64_t>(last - first);
        for (uint64_t i = n; i > 1; --i) {
            const auto j = below(i);
            std::iter_swap(first + (i - 1), first + j);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// SplitMix64 finalizer; derives independent stream seeds from a base seed.
uint64_t derive_seed(uint64_t base, uint64_t stream);

// FNV-1a over raw bytes. Used for content fingerprints, not security.
uint64_t fnv1a(std::span<const std::byte> bytes, uint64_t h = 0xcbf29ce484222325ULL);
uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL);

template <class Derived>
uint64_t content_hash(const Eigen::DenseBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    Mat<Scalar> dense = m;
    const Eigen::Index shape[2] = {dense.rows(), dense.cols()};
    const uint64_t h = fnv1a(std::as_bytes(std::span(shape)));
    return fnv1a(std::as_bytes(std::span(dense.data(), static_cast<size_t>(dense.size()))), h);
}

std::string hex64(uint64_t v);

// Thread cap from FPROBE_THREADS (default: hardware concurrency, at least 1).
int thread_cap();

/// Runs fn(i) for i in [0, n) across thread_cap() workers. Each index is handled
/// exactly once; callers write results by index, so output is thread-count independent.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace fprobe

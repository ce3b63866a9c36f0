#include "doctest.h"

#include "fprobe/embed_analysis.hpp"
#include "fprobe/filters.hpp"
#include "fprobe/model.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <numeric>

using namespace fprobe;

namespace {

MatD random_mat(Rng& rng, int r, int c) {
    MatD m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.normal();
    }
    return m;
}

double median(Eigen::VectorXd v) {
    std::sort(v.data(), v.data() + v.size());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("embedding spectrum basics") {
    const FourierBasis b(21);
    CHECK(embedding_spectrum(b, MatD::Zero(21, 5)).magnitudes.isZero(0.0));
    CHECK_THROWS(embedding_spectrum(b, MatD::Zero(20, 5)));

    Rng rng(4);
    const MatD w = random_mat(rng, 21, 6);
    const auto s = embedding_spectrum(b, w);

    MatD perm = w;
    perm.col(0).swap(perm.col(5));
    perm.col(1).swap(perm.col(3));
    CHECK((embedding_spectrum(b, perm).magnitudes - s.magnitudes).cwiseAbs().maxCoeff() <= 1e-12);

    // Scaling column j scales only its share of each squared norm.
    MatD scaled = w;
    scaled.col(2) *= 3.0;
    const Eigen::VectorXd col2 = (b.matrix() * w.col(2)).cwiseAbs2();
    const Eigen::VectorXd expect = (s.raw.cwiseAbs2() + 8.0 * col2).cwiseSqrt();
    CHECK((embedding_spectrum(b, scaled).raw - expect).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("synthetic embeddings peak at their periods") {
    const int p = 521;
    const FourierBasis b(p);
    const std::vector<double> periods{2.0, 2.5, 5.0, 10.0};
    const auto s = embedding_spectrum(b, synth_fourier_embedding(p, 64, periods, 0.3, 2));
    std::vector<int> ks;
    for (const auto& o : sigma_outliers(s, default_tau(p))) {
        ks.push_back(o.k);
    }
    std::sort(ks.begin(), ks.end());
    CHECK(ks == std::vector<int>{52, 104, 208, 260});

    const auto one = embedding_spectrum(FourierBasis(101), synth_fourier_embedding(101, 4, std::vector<double>{2.0}, 0.3, 1));
    const auto out = sigma_outliers(one, default_tau(101));
    REQUIRE(out.size() == 1);
    CHECK(out[0].k == 50);
}

TEST_CASE("random normal embeddings have no 3x-median component") {
    // Threshold fixed by a 100-seed sweep; the worst ratio is reported.
    double worst = 0.0;
    for (int p : {101, 521}) {
        const FourierBasis b(p);
        for (uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(seed);
            const auto s = embedding_spectrum(b, random_mat(rng, p, 64));
            const Eigen::VectorXd band = s.magnitudes.tail(s.magnitudes.size() - 1);
            const double ratio = band.maxCoeff() / median(band);
            worst = std::max(worst, ratio);
            CHECK(ratio < 3.0);
            CHECK(sigma_outliers(s, default_tau(p)).empty());
        }
    }
    MESSAGE("worst max/median ratio over random embeddings: ", worst);
}

TEST_CASE("k-means recovers separated buckets") {
    const int n = 30;
    MatD w = MatD::Zero(n, 3);
    for (int i = 0; i < n; ++i) {
        w(i, i / 10) = 1.0 + 0.01 * (i % 10);
    }
    const auto res = cluster_embeddings(w, 3, 5);
    for (int i = 0; i < n; ++i) {
        CHECK(res.assignment[static_cast<size_t>(i)] == res.assignment[static_cast<size_t>((i / 10) * 10)]);
    }
    CHECK(res.assignment[0] != res.assignment[10]);
    CHECK(res.assignment[10] != res.assignment[20]);
    CHECK_THROWS(cluster_embeddings(w, 31, 1));
    CHECK_THROWS(cluster_embeddings(w, 0, 1));
}

TEST_CASE("k-means: deterministic, monotone inertia, best restart wins") {
    Rng rng(9);
    const MatD w = random_mat(rng, 101, 8);
    const auto a = cluster_embeddings(w, 10, 77);
    const auto b = cluster_embeddings(w, 10, 77);
    CHECK(a.assignment == b.assignment);
    CHECK(a.coords == b.coords);
    CHECK(a.restart_inertia.size() == 50);
    for (size_t i = 1; i < a.inertia_trace.size(); ++i) {
        CHECK(a.inertia_trace[i] <= a.inertia_trace[i - 1] + 1e-9);
    }
    CHECK(a.inertia == *std::min_element(a.restart_inertia.begin(), a.restart_inertia.end()));
    CHECK(a.coords.rows() == 101);
    CHECK(a.coords.cols() == 2);
}

TEST_CASE("principal coords: centred, ordered by variance, sign fixed") {
    Rng rng(1);
    MatD w = random_mat(rng, 50, 4);
    w.col(0) *= 10.0;
    const MatD c = principal_coords(w);
    CHECK(std::abs(c.col(0).mean()) <= 1e-9);
    CHECK(c.col(0).squaredNorm() >= c.col(1).squaredNorm());
    // Axes are pinned by their loadings, so negating the data negates the coordinates.
    const MatD flipped = principal_coords(-w);
    CHECK((flipped + c).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("period-10 embedding clusters multiples of ten together") {
    const int p = 101;
    const std::vector<double> periods{10.0};
    const MatD w = synth_fourier_embedding(p, 32, periods, 0.1, 3);
    const auto res = cluster_embeddings(w, 10, 11);
    // Chi-square test of independence: cluster id vs (n mod 10 == 0).
    MatD table = MatD::Zero(10, 2);
    for (int n = 0; n < p; ++n) {
        table(res.assignment[static_cast<size_t>(n)], n % 10 == 0 ? 1 : 0) += 1;
    }
    const Eigen::VectorXd rows = table.rowwise().sum();
    const Eigen::RowVectorXd cols = table.colwise().sum();
    double chi2 = 0.0;
    int used_rows = 0;
    for (int r = 0; r < 10; ++r) {
        if (rows[r] == 0) {
            continue;
        }
        ++used_rows;
        for (int c = 0; c < 2; ++c) {
            const double e = rows[r] * cols[c] / p;
            chi2 += (table(r, c) - e) * (table(r, c) - e) / e;
        }
    }
    const boost::math::chi_squared dist(used_rows - 1);
    const double pval = boost::math::cdf(boost::math::complement(dist, chi2));
    MESSAGE("chi2=", chi2, " p=", pval);
    CHECK(pval < 0.01);
}

#include "doctest.h"

#include "fprobe/filters.hpp"

#include <thread>

using namespace fprobe;

namespace {

MatD random_mat(Rng& rng, int r, int c) {
    MatD m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.normal();
    }
    return m;
}

Eigen::VectorXd random_vec(Rng& rng, int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) {
        v[i] = rng.normal();
    }
    return v;
}

// B F W_U as a dense p x D matrix (masked rows zeroed).
MatD constraint_matrix(const FourierBasis& b, const MatD& wu, const FilterSpec& spec) {
    return build_mask(spec).asDiagonal() * (b.matrix() * wu);
}

}  // namespace

TEST_CASE("mask shapes") {
    SUBCASE("nothing removed") {
        CHECK(build_mask(FilterSpec::identity(21)).isZero(0.0));
    }
    SUBCASE("single pass at p=521 keeps two rows plus the constant") {
        const auto b = build_mask(FilterSpec::single_pass(521, 260));
        CHECK(b.sum() == 518);
        CHECK(b[0] == 0.0);
        CHECK(b[519] == 0.0);
        CHECK(b[520] == 0.0);
    }
    SUBCASE("high pass tau=50 at p=521 masks components 1..49") {
        const auto b = build_mask(FilterSpec::high_pass(521, 50));
        CHECK(b.sum() == 98);
        CHECK(b.segment(1, 98).isOnes());
        CHECK(b[0] == 0.0);
        CHECK(b[99] == 0.0);
    }
    SUBCASE("low pass removes k >= tau") {
        const auto b = build_mask(FilterSpec::low_pass(21, 4));
        CHECK(b.head(7).isZero(0.0));
        CHECK(b.tail(14).isOnes());
    }
    CHECK_THROWS(build_mask(FilterSpec::single_pass(21, 0)));
    CHECK_THROWS(build_mask(FilterSpec::single_pass(21, 11)));
    CHECK_THROWS(build_mask(FilterSpec::low_pass(21, 0)));
    CHECK_THROWS(build_mask(FilterSpec::high_pass(21, 12)));
}

TEST_CASE("default tau scales with the vocabulary") {
    CHECK(default_tau(521) == 50);
    CHECK(default_tau(101) == 10);
    CHECK(default_tau(5) == 1);
}

TEST_CASE("projector properties over random unembeddings and specs") {
    Rng rng(17);
    const int p = 21;
    const FourierBasis basis(p);
    const std::vector<FilterSpec> specs = {FilterSpec::low_pass(p, 3), FilterSpec::high_pass(p, 4),
                                           FilterSpec::single_pass(p, 10), FilterSpec::single_pass(p, 2),
                                           FilterSpec::high_pass(p, 9)};
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 8 + static_cast<int>(rng.below(40));
        const MatD wu = random_mat(rng, p, d);
        for (const auto& spec : specs) {
            const auto proj = build_projector(basis, wu, spec);
            const MatD& P = proj.matrix;
            CHECK((P * P - P).cwiseAbs().maxCoeff() <= 1e-8);
            CHECK((P - P.transpose()).cwiseAbs().maxCoeff() <= 1e-8);

            // Rank oracle: column-pivoted QR of the constrained rows.
            Eigen::ColPivHouseholderQR<MatD> qr(constraint_matrix(basis, wu, spec));
            qr.setThreshold(1e-10);
            CHECK(proj.null_dim == d - static_cast<int>(qr.rank()));

            const MatD c = constraint_matrix(basis, wu, spec);
            for (int t = 0; t < 10; ++t) {
                const auto x = random_vec(rng, d);
                const auto y = apply_filter(proj, x);
                CHECK(y.norm() <= x.norm() * (1 + 1e-12));
                CHECK((c * y).cwiseAbs().maxCoeff() <= 1e-7 * x.norm());
                const double lhs = x.squaredNorm();
                const double rhs = y.squaredNorm() + (x - y).squaredNorm();
                CHECK(std::abs(lhs - rhs) <= 1e-7 * lhs);
                CHECK((apply_filter(proj, y) - y).cwiseAbs().maxCoeff() <= 1e-9 * x.norm());
            }
        }
    }
}

TEST_CASE("projection is the closest feasible point") {
    Rng rng(5);
    const int p = 21;
    const FourierBasis basis(p);
    const MatD wu = random_mat(rng, p, 32);
    const auto proj = build_projector(basis, wu, FilterSpec::high_pass(p, 4));
    const auto x = random_vec(rng, 32);
    const auto y = apply_filter(proj, x);
    const double base = (x - y).norm();
    for (int t = 0; t < 100; ++t) {
        Eigen::VectorXd delta = proj.matrix * random_vec(rng, 32);
        delta.normalize();
        for (double eps : {1e-3, 1e-1, 1.0}) {
            CHECK((x - (y + eps * delta)).norm() >= base - 1e-12);
        }
    }
}

TEST_CASE("filtered logits lose the removed band") {
    Rng rng(23);
    const int p = 101;
    const FourierBasis basis(p);
    const MatD wu = random_mat(rng, p, 256);
    const auto x = random_vec(rng, 256);

    const auto hp = build_projector(basis, wu, FilterSpec::high_pass(p, 10));
    const auto s = dft(basis, wu * apply_filter(hp, x));
    CHECK(s.magnitudes.segment(1, 9).maxCoeff() <= 1e-6 * x.norm());

    const auto sp = build_projector(basis, wu, FilterSpec::single_pass(p, 7));
    const auto s2 = dft(basis, wu * apply_filter(sp, x));
    for (int k = 1; k <= 50; ++k) {
        if (k != 7) {
            CHECK(s2.magnitudes[k] <= 1e-6 * x.norm());
        }
    }
    CHECK(s2.magnitudes[7] > 1e-3);
}

TEST_CASE("identity and degenerate projectors") {
    const int p = 9;
    const FourierBasis basis(p);
    Rng rng(1);
    const MatD wu = random_mat(rng, p, 6);
    const auto id = build_projector(basis, wu, FilterSpec::identity(p));
    CHECK(id.is_identity());
    CHECK(id.matrix == MatD::Identity(6, 6));
    CHECK_FALSE(id.degenerate_unembedding);

    const auto zero = build_projector(basis, MatD::Zero(p, 6), FilterSpec::high_pass(p, 3));
    CHECK(zero.degenerate_unembedding);
    CHECK(zero.matrix == MatD::Identity(6, 6));

    // D smaller than the masked rows: the constraint leaves nothing.
    // Five nonzero constrained rows (the top sin row is identically zero) against D = 4.
    const auto tight = build_projector(basis, random_mat(rng, p, 4), FilterSpec::single_pass(p, 2));
    CHECK(tight.null_dim == 0);
    CHECK(tight.matrix.isZero(0.0));

    CHECK_THROWS(build_projector(basis, MatD::Zero(p + 2, 6), FilterSpec::identity(p)));
    CHECK_THROWS(build_projector(basis, wu, FilterSpec::identity(11)));
    CHECK_THROWS(apply_filter(id, Eigen::VectorXd::Zero(5)));
}

TEST_CASE("projector cache reuses entries and is safe across threads") {
    const int p = 21;
    const FourierBasis basis(p);
    Rng rng(2);
    const MatD wu = random_mat(rng, p, 16);
    ProjectorCache cache;
    std::vector<std::shared_ptr<const Projector>> got(8);
    {
        std::vector<std::jthread> pool;
        for (size_t i = 0; i < got.size(); ++i) {
            pool.emplace_back([&, i] { got[i] = cache.get(basis, wu, FilterSpec::high_pass(p, 3)); });
        }
    }
    CHECK(cache.size() == 1);
    for (const auto& g : got) {
        CHECK(g.get() == got[0].get());
    }
    cache.get(basis, wu, FilterSpec::low_pass(p, 3));
    CHECK(cache.size() == 2);
    MatD other = wu;
    other(0, 0) += 1.0;
    cache.get(basis, other, FilterSpec::high_pass(p, 3));
    CHECK(cache.size() == 3);
}

#include "doctest.h"
#include "oracles.hpp"

#include "lmmnn/eigendecay.hpp"
#include "lmmnn/simgen.hpp"

#include <algorithm>
#include <functional>

using namespace lmmnn;

namespace {

Vector jacobi_desc(const DenseMatrix& m) {
    auto e = oracle::jacobi_eigenvalues(m);
    std::reverse(e.begin(), e.end());
    return e;
}

std::vector<std::size_t> poisson_sizes(std::size_t n, std::size_t q, std::uint64_t seed) {
    std::vector<std::size_t> sizes(q, 0);
    for (auto l : sample_cluster_sizes(n, q, seed)) ++sizes[l];
    std::erase(sizes, 0);
    return sizes;
}

}  // namespace

TEST_CASE("sizes (3,2,1), sigma2 = 2") {
    const std::vector<std::size_t> sizes{3, 2, 1};
    const auto r = categorical_spectrum(sizes, 2.0);
    CHECK(r.eigenvalues == Vector{6, 4, 2, 0, 0, 0});
    const auto oracle_e = jacobi_desc(categorical_kernel_matrix(CategoricalKernel::from_sizes(sizes, 2.0)));
    CHECK(oracle::max_abs_diff(r.eigenvalues, oracle_e) <= 1e-8);
    REQUIRE(r.max_deviation.has_value());
    CHECK(*r.max_deviation <= 1e-8);
}

TEST_CASE("one level is rank one") {
    const std::vector<std::size_t> sizes{7};
    const auto r = categorical_spectrum(sizes, 1.5);
    CHECK(r.eigenvalues[0] == 10.5);
    for (std::size_t i = 1; i < 7; ++i) CHECK(r.eigenvalues[i] == 0.0);
    CHECK_THROWS(categorical_spectrum(std::vector<std::size_t>{2, 0}, 1.0));
}

TEST_CASE("permuted rows keep the spectrum; trace identity") {
    Rng rng(3);
    for (int rep = 0; rep < 10; ++rep) {
        std::uniform_int_distribution<std::size_t> sz(1, 12);
        std::vector<std::size_t> sizes(std::uniform_int_distribution<std::size_t>(2, 10)(rng));
        for (auto& s : sizes) s = sz(rng);
        auto k = CategoricalKernel::from_sizes(sizes, 0.7);
        const auto r = categorical_spectrum(sizes, 0.7);
        std::shuffle(k.ids.begin(), k.ids.end(), rng);
        const auto dense = jacobi_desc(categorical_kernel_matrix(k));
        CHECK(oracle::max_abs_diff(r.eigenvalues, dense) <= 1e-8);
        double tr = 0.0;
        for (double v : r.eigenvalues) tr += v;
        CHECK(std::abs(tr - 0.7 * static_cast<double>(k.ids.size())) <= 1e-8);
        for (double v : dense) CHECK(v >= -1e-8);
    }
}

TEST_CASE("fit_decay on exact power laws") {
    Vector a(50), b(50);
    for (std::size_t i = 1; i <= 50; ++i) {
        a[i - 1] = 100.0 / static_cast<double>(i);
        b[i - 1] = 50.0 / static_cast<double>(i * i);
    }
    const auto fa = fit_decay(a);
    CHECK(std::abs(fa.c - 100.0) <= 1e-8);
    CHECK(std::abs(fa.p - 1.0) <= 1e-8);
    const auto fb = fit_decay(b);
    CHECK(std::abs(fb.p - 2.0) <= 1e-8);
    CHECK(std::abs(fb.c - 50.0) <= 1e-8);
    CHECK_THROWS(fit_decay(Vector{3, 2, 0, 0}));
    CHECK_THROWS(fit_decay(a, 0, 3));
}

TEST_CASE("Poisson(30) sizes at q = 338") {
    // n = 1000, about 3 rows per level; at n = 10000 the sizes are nearly flat and p drops.
    // Single draws land on both sides of 0.5, so average 20 seeds.
    double mean = 0.0, lo = 1e300, hi = -1e300;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto r = categorical_spectrum(poisson_sizes(1000, 338, seed), 1.0, 0);
        mean += r.fit.p / 20;
        lo = std::min(lo, r.fit.p);
        hi = std::max(hi, r.fit.p);
    }
    MESSAGE("q=338 fitted p: mean " << mean << " range [" << lo << ", " << hi << "]");
    CHECK(mean >= 0.5);
}

TEST_CASE("summed spectrum") {
    SUBCASE("one kernel plus noise shifts by sig2e") {
        const std::vector<std::size_t> sizes{4, 3, 1};
        const auto base = categorical_spectrum(sizes, 1.2);
        const CategoricalKernel k = CategoricalKernel::from_sizes(sizes, 1.2);
        const auto s = summed_spectrum(std::span(&k, 1), 0.3);
        for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(s.eigenvalues[i] - base.eigenvalues[i] - 0.3) <= 1e-10);
    }
    SUBCASE("hand case: two kernels on four rows") {
        // blocks {0,1} and {2,3}: [[3,1],[1,3]] and [[3,3],[3,3]] plus 0.5 I
        const std::vector<CategoricalKernel> ks{{{0, 0, 1, 1}, 1.0}, {{0, 1, 2, 2}, 2.0}};
        const auto s = summed_spectrum(ks, 0.5);
        CHECK(oracle::max_abs_diff(s.eigenvalues, Vector{6.5, 4.5, 2.5, 0.5}) <= 1e-10);
        DenseMatrix v(4, 4);
        for (const auto& k : ks) {
            const auto m = categorical_kernel_matrix(k);
            for (std::size_t i = 0; i < 16; ++i) v.data()[i] += m.data()[i];
        }
        for (std::size_t i = 0; i < 4; ++i) v(i, i) += 0.5;
        CHECK(oracle::max_abs_diff(s.eigenvalues, jacobi_desc(v)) <= 1e-10);
    }
    SUBCASE("all variances zero") {
        const std::vector<CategoricalKernel> ks{{{0, 1, 1, 2, 0}, 0.0}, {{0, 0, 0, 1, 1}, 0.0}};
        for (double v : summed_spectrum(ks, 0.8).eigenvalues) CHECK(std::abs(v - 0.8) <= 1e-12);
    }
    SUBCASE("errors") {
        const std::vector<CategoricalKernel> mism{{{0, 1}, 1.0}, {{0, 1, 2}, 1.0}};
        CHECK_THROWS(summed_spectrum(mism, 1.0));
        CategoricalKernel big;
        big.ids.assign(kDenseEigenCap + 1, 0);
        CHECK_THROWS(summed_spectrum(std::span(&big, 1), 1.0));
    }
}

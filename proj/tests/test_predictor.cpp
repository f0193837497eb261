#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

#include "lmmnn/predictor.hpp"

using namespace lmmnn;
using fixture::iota;

namespace {

FeedForwardNet zero_net(std::size_t p) {
    FeedForwardNet f(p, {LayerSpec::dense(1, Activation::Linear)}, 1);
    for (auto& t : f.params()) t.value.fill(0.0);
    return f;
}

FittedModel fitted_from(const fixture::Instance& in, const Vector& residuals) {
    FittedModel fm;
    fm.spec = in.spec;
    fm.theta = in.theta;
    fm.f = zero_net(1);
    fm.train_design = in.data.subset(in.rows);
    fm.residuals = residuals;
    return fm;
}

// D Z' V^-1 e with the explicit inverse.
Vector oracle_blup(const fixture::Instance& in, const Vector& e) {
    const auto v = fixture::hand_V(in);
    const auto a = oracle::mulv(oracle::gj_inverse(v), e);
    const auto z = build_Z(in.spec, in.data, in.rows).z.to_dense();
    const auto d = build_D(in.spec, in.theta, in.data);
    return oracle::mulv(d, oracle::mulv(z.transpose(), a));
}

Vector random_vec(std::size_t n, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Vector v(n);
    for (double& x : v) x = nd(rng);
    return v;
}

}  // namespace

TEST_CASE("blup with zero random-effect variance is exactly zero") {
    Rng rng(1);
    for (int kind : {0, 3}) {
        auto in = fixture::random_instance(kind, 20, rng);
        in.theta.psi[0] = 0.0;
        const auto b = blup(fitted_from(in, random_vec(20, rng)));
        for (double x : b) CHECK(x == 0.0);
    }
}

TEST_CASE("blup equals the closed-form intercepts estimator on every route") {
    Rng rng(2);
    for (int rep = 0; rep < 5; ++rep) {
        auto in = fixture::random_instance(0, 60, rng);
        const auto fm = fitted_from(in, random_vec(60, rng));
        const auto fast = blup_intercepts_fast(fm);
        for (auto route : {BlupRoute::Auto, BlupRoute::BlockDiagonal, BlupRoute::PushThrough, BlupRoute::DenseCholesky}) {
            BlupOptions opt;
            opt.force = route;
            CHECK(oracle::max_abs_diff(blup(fm, opt), fast) <= 1e-8);
        }
    }
}

TEST_CASE("blup matches the explicit-inverse oracle for every kind") {
    Rng rng(3);
    for (int kind = 0; kind < 5; ++kind) {
        CAPTURE(fixture::kind_name(kind));
        const auto in = fixture::random_instance(kind, 30, rng);
        const auto e = random_vec(30, rng);
        const auto fm = fitted_from(in, e);
        const auto ref = oracle_blup(in, e);
        CHECK(oracle::max_abs_diff(blup(fm), ref) <= 1e-8);
        BlupOptions dense;
        dense.force = BlupRoute::DenseCholesky;
        CHECK(oracle::max_abs_diff(blup(fm, dense), ref) <= 1e-8);
    }
}

TEST_CASE("closed-form intercepts: unseen level, large variance limit, hand value") {
    const std::vector<std::size_t> ids{0, 0, 0, 0, 2};
    const Vector res{1, 3, 2, 2, 5};
    const auto b = blup_intercepts_fast(ids, res, 3, 1.0, 1.0);
    CHECK(b[0] == doctest::Approx(1.6).epsilon(1e-15));
    CHECK(b[1] == 0.0);
    const auto big = blup_intercepts_fast(ids, res, 3, 1.0, 1e12);
    CHECK(std::abs(big[0] - 2.0) <= 1e-6);
    CHECK(std::abs(big[2] - 5.0) <= 1e-6);
}

TEST_CASE("shrinkage never exceeds the cluster mean residual") {
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        const auto ids = fixture::random_ids(40, 8, rng);
        const auto res = random_vec(40, rng);
        std::uniform_real_distribution<double> u(0.01, 5);
        const auto b = blup_intercepts_fast(ids, res, 8, u(rng), u(rng));
        for (std::size_t j = 0; j < 8; ++j) {
            double s = 0, c = 0;
            for (std::size_t i = 0; i < 40; ++i)
                if (ids[i] == j) s += res[i], c += 1;
            if (c > 0) CHECK(std::abs(b[j]) <= std::abs(s / c));
        }
    }
}

TEST_CASE("predict: unseen levels, one-cluster limit, longitudinal polynomial") {
    Rng rng(5);
    FittedModel fm;
    fm.spec = CovarianceSpec::random_intercepts(2);
    fm.theta = VarianceComponents::initial(fm.spec);
    fm.theta.psi = {1e10};
    fm.f = FeedForwardNet(2, {LayerSpec::dense(1, Activation::Linear)}, 3);
    fm.train_design.ids = {{0, 0, 0}};
    fm.residuals = {0.7, 0.7, 0.7};
    const auto b = blup(fm);
    const auto x = oracle::random_matrix(3, 2, rng);
    const auto fx = fm.f.predict(x);

    REDesignData unseen;
    unseen.ids = {{5, 9, 2}};
    CHECK(predict(fm, b, x, unseen) == fx);

    REDesignData same;
    same.ids = {{0, 0, 0}};
    const auto y = predict(fm, b, x, same);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(y[i] - (fx[i] + 0.7)) <= 1e-8);

    FittedModel lg;
    lg.spec = CovarianceSpec::longitudinal(2, 3);
    lg.theta = VarianceComponents::initial(lg.spec);
    lg.f = zero_net(1);
    const Vector bl{0.1, 0.2, -1.0, 0.5, 2.0, 3.0};  // [b0 | b1 | b2] blocks of q=2
    REDesignData t;
    t.ids = {{1}};
    t.times = {0.4};
    const auto rp = random_part(lg, bl, t);
    CHECK(rp[0] == doctest::Approx(0.2 + 0.5 * 0.4 + 3.0 * 0.16).epsilon(1e-14));
    CHECK_THROWS_AS(predict(fm, b, DenseMatrix(3, 5), same), DimensionMismatch);
}

TEST_CASE("spatial prediction interpolates training residuals when noise is tiny") {
    Rng rng(6);
    const std::size_t q = 30;
    FittedModel fm;
    fm.spec = CovarianceSpec::spatial_rbf(q);
    fm.theta = VarianceComponents::initial(fm.spec);
    fm.theta.sig2e = 1e-6;
    fm.theta.psi = {100.0, 1.0};
    fm.f = zero_net(1);
    fm.train_design.ids = {iota(q)};
    fm.train_design.locations = fixture::random_locations(q, rng, 10.0);
    fm.residuals = random_vec(q, rng);
    const auto b = blup(fm);
    const auto fit = predict(fm, b, DenseMatrix(q, 1), fm.train_design);
    CHECK(mse(fm.residuals, fit) <= 10 * fm.theta.sig2e);
}

TEST_CASE("subsampled blup") {
    Rng rng(7);
    auto in = fixture::random_instance(0, 50, rng);
    const auto fm = fitted_from(in, random_vec(50, rng));
    CHECK(oracle::max_abs_diff(subsample_blup(fm, 50, 3), blup(fm)) <= 1e-12);
    const auto tiny = subsample_blup(fm, 2, 3);
    for (double x : tiny) CHECK(std::isfinite(x));
    CHECK_THROWS(subsample_blup(fm, 1, 3));
    CHECK_THROWS(subsample_blup(fm, 51, 3));
    CHECK(subsample_blup(fm, 20, 9) == subsample_blup(fm, 20, 9));

    // dense cap triggers the subsample path
    BlupOptions opt;
    opt.dense_cap = 40;
    opt.subsample = 30;
    opt.seed = 4;
    CHECK(blup(fm, opt) == subsample_blup(fm, 30, 4));
}

namespace {

struct InterceptsData {
    FittedModel fm;
    std::vector<std::size_t> test_ids;
    Vector test_y;  // y - f on test rows
};

InterceptsData intercepts_data(std::size_t n, std::size_t q, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> nd(0, 1);
    Vector b(q);
    for (double& x : b) x = nd(rng);
    InterceptsData d;
    d.fm.spec = CovarianceSpec::random_intercepts(q);
    d.fm.theta = VarianceComponents::initial(d.fm.spec);
    d.fm.f = zero_net(1);
    d.fm.train_design.ids.resize(1);
    for (std::size_t i = 0; i < n; ++i) {
        const auto id = fixture::random_ids(1, q, rng)[0];
        const double y = b[id] + nd(rng);
        if (i % 5 == 0) {
            d.test_ids.push_back(id);
            d.test_y.push_back(y);
        } else {
            d.fm.train_design.ids[0].push_back(id);
            d.fm.residuals.push_back(y);
        }
    }
    return d;
}

double test_mse(const InterceptsData& d, const Vector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.test_y.size(); ++i) s += std::pow(d.test_y[i] - b[d.test_ids[i]], 2);
    return s / static_cast<double>(d.test_y.size());
}

}  // namespace

TEST_CASE("subsample seeds give test MSEs within 5 percent") {
    const auto d = intercepts_data(5000, 100, 11);
    const double m1 = test_mse(d, subsample_blup(d.fm, 1000, 1));
    const double m2 = test_mse(d, subsample_blup(d.fm, 1000, 2));
    MESSAGE("mse " << m1 << " vs " << m2 << ", full " << test_mse(d, blup(d.fm)));
    CHECK(std::abs(m1 - m2) / std::min(m1, m2) <= 0.05);
}

TEST_CASE("subsample error shrinks as S grows") {
    int monotone = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto d = intercepts_data(800, 40, 20 + seed);
        const auto full = blup(d.fm);
        const std::size_t n = d.fm.residuals.size();
        double prev = 1e300;
        bool ok = true;
        for (std::size_t s : {n / 8, n / 4, n / 2, n}) {
            const auto b = subsample_blup(d.fm, s, seed);
            double err = 0.0;
            for (std::size_t j = 0; j < b.size(); ++j) err += std::pow(b[j] - full[j], 2);
            if (err > prev) ok = false;
            prev = err;
        }
        monotone += ok;
    }
    CHECK(monotone >= 4);
}

TEST_CASE("mse and aggregation") {
    CHECK(mse(Vector{1, 2, 3}, Vector{1, 2, 3}) == 0.0);
    CHECK(mse(Vector{0, 2}, Vector{1, 1}) == 1.0);
    CHECK_THROWS(mse(Vector{}, Vector{}));
    const auto a = aggregate(Vector{1, 1, 1, 1, 1});
    CHECK(a.mean == 1.0);
    CHECK(a.se == 0.0);
    CHECK(a.count == 5);
    const auto b = aggregate(Vector{1, 2, 3});
    CHECK(b.se == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-15));
}

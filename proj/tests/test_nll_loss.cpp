#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

#include "lmmnn/nll_loss.hpp"

using namespace lmmnn;
using fixture::iota;

namespace {

Vector random_vec(std::size_t n, Rng& rng, double sd = 1.0) {
    std::normal_distribution<double> nd(0.0, sd);
    Vector v(n);
    for (double& x : v) x = nd(rng);
    return v;
}

// -0.5 a' dV a + 0.5 tr(V^-1 dV) with the explicit inverse.
Vector oracle_grad(const Vector& e, const DenseMatrix& v, const std::vector<DenseMatrix>& dv) {
    const auto inv = oracle::gj_inverse(v);
    const auto a = oracle::mulv(inv, e);
    Vector g;
    for (const auto& d : dv) {
        const auto da = oracle::mulv(d, a);
        double quad = 0.0, tr = 0.0;
        for (std::size_t i = 0; i < e.size(); ++i) quad += a[i] * da[i];
        const auto id = oracle::mul(inv, d);
        for (std::size_t i = 0; i < e.size(); ++i) tr += id(i, i);
        g.push_back(-0.5 * quad + 0.5 * tr);
    }
    return g;
}

// Sorted-by-subject longitudinal data, K terms.
REDesignData sorted_longitudinal(std::size_t q, std::size_t per, Rng& rng) {
    REDesignData d;
    d.ids.resize(1);
    std::uniform_real_distribution<double> u(0, 1);
    for (std::size_t j = 0; j < q; ++j)
        for (std::size_t k = 0; k < per; ++k) {
            d.ids[0].push_back(j);
            d.times.push_back(u(rng));
        }
    return d;
}

}  // namespace

TEST_CASE("nll_full: scalar cases and explicit-inverse oracle") {
    const double half_log_2pi = 0.5 * std::log(2 * M_PI);
    CHECK(nll_full(Vector{0.0}, DenseMatrix{{1.0}}) == doctest::Approx(half_log_2pi).epsilon(1e-15));
    CHECK(nll_full(Vector{1.0}, DenseMatrix{{1.0}}) == doctest::Approx(0.5 + half_log_2pi).epsilon(1e-15));
    CHECK(half_log_2pi == doctest::Approx(0.918939).epsilon(1e-6));
    Rng rng(1);
    for (int rep = 0; rep < 5; ++rep) {
        const auto v = oracle::random_spd(3, rng);
        const auto e = random_vec(3, rng);
        CHECK(std::abs(nll_full(e, v) - oracle::gaussian_nll(e, v)) <= 1e-10);
    }
    CHECK_THROWS(nll_full(Vector{1.0, 2.0}, DenseMatrix{{1, 2}, {2, 1}}));
}

TEST_CASE("nll_batch over the whole data equals nll_full and the explicit gradient") {
    Rng rng(2);
    for (int kind = 0; kind < 5; ++kind) {
        CAPTURE(fixture::kind_name(kind));
        const auto in = fixture::random_instance(kind, 30, rng);
        const auto e = random_vec(30, rng);
        const BatchDesign b{in.data, in.rows};
        const auto r = nll_batch(e, in.spec, in.theta, b);
        const auto v = fixture::hand_V(in);
        CHECK(std::abs(r.nll - oracle::gaussian_nll(e, v)) <= 1e-10);
        CHECK(std::abs(r.nll - nll_full(e, v)) <= 1e-10);
        const auto g = oracle_grad(e, v, dV_all(in.spec, in.theta, b));
        CHECK(oracle::max_abs_diff(r.grad_theta, g) <= 1e-10);
        const auto alpha = oracle::mulv(oracle::gj_inverse(v), e);
        CHECK(oracle::max_abs_diff(r.alpha, alpha) <= 1e-10);
        for (std::size_t i = 0; i < 30; ++i) CHECK(r.grad_f[i] == -r.alpha[i]);
    }
}

TEST_CASE("nll_batch gradients vs finite differences for every kind") {
    Rng rng(3);
    for (int kind = 0; kind < 5; ++kind)
        for (int rep = 0; rep < 4; ++rep) {
            CAPTURE(fixture::kind_name(kind));
            const auto in = fixture::random_instance(kind, 20, rng);
            const auto e = random_vec(20, rng, 1.5);
            const BatchDesign b{in.data, in.rows};
            const auto r = nll_batch(e, in.spec, in.theta, b);
            const auto u = in.theta.unconstrained();
            for (std::size_t p = 0; p < u.size(); ++p) {
                auto f = [&](double x) {
                    auto uu = u;
                    uu[p] = x;
                    return nll_batch(e, in.spec, VarianceComponents::from_unconstrained(in.spec, uu), b).nll;
                };
                CHECK(oracle::rel_err(r.grad_theta[p], oracle::central_diff(f, u[p]), 1e-4) <= 1e-5);
            }
            // f enters through e = y - f, so d/df = -d/de
            for (std::size_t i = 0; i < e.size(); i += 3) {
                auto f = [&](double x) {
                    auto ee = e;
                    ee[i] = x;
                    return nll_batch(ee, in.spec, in.theta, b).nll;
                };
                CHECK(oracle::rel_err(r.grad_f[i], -oracle::central_diff(f, e[i]), 1e-4) <= 1e-5);
            }
        }
}

TEST_CASE("nll_batch with learned g: gradient wrt g outputs") {
    Rng rng(4);
    auto spec = CovarianceSpec::random_intercepts(5).with_learned_embedding(3);
    auto theta = VarianceComponents::initial(spec);
    theta.sig2e = 0.8;
    theta.psi = {1.3};
    REDesignData d;
    d.ids = {fixture::random_ids(12, 5, rng)};
    const auto rows = iota(12);
    const auto g = oracle::random_matrix(12, 3, rng);
    const auto e = random_vec(12, rng);
    const auto r = nll_batch(e, spec, theta, BatchDesign{d, rows, &g});
    REQUIRE(r.grad_g.rows() == 12);
    REQUIRE(r.grad_g.cols() == 3);
    for (std::size_t k = 0; k < g.data().size(); k += 2) {
        auto f = [&](double x) {
            auto gg = g;
            gg.data()[k] = x;
            return nll_batch(e, spec, theta, BatchDesign{d, rows, &gg}).nll;
        };
        CHECK(oracle::rel_err(r.grad_g.data()[k], oracle::central_diff(f, g.data()[k]), 1e-4) <= 1e-5);
    }
}

TEST_CASE("zero random-effect variance reduces to the iid Gaussian NLL") {
    Rng rng(5);
    auto in = fixture::random_instance(0, 15, rng);
    in.theta.psi = {1e-14};
    const auto e = random_vec(15, rng);
    const auto r = nll_batch(e, in.spec, in.theta, BatchDesign{in.data, in.rows});
    double iid = 0.0;
    for (double x : e) iid += 0.5 * x * x / in.theta.sig2e + 0.5 * std::log(2 * M_PI * in.theta.sig2e);
    CHECK(std::abs(r.nll - iid) <= 1e-10);
}

TEST_CASE("grad_theta: vanishing quadratic term and the V = I balance") {
    Rng rng(6);
    const auto v = oracle::random_spd(4, rng);
    const std::vector<DenseMatrix> eye{DenseMatrix::identity(4)};
    const auto g0 = grad_theta(Vector(4, 0.0), cholesky(v), eye);
    const auto inv = oracle::gj_inverse(v);
    double tr = 0.0;
    for (std::size_t i = 0; i < 4; ++i) tr += inv(i, i);
    CHECK(g0[0] == doctest::Approx(0.5 * tr).epsilon(1e-12));

    const Vector e{1, -1, 1, -1};  // |e|^2 = m
    const auto g1 = grad_theta(e, cholesky(DenseMatrix::identity(4)), eye);
    CHECK(std::abs(g1[0]) <= 1e-15);
}

TEST_CASE("gradient decomposition over clusters") {
    Rng rng(7);
    {
        REDesignData d;
        d.ids.resize(1);
        for (std::size_t j = 0; j < 5; ++j)
            for (int k = 0; k < 10; ++k) d.ids[0].push_back(j);
        auto spec = CovarianceSpec::random_intercepts(5);
        auto th = VarianceComponents::initial(spec);
        th.sig2e = 0.6;
        th.psi = {1.7};
        CHECK(gradient_decomposition_check(random_vec(50, rng), spec, th, d) <= 1e-8);
    }
    {
        const auto d = sorted_longitudinal(6, 5, rng);
        auto spec = CovarianceSpec::longitudinal(6, 2, {{0, 1}});
        auto th = VarianceComponents::initial(spec);
        th.psi = {1.2, 0.7};
        th.rhos = {0.3};
        CHECK(gradient_decomposition_check(random_vec(30, rng), spec, th, d) <= 1e-8);
    }
    {
        REDesignData d;
        d.ids = {std::vector<std::size_t>(8, 0)};
        auto spec = CovarianceSpec::random_intercepts(1);
        CHECK(gradient_decomposition_check(random_vec(8, rng), spec, VarianceComponents::initial(spec), d) == 0.0);
    }
    {
        REDesignData d;
        d.ids = {{0, 0, 1, 1}, {0, 1, 0, 1}};
        auto spec = CovarianceSpec::multiple_categorical({2, 2});
        CHECK_THROWS_AS(gradient_decomposition_check(random_vec(4, rng), spec, VarianceComponents::initial(spec), d),
                        std::invalid_argument);
    }
}

TEST_CASE("non-finite residual is rejected") {
    Rng rng(8);
    const auto in = fixture::random_instance(0, 3, rng);
    CHECK_THROWS_AS(nll_batch(Vector{0.0, NAN, 1.0}, in.spec, in.theta, BatchDesign{in.data, in.rows}),
                    std::domain_error);
}

namespace {

struct LinearData {
    DenseMatrix x;
    REDesignData design;
    Vector y;
};

LinearData linear_data(std::size_t n, std::size_t q, double sig2b, double sig2e, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    std::normal_distribution<double> nd(0, 1);
    LinearData d;
    d.x = DenseMatrix(n, 3);
    for (double& v : d.x.data()) v = u(rng);
    d.design.ids = {fixture::random_ids(n, q, rng)};
    Vector b(q);
    for (double& v : b) v = std::sqrt(sig2b) * nd(rng);
    for (std::size_t i = 0; i < n; ++i)
        d.y.push_back(d.x(i, 0) - 2 * d.x(i, 1) + 0.5 * d.x(i, 2) + b[d.design.ids[0][i]] + std::sqrt(sig2e) * nd(rng));
    return d;
}

}  // namespace

TEST_CASE("train: zero epochs returns the initial state") {
    const auto d = linear_data(200, 5, 1.0, 1.0, 1);
    const auto rows = iota(200);
    TrainConfig cfg;
    cfg.max_epochs = 0;
    const NetConfig net{{8}, 0.0};
    const auto fit = train(LmmnnData{d.x, d.design, d.y, rows}, CovarianceSpec::random_intercepts(5), net, cfg);
    CHECK(fit.history.rows.empty());
    CHECK(fit.theta.sig2e == 1.0);
    CHECK(fit.theta.psi == Vector{1.0});
    const FeedForwardNet fresh(3, mlp_layers(net, 1), derive_seed(cfg.seed, "f"));
    for (std::size_t p = 0; p < fresh.params().size(); ++p) CHECK(fit.f.params()[p].value == fresh.params()[p].value);
}

TEST_CASE("train: pure noise recovers the sample variance") {
    const auto d = linear_data(1500, 10, 0.0, 2.0, 2);
    LinearData noise = d;
    Rng rng(3);
    std::normal_distribution<double> nd(0, std::sqrt(2.0));
    for (double& v : noise.y) v = nd(rng);
    double mean = 0.0, var = 0.0;
    for (double v : noise.y) mean += v / 1500.0;
    for (double v : noise.y) var += (v - mean) * (v - mean) / 1499.0;
    const auto rows = iota(1500);
    TrainConfig cfg;
    cfg.max_epochs = 60;
    cfg.optimizer.learning_rate = 0.01;
    const auto fit =
        train(LmmnnData{noise.x, noise.design, noise.y, rows}, CovarianceSpec::random_intercepts(10), NetConfig{{8}, 0.0}, cfg);
    CHECK(std::abs(fit.theta.sig2e - var) <= 0.2 * var);
}

TEST_CASE("train: linear f, q=20, theta within 0.35 of the truth in at least 4 of 5 seeds") {
    int good = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto d = linear_data(2000, 20, 1.0, 1.0, 100 + seed);
        const auto rows = iota(2000);
        TrainConfig cfg;
        cfg.seed = seed;
        cfg.max_epochs = 80;
        cfg.optimizer.learning_rate = 0.01;
        const auto fit = train(LmmnnData{d.x, d.design, d.y, rows}, CovarianceSpec::random_intercepts(20),
                               NetConfig{{16, 8}, 0.0}, cfg);
        MESSAGE("seed " << seed << " sig2e " << fit.theta.sig2e << " sig2b " << fit.theta.psi[0]);
        if (std::abs(fit.theta.sig2e - 1.0) <= 0.35 && std::abs(fit.theta.psi[0] - 1.0) <= 0.35) ++good;
        // history sanity
        REQUIRE(!fit.history.rows.empty());
        const auto& best = fit.history.rows[fit.history.best_epoch - 1];
        CHECK(best.train_nll <= fit.history.rows.front().train_nll);
        for (const auto& row : fit.history.rows)
            for (double t : row.theta) CHECK(std::isfinite(t));
    }
    CHECK(good >= 4);
}

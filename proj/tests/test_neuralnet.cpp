#include "doctest.h"
#include "oracles.hpp"

#include "lmmnn/neuralnet.hpp"

using namespace lmmnn;

namespace {

// loss = sum(out .* w) so grad_out = w
double weighted_sum(const DenseMatrix& out, const DenseMatrix& w) {
    double s = 0.0;
    for (std::size_t k = 0; k < out.data().size(); ++k) s += out.data()[k] * w.data()[k];
    return s;
}

// Max relative error of every parameter and input gradient vs central differences.
double fd_check(FeedForwardNet& net, const DenseMatrix& x, Rng& rng, bool check_input = true) {
    ForwardCache cache;
    const auto out = net.forward(x, false, nullptr, &cache);
    const auto w = oracle::random_matrix(out.rows(), out.cols(), rng);
    const auto back = net.backward(cache, w);
    const double h = 1e-6;
    double worst = 0.0;
    auto compare = [&](double analytic, double& slot) {
        const double keep = slot;
        slot = keep + h;
        const double up = weighted_sum(net.forward(x, false), w);
        slot = keep - h;
        const double dn = weighted_sum(net.forward(x, false), w);
        slot = keep;
        worst = std::max(worst, oracle::rel_err(analytic, (up - dn) / (2 * h), 1e-4));
    };
    for (std::size_t p = 0; p < net.params().size(); ++p)
        for (std::size_t k = 0; k < net.params()[p].value.data().size(); ++k)
            compare(back.grads[p].data()[k], net.params()[p].value.data()[k]);
    if (check_input) {
        auto xx = x;
        for (std::size_t k = 0; k < xx.data().size(); ++k) {
            const double keep = xx.data()[k];
            xx.data()[k] = keep + h;
            const double up = weighted_sum(net.forward(xx, false), w);
            xx.data()[k] = keep - h;
            const double dn = weighted_sum(net.forward(xx, false), w);
            xx.data()[k] = keep;
            worst = std::max(worst, oracle::rel_err(back.grad_input.data()[k], (up - dn) / (2 * h), 1e-4));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("identity linear layer and relu") {
    FeedForwardNet net(3, {LayerSpec::dense(3, Activation::Linear)}, 1);
    net.params()[0].value = DenseMatrix::identity(3);
    net.params()[1].value.fill(0.0);
    const DenseMatrix x{{1, -2, 3}, {0.5, 0, -1}};
    CHECK(net.forward(x, false) == x);

    FeedForwardNet r(2, {LayerSpec::dense(2, Activation::Relu)}, 1);
    r.params()[0].value = DenseMatrix::identity(2);
    r.params()[1].value.fill(0.0);
    CHECK(r.forward(DenseMatrix{{-1, 2}}, false) == DenseMatrix{{0, 2}});
}

TEST_CASE("dropout: rate 0 is the identity, evaluation mode is the identity") {
    const DenseMatrix x{{1, 2, 3, 4}};
    FeedForwardNet d0(4, {LayerSpec::dropout(0.0)}, 1);
    Rng rng(1);
    CHECK(d0.forward(x, true, &rng) == x);
    CHECK(d0.forward(x, false) == x);
    FeedForwardNet d5(4, {LayerSpec::dropout(0.5)}, 1);
    CHECK(d5.forward(x, false) == x);
    // inverted scaling: kept entries doubled
    const auto y = d5.forward(x, true, &rng);
    for (std::size_t j = 0; j < 4; ++j) CHECK((y(0, j) == 0.0 || y(0, j) == 2.0 * x(0, j)));
    CHECK_THROWS(FeedForwardNet(4, {LayerSpec::dropout(1.0)}, 1));
}

TEST_CASE("linear layer with sum loss: weight grad is the column sums of the inputs") {
    FeedForwardNet net(3, {LayerSpec::dense(2, Activation::Linear)}, 4);
    const DenseMatrix x{{1, 2, 3}, {-1, 0.5, 2}};
    ForwardCache cache;
    const auto out = net.forward(x, false, nullptr, &cache);
    const auto back = net.backward(cache, DenseMatrix(out.rows(), out.cols(), 1.0));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) CHECK(back.grads[0](i, j) == doctest::Approx(x(0, i) + x(1, i)));
    CHECK(back.grads[1] == DenseMatrix{{2, 2}});
    Rng rng(2);
    CHECK(fd_check(net, x, rng) <= 1e-5);
}

TEST_CASE("zero incoming gradient gives zero parameter gradients") {
    FeedForwardNet net(3, {LayerSpec::dense(4, Activation::Relu), LayerSpec::dense(1, Activation::Linear)}, 4);
    ForwardCache cache;
    const auto out = net.forward(DenseMatrix{{1, 2, 3}}, false, nullptr, &cache);
    const auto back = net.backward(cache, DenseMatrix(1, 1));
    for (const auto& g : back.grads)
        for (double v : g.data()) CHECK(v == 0.0);
}

TEST_CASE("two-layer relu net vs finite differences on 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        FeedForwardNet net(4,
                           {LayerSpec::dense(6, Activation::Relu), LayerSpec::dropout(0.3),
                            LayerSpec::dense(3, Activation::Relu), LayerSpec::dense(2, Activation::Linear)},
                           seed);
        // nonzero biases keep pre-activations off the relu kink at exactly 0
        for (auto& t : net.params())
            if (t.name.ends_with(".b")) t.value = oracle::random_matrix(1, t.value.cols(), rng);
        const auto x = oracle::random_matrix(5, 4, rng);
        CHECK(fd_check(net, x, rng) <= 1e-5);
    }
}

TEST_CASE("embedding layer vs finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 100);
        FeedForwardNet net(3,
                           {LayerSpec::embedding(3, 2, 1), LayerSpec::dense(4, Activation::Relu),
                            LayerSpec::dense(1, Activation::Linear)},
                           seed);
        auto x = oracle::random_matrix(6, 3, rng);
        for (std::size_t i = 0; i < 6; ++i) x(i, 1) = static_cast<double>(i % 3);
        CHECK(fd_check(net, x, rng, false) <= 1e-5);
    }
}

TEST_CASE("embedding lookup and backward") {
    const DenseMatrix table{{1, 2}, {3, 4}, {5, 6}};
    const std::vector<std::size_t> ids{2};
    CHECK(embedding_lookup(table, ids) == DenseMatrix{{5, 6}});
    const std::vector<std::size_t> twice{1, 1};
    const DenseMatrix g{{0.5, -1}, {0.5, -1}};
    CHECK(embedding_backward(3, twice, g) == DenseMatrix{{0, 0}, {1, -2}, {0, 0}});
    const std::vector<std::size_t> bad{3};
    CHECK_THROWS_AS(embedding_lookup(table, bad), std::out_of_range);

    // finite differences on the 3x2 table through a sum loss
    FeedForwardNet net(1, {LayerSpec::embedding(3, 2)}, 5);
    const DenseMatrix x{{0}, {2}, {2}};
    Rng rng(6);
    CHECK(fd_check(net, x, rng, false) <= 1e-5);

    FeedForwardNet net2(2, {LayerSpec::embedding(3, 2)}, 5);
    CHECK(net2.forward(DenseMatrix{{1, 7.5}}, false)(0, 2) == 7.5);  // passthrough column
    CHECK_THROWS_AS(net2.forward(DenseMatrix{{3, 0}}, false), std::out_of_range);
}

TEST_CASE("optimizer steps") {
    Tensor p{"w", DenseMatrix{{1.0}}};
    std::vector<Tensor*> ps{&p};
    OptimizerState sgd{{Algorithm::Sgd, 0.1}, {}, {}, 0};
    step(sgd, ps, std::vector<DenseMatrix>{DenseMatrix{{1.0}}});
    CHECK(p.value(0, 0) == doctest::Approx(0.9).epsilon(1e-15));

    Tensor q{"v", DenseMatrix{{1.0, -2.0}}};
    std::vector<Tensor*> qs{&q};
    OptimizerState adam{{Algorithm::Adam, 0.01}, {}, {}, 0};
    step(adam, qs, std::vector<DenseMatrix>{DenseMatrix{{1.0, 1.0}}});
    // m_hat = 1, v_hat = 1 -> move lr / (1 + eps)
    CHECK(q.value(0, 0) == doctest::Approx(1.0 - 0.01 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(q.value(0, 1) == doctest::Approx(-2.0 - 0.01 / (1.0 + 1e-8)).epsilon(1e-14));

    step(adam, qs, std::vector<DenseMatrix>{DenseMatrix{{0.0, 0.0}}});
    OptimizerState fresh{{Algorithm::Adam, 0.01}, {}, {}, 0};
    const auto b2 = q.value;
    step(fresh, qs, std::vector<DenseMatrix>{DenseMatrix{{0.0, 0.0}}});
    CHECK(q.value == b2);  // zero gradient, no history: unchanged

    try {
        step(fresh, qs, std::vector<DenseMatrix>{DenseMatrix{{NAN, 0.0}}});
        FAIL("expected domain_error");
    } catch (const std::domain_error& e) {
        CHECK(std::string(e.what()).find("v") != std::string::npos);
    }
}

TEST_CASE("same seed gives bitwise identical parameters after training steps") {
    auto train = [] {
        FeedForwardNet net(3, {LayerSpec::dense(5, Activation::Relu), LayerSpec::dropout(0.25),
                               LayerSpec::dense(1, Activation::Linear)},
                           42);
        OptimizerState st;
        Rng rng(9), drop(10);
        const auto x = oracle::random_matrix(8, 3, rng);
        for (int it = 0; it < 20; ++it) {
            ForwardCache c;
            const auto out = net.forward(x, true, &drop, &c);
            auto back = net.backward(c, out);
            std::vector<Tensor*> ps;
            for (auto& t : net.params()) ps.push_back(&t);
            step(st, ps, back.grads);
        }
        return net.params();
    };
    const auto a = train(), b = train();
    for (std::size_t p = 0; p < a.size(); ++p) CHECK(a[p].value == b[p].value);
}

TEST_CASE("shape errors") {
    FeedForwardNet net(3, {LayerSpec::dense(2, Activation::Linear)}, 1);
    CHECK_THROWS_AS(net.forward(DenseMatrix(1, 4), false), DimensionMismatch);
    ForwardCache c;
    net.forward(DenseMatrix(2, 3), false, nullptr, &c);
    CHECK_THROWS_AS(net.backward(c, DenseMatrix(3, 2)), DimensionMismatch);
    CHECK_THROWS(FeedForwardNet(3, {LayerSpec::dense(0, Activation::Linear)}, 1));
}

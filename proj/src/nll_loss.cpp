#include "lmmnn/nll_loss.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lmmnn {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Vector grad_from(std::span<const double> alpha, const DenseMatrix& vinv, std::span<const DenseMatrix> dv) {
    const std::size_t m = alpha.size();
    Vector g(dv.size(), 0.0);
    for (std::size_t p = 0; p < dv.size(); ++p) {
        const auto& d = dv[p];
        if (d.rows() != m || d.cols() != m) throw DimensionMismatch("grad_theta: dV has the wrong size");
        double quad = 0.0, trace = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            auto di = d.row(i);
            auto vi = vinv.row(i);
            double row_quad = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                row_quad += di[j] * alpha[j];
                trace += vi[j] * di[j];
            }
            quad += alpha[i] * row_quad;
        }
        g[p] = -0.5 * quad + 0.5 * trace;
    }
    return g;
}

}  // namespace

double nll_full(std::span<const double> e, const DenseMatrix& v) {
    if (v.rows() != e.size() || v.cols() != e.size()) throw DimensionMismatch("nll_full: V size != residual length");
    const auto f = cholesky(v);
    const auto a = solve(f, e);
    return 0.5 * dot(e, a) + 0.5 * logdet(f) + static_cast<double>(e.size()) * kHalfLog2Pi;
}

Vector grad_theta(std::span<const double> e, const CholeskyFactor& v, std::span<const DenseMatrix> dv) {
    if (e.size() != v.dim()) throw DimensionMismatch("grad_theta: residual length != V size");
    const auto alpha = solve(v, e);
    return grad_from(alpha, inverse(v), dv);
}

BatchLossResult nll_batch(std::span<const double> e, const CovarianceSpec& spec, const VarianceComponents& theta,
                          const BatchDesign& batch) {
    const std::size_t m = batch.rows.size();
    if (m == 0) throw std::invalid_argument("nll_batch: empty batch");
    if (e.size() != m) throw DimensionMismatch("nll_batch: residual length != batch size");
    for (double x : e)
        if (!std::isfinite(x)) throw std::domain_error("nll_batch: non-finite residual");

    const DenseMatrix v = marginal_V(spec, theta, batch);
    const auto factor = cholesky(v);
    BatchLossResult r;
    r.alpha = solve(factor, e);
    r.nll = 0.5 * dot(e, r.alpha) + 0.5 * logdet(factor) + static_cast<double>(m) * kHalfLog2Pi;
    r.grad_f.resize(m);
    for (std::size_t i = 0; i < m; ++i) r.grad_f[i] = -r.alpha[i];

    const DenseMatrix vinv = inverse(factor);
    const auto dv = dV_all(spec, theta, batch);
    r.grad_theta = grad_from(r.alpha, vinv, dv);

    if (spec.learned_g()) {
        // d nll / dG = sig2b (V^-1 - a a') G
        const auto& g = *batch.learned_g;
        DenseMatrix w = vinv;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) w(i, j) -= r.alpha[i] * r.alpha[j];
        r.grad_g = matmul(w, g);
        const double s = theta.psi[0];
        for (double& x : r.grad_g.data()) x *= s;
    }
    return r;
}

double gradient_decomposition_check(std::span<const double> e, const CovarianceSpec& spec,
                                    const VarianceComponents& theta, const REDesignData& data) {
    const std::size_t n = data.rows();
    if (e.size() != n) throw DimensionMismatch("gradient_decomposition_check: residual length != rows");
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    const auto blocks = is_block_diagonal(spec, data, all);
    if (!blocks) throw std::invalid_argument("gradient_decomposition_check: V is not block-diagonal for this spec");

    const auto full = nll_batch(e, spec, theta, BatchDesign{data, all});
    Vector sum(full.grad_theta.size(), 0.0);
    std::size_t start = 0;
    for (auto size : *blocks) {
        std::span<const std::size_t> rows(all.data() + start, size);
        const auto part = nll_batch(e.subspan(start, size), spec, theta, BatchDesign{data, rows});
        for (std::size_t p = 0; p < sum.size(); ++p) sum[p] += part.grad_theta[p];
        start += size;
    }
    double dev = 0.0;
    for (std::size_t p = 0; p < sum.size(); ++p) dev = std::max(dev, std::abs(sum[p] - full.grad_theta[p]));
    return dev;
}

DenseMatrix g_input(const CovarianceSpec& spec, const REDesignData& data) {
    if (!spec.learned_g()) throw std::invalid_argument("g_input: spec does not learn g");
    const std::size_t n = data.rows();
    if (spec.kind == CovKind::RandomIntercepts) {
        DenseMatrix x(n, 1);
        for (std::size_t i = 0; i < n; ++i) x(i, 0) = static_cast<double>(data.ids.at(0)[i]);
        return x;
    }
    DenseMatrix x(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& loc = data.locations.at(data.ids.at(0)[i]);
        x(i, 0) = loc.x;
        x(i, 1) = loc.y;
    }
    return x;
}

Objective gaussian_objective(const CovarianceSpec& spec, const REDesignData& design, std::span<const double> y) {
    return [&spec, &design, y](const BatchInput& b) {
        const std::size_t m = b.rows.size();
        Vector e(m);
        for (std::size_t i = 0; i < m; ++i) e[i] = y[b.rows[i]] - b.f_out(i, 0);
        const auto theta = VarianceComponents::from_unconstrained(spec, b.theta);
        const auto r = nll_batch(e, spec, theta, BatchDesign{design, b.rows, b.g_out});
        BatchEval ev;
        ev.loss = r.nll;
        if (b.want_grad) {
            ev.grad_f = DenseMatrix(m, 1, r.grad_f);
            ev.grad_theta = r.grad_theta;
            ev.grad_g = r.grad_g;
        }
        return ev;
    };
}

LmmnnFit train(const LmmnnData& data, const CovarianceSpec& spec, const NetConfig& net, const TrainConfig& config) {
    spec.validate();
    if (data.y.size() != data.x.rows() || data.design.rows() != data.x.rows())
        throw DimensionMismatch("train: X, design and y disagree on the number of rows");

    Trainable model;
    model.f = FeedForwardNet(data.x.cols(), mlp_layers(net, 1), derive_seed(config.seed, "f"));
    std::optional<DenseMatrix> gx;
    if (spec.learned_g()) {
        gx = g_input(spec, data.design);
        std::vector<LayerSpec> layers;
        if (spec.kind == CovKind::RandomIntercepts)
            layers.push_back(LayerSpec::embedding(spec.cardinalities[0], spec.g_dim));
        else
            layers = {LayerSpec::dense(16, Activation::Relu), LayerSpec::dense(spec.g_dim, Activation::Linear)};
        model.g = FeedForwardNet(gx->cols(), std::move(layers), derive_seed(config.seed, "g"));
    }
    model.theta = VarianceComponents::initial(spec).unconstrained();
    model.theta_names = theta_names(spec);
    model.constrained = [&spec](std::span<const double> u) {
        return VarianceComponents::from_unconstrained(spec, u).constrained();
    };

    const auto objective = gaussian_objective(spec, data.design, data.y);
    const std::size_t bs = config.batch_size;
    const Batcher batcher = [bs](std::span<const std::size_t> rows, Rng* rng) { return random_batches(rows, bs, rng); };
    auto hist = fit(model, FitInputs{data.x, gx ? &*gx : nullptr, data.rows}, objective, batcher, config);

    LmmnnFit out;
    out.f = std::move(model.f);
    out.g = std::move(model.g);
    out.theta = VarianceComponents::from_unconstrained(spec, model.theta);
    out.history = std::move(hist);
    return out;
}

}  // namespace lmmnn

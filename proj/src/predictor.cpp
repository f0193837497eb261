#include "lmmnn/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace lmmnn {

namespace {

std::vector<std::size_t> iota_rows(std::size_t n) {
    std::vector<std::size_t> r(n);
    std::iota(r.begin(), r.end(), 0);
    return r;
}

// b = D Z' alpha
Vector finish(const FittedModel& fm, std::span<const std::size_t> rows, std::span<const double> alpha) {
    const auto z = build_Z(fm.spec, fm.train_design, rows).z;
    return apply_D(fm.spec, fm.theta, fm.train_design, z.transpose_times(alpha));
}

Vector dense_route(const FittedModel& fm) {
    const auto rows = iota_rows(fm.residuals.size());
    const auto v = marginal_V(fm.spec, fm.theta, BatchDesign{fm.train_design, rows});
    const auto alpha = solve(cholesky(v), fm.residuals);
    return finish(fm, rows, alpha);
}

std::optional<Vector> block_route(const FittedModel& fm) {
    const std::size_t n = fm.residuals.size();
    auto order = iota_rows(n);
    const auto& primary = fm.train_design.ids.at(0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return primary[a] < primary[b]; });
    const auto sizes = is_block_diagonal(fm.spec, fm.train_design, order);
    if (!sizes) return std::nullopt;

    std::vector<DenseMatrix> blocks;
    blocks.reserve(sizes->size());
    Vector e(n);
    std::size_t start = 0;
    for (auto s : *sizes) {
        std::span<const std::size_t> rows(order.data() + start, s);
        blocks.push_back(marginal_V(fm.spec, fm.theta, BatchDesign{fm.train_design, rows}));
        start += s;
    }
    for (std::size_t i = 0; i < n; ++i) e[i] = fm.residuals[order[i]];
    const auto a_sorted = block_solve(blocks, e);
    Vector alpha(n);
    for (std::size_t i = 0; i < n; ++i) alpha[order[i]] = a_sorted[i];
    return finish(fm, iota_rows(n), alpha);
}

// D (Z'Z D + s2e I)^-1 Z'e, an r x r system instead of n x n.
Vector push_through(const FittedModel& fm) {
    const std::size_t n = fm.residuals.size();
    const auto rows = iota_rows(n);
    const auto z = build_Z(fm.spec, fm.train_design, rows).z;
    const std::size_t r = z.cols();
    DenseMatrix ztz(r, r);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = z.row(i);
        for (const auto& a : row)
            for (const auto& b : row) ztz(a.col, b.col) += a.value * b.value;
    }
    const auto d = build_D(fm.spec, fm.theta, fm.train_design);
    DenseMatrix m = matmul(ztz, d);
    for (std::size_t i = 0; i < r; ++i) m(i, i) += fm.theta.sig2e;
    const auto w = lu_solve(std::move(m), z.transpose_times(fm.residuals));
    return matvec(d, w);
}

Vector learned_g_route(const FittedModel& fm) {
    const auto& g = fm.train_g;
    if (g.rows() != fm.residuals.size()) throw DimensionMismatch("blup: g(Z) rows != residual length");
    const double s2b = fm.theta.psi.at(0);
    const std::size_t d = g.cols();
    if (fm.theta.sig2e > 0.0) {
        DenseMatrix m = matmul_at_b(g, g);
        for (auto& x : m.data()) x *= s2b;
        for (std::size_t i = 0; i < d; ++i) m(i, i) += fm.theta.sig2e;
        const DenseMatrix e(fm.residuals.size(), 1, fm.residuals);
        auto w = lu_solve(std::move(m), matmul_at_b(g, e).data());
        for (auto& x : w) x *= s2b;
        return w;
    }
    const auto v = marginal_V(g, DenseMatrix::diagonal(Vector(d, s2b)), fm.theta.sig2e);
    const auto alpha = solve(cholesky(v), fm.residuals);
    const DenseMatrix a(alpha.size(), 1, alpha);
    auto w = matmul_at_b(g, a).data();
    for (auto& x : w) x *= s2b;
    return w;
}

}  // namespace

Vector blup(const FittedModel& fm, const BlupOptions& opt) {
    fm.theta.check(fm.spec);
    const std::size_t n = fm.residuals.size();
    if (n != fm.train_design.rows()) throw DimensionMismatch("blup: residual length != training rows");
    if (n == 0) throw std::invalid_argument("blup: no training rows");

    if (opt.force == BlupRoute::Auto && n > opt.dense_cap)
        return subsample_blup(fm, std::min(opt.subsample, n), opt.seed);
    if (fm.spec.learned_g()) return learned_g_route(fm);

    switch (opt.force) {
        case BlupRoute::BlockDiagonal: {
            auto b = block_route(fm);
            if (!b) throw std::invalid_argument("blup: V is not block-diagonal for this spec");
            return *b;
        }
        case BlupRoute::PushThrough:
            if (!(fm.theta.sig2e > 0.0)) throw std::invalid_argument("blup: push-through route needs sig2e > 0");
            return push_through(fm);
        case BlupRoute::DenseCholesky: return dense_route(fm);
        case BlupRoute::Auto: break;
    }
    if (auto b = block_route(fm)) return *b;
    const auto lay = layout(fm.spec);
    if (fm.theta.sig2e > 0.0 && lay.z_cols < n && lay.z_cols <= opt.push_through_max) return push_through(fm);
    return dense_route(fm);
}

Vector blup_intercepts_fast(std::span<const std::size_t> ids, std::span<const double> residuals, std::size_t q,
                            double sig2e, double sig2b) {
    if (ids.size() != residuals.size()) throw DimensionMismatch("blup_intercepts_fast: ids and residuals differ");
    Vector sum(q, 0.0), count(q, 0.0), b(q, 0.0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= q) continue;
        sum[ids[i]] += residuals[i];
        count[ids[i]] += 1.0;
    }
    for (std::size_t j = 0; j < q; ++j) {
        if (count[j] == 0.0 || sig2b == 0.0) continue;
        const double shrink = count[j] * sig2b / (sig2e + count[j] * sig2b);
        b[j] = shrink * sum[j] / count[j];
    }
    return b;
}

Vector blup_intercepts_fast(const FittedModel& fm) {
    if (fm.spec.kind != CovKind::RandomIntercepts || fm.spec.learned_g())
        throw std::invalid_argument("blup_intercepts_fast: needs random intercepts with identity g");
    return blup_intercepts_fast(fm.train_design.ids.at(0), fm.residuals, fm.spec.cardinalities[0], fm.theta.sig2e,
                                fm.theta.psi[0]);
}

Vector subsample_blup(const FittedModel& fm, std::size_t s, std::uint64_t seed) {
    const std::size_t n = fm.residuals.size();
    if (s < 2) throw std::invalid_argument("subsample_blup: sample size must be >= 2");
    if (s > n) throw std::invalid_argument("subsample_blup: sample size exceeds training rows");
    auto rows = iota_rows(n);
    Rng rng = make_stream(seed, "subsample");
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(s);
    std::sort(rows.begin(), rows.end());

    FittedModel sub;
    sub.spec = fm.spec;
    sub.theta = fm.theta;
    sub.train_design = fm.train_design.subset(rows);
    for (auto r : rows) sub.residuals.push_back(fm.residuals[r]);
    if (fm.spec.learned_g()) {
        sub.train_g = DenseMatrix(s, fm.train_g.cols());
        for (std::size_t i = 0; i < s; ++i) {
            auto src = fm.train_g.row(rows[i]);
            std::copy(src.begin(), src.end(), sub.train_g.row(i).begin());
        }
    }
    BlupOptions opt;
    opt.dense_cap = std::numeric_limits<std::size_t>::max();
    return blup(sub, opt);
}

Vector random_part(const FittedModel& fm, std::span<const double> b, const REDesignData& design,
                   const DenseMatrix* g_input) {
    const std::size_t n = design.rows();
    if (!fm.spec.learned_g()) {
        const auto z = build_Z(fm.spec, design, iota_rows(n), true).z;
        if (b.size() != z.cols()) throw DimensionMismatch("random_part: b length != Z columns");
        return z.times(b);
    }
    if (!g_input || !fm.g) throw std::invalid_argument("random_part: learned g needs its network and input");
    if (g_input->rows() != n) throw DimensionMismatch("random_part: g input rows != design rows");
    DenseMatrix in = *g_input;
    std::vector<bool> unknown(n, false);
    if (fm.spec.kind == CovKind::RandomIntercepts) {
        const double q = static_cast<double>(fm.spec.cardinalities[0]);
        for (std::size_t i = 0; i < n; ++i)
            if (!(in(i, 0) < q)) {
                unknown[i] = true;
                in(i, 0) = 0.0;
            }
    }
    const auto g = fm.g->forward(in, false);
    auto out = matvec(g, b);
    for (std::size_t i = 0; i < n; ++i)
        if (unknown[i]) out[i] = 0.0;
    return out;
}

Vector predict(const FittedModel& fm, std::span<const double> b, const DenseMatrix& x, const REDesignData& design,
               const DenseMatrix* g_input) {
    if (x.cols() != fm.f.input_dim()) throw DimensionMismatch("predict: feature width does not match the network");
    if (x.rows() != design.rows()) throw DimensionMismatch("predict: X rows != design rows");
    auto y = fm.f.predict(x);
    const auto re = random_part(fm, b, design, g_input);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += re[i];
    return y;
}

double mse(std::span<const double> y, std::span<const double> yhat) {
    if (y.empty()) throw std::invalid_argument("mse: empty input");
    if (y.size() != yhat.size()) throw DimensionMismatch("mse: lengths differ");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    return s / static_cast<double>(y.size());
}

Aggregate aggregate(std::span<const double> values) {
    Aggregate a;
    a.count = values.size();
    if (values.empty()) {
        a.mean = a.se = std::numeric_limits<double>::quiet_NaN();
        return a;
    }
    a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(a.count);
    if (a.count > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.se = std::sqrt(ss / static_cast<double>(a.count - 1)) / std::sqrt(static_cast<double>(a.count));
    }
    return a;
}

}  // namespace lmmnn

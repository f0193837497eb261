#include "lmmnn/glmm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace lmmnn {

QuadratureRule hermite_rule(std::size_t k) {
    if (k < 1 || k > 50) throw std::invalid_argument("hermite_rule: K must be in [1, 50]");
    // Newton on the orthonormal Hermite recurrence, roots from the largest down.
    const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
    const auto n = static_cast<double>(k);
    Vector x(k), w(k);
    double z = 0.0;
    for (std::size_t i = 0; i < (k + 1) / 2; ++i) {
        if (i == 0)
            z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
        else if (i == 1)
            z -= 1.14 * std::pow(n, 0.426) / z;
        else if (i == 2)
            z = 1.86 * z - 0.86 * x[0];
        else if (i == 3)
            z = 1.91 * z - 0.91 * x[1];
        else
            z = 2.0 * z - x[i - 2];
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = pim4, p2 = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const double p3 = p2;
                p2 = p1;
                const auto jj = static_cast<double>(j);
                p1 = z * std::sqrt(2.0 / (jj + 1.0)) * p2 - std::sqrt(jj / (jj + 1.0)) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) <= 1e-15) break;
        }
        x[i] = z;
        x[k - 1 - i] = -z;
        w[i] = w[k - 1 - i] = 2.0 / (pp * pp);
    }
    if (k % 2 == 1) x[k / 2] = 0.0;
    QuadratureRule r;
    r.nodes.assign(x.rbegin(), x.rend());  // ascending
    r.weights.assign(w.rbegin(), w.rend());
    return r;
}

ClusterIndex ClusterIndex::build(std::span<const std::size_t> ids, std::size_t q) {
    ClusterIndex c;
    c.members.resize(q);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= q) throw std::out_of_range("ClusterIndex: level " + std::to_string(ids[i]) + " >= q");
        c.members[ids[i]].push_back(i);
    }
    return c;
}

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct ClusterTerm {
    double log_lik = 0.0;
    double grad_c = 0.0;
};

// Node log-weights a_k, the cluster log-likelihood, and (optionally) gradients.
ClusterTerm cluster_term(const std::vector<std::size_t>& pos, std::span<const double> f, std::span<const double> y,
                         double c, const QuadratureRule& rule, double* grad_f) {
    const std::size_t k = rule.size();
    const double log_sqrt_pi = 0.5 * std::log(std::numbers::pi);
    double a[50] = {};
    for (std::size_t j = 0; j < k; ++j) {
        double s = std::log(rule.weights[j]) - log_sqrt_pi;
        const double shift = c * rule.nodes[j];
        for (auto i : pos) {
            const double eta = f[i] + shift;
            s += y[i] * eta - softplus(eta);
        }
        a[j] = s;
    }
    const double amax = *std::max_element(a, a + k);
    double tot = 0.0;
    for (std::size_t j = 0; j < k; ++j) tot += std::exp(a[j] - amax);
    ClusterTerm t;
    t.log_lik = amax + std::log(tot);
    if (!grad_f) return t;
    for (auto i : pos) grad_f[i] = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        const double pi = std::exp(a[j] - t.log_lik);
        const double shift = c * rule.nodes[j];
        double resid = 0.0;
        for (auto i : pos) {
            const double r = y[i] - sigmoid(f[i] + shift);
            grad_f[i] -= pi * r;
            resid += r;
        }
        t.grad_c -= pi * resid * rule.nodes[j];
    }
    return t;
}

void check_inputs(std::span<const double> f, std::span<const double> y, double sigma_b) {
    if (f.size() != y.size()) throw DimensionMismatch("nll_glmm: f and y lengths differ");
    if (!(sigma_b >= 0.0) || !std::isfinite(sigma_b)) throw std::invalid_argument("nll_glmm: sigma_b must be >= 0");
    for (double v : f)
        if (!std::isfinite(v)) throw std::domain_error("nll_glmm: non-finite f output");
    for (double v : y)
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("nll_glmm: y must be 0/1");
}

GlmmLoss nll_glmm_impl(std::span<const double> f, std::span<const double> y, double sigma_b,
                       const ClusterIndex& clusters, const QuadratureRule& rule, bool parallel) {
    check_inputs(f, y, sigma_b);
    const double c = std::numbers::sqrt2 * sigma_b;
    GlmmLoss out;
    out.grad_f.assign(f.size(), 0.0);
    const long q = static_cast<long>(clusters.size());
    std::vector<ClusterTerm> terms(clusters.size());
#pragma omp parallel for schedule(dynamic, 4) if (parallel && q > 16)
    for (long j = 0; j < q; ++j) {
        const auto& pos = clusters.members[static_cast<std::size_t>(j)];
        if (!pos.empty()) terms[static_cast<std::size_t>(j)] = cluster_term(pos, f, y, c, rule, out.grad_f.data());
    }
    double grad_c = 0.0;
    for (const auto& t : terms) {  // fixed order
        out.nll -= t.log_lik;
        grad_c += t.grad_c;
    }
    out.grad_log_sig2b = grad_c * c / 2.0;
    return out;
}

}  // namespace

GlmmLoss nll_glmm(std::span<const double> f, std::span<const double> y, double sigma_b, const ClusterIndex& clusters,
                  const QuadratureRule& rule) {
    return nll_glmm_impl(f, y, sigma_b, clusters, rule, true);
}

namespace serial {
GlmmLoss nll_glmm(std::span<const double> f, std::span<const double> y, double sigma_b, const ClusterIndex& clusters,
                  const QuadratureRule& rule) {
    return nll_glmm_impl(f, y, sigma_b, clusters, rule, false);
}
}  // namespace serial

Vector predict_b_quadrature(std::span<const double> f, std::span<const double> y, double sigma_b,
                            const ClusterIndex& clusters, const QuadratureRule& rule) {
    check_inputs(f, y, sigma_b);
    const double c = std::numbers::sqrt2 * sigma_b;
    const double log_sqrt_pi = 0.5 * std::log(std::numbers::pi);
    Vector b(clusters.size(), 0.0);
    if (c == 0.0) return b;
    const std::size_t k = rule.size();
    for (std::size_t j = 0; j < clusters.size(); ++j) {
        const auto& pos = clusters.members[j];
        if (pos.empty()) continue;
        Vector a(k);
        for (std::size_t n = 0; n < k; ++n) {
            double s = std::log(rule.weights[n]) - log_sqrt_pi;
            for (auto i : pos) {
                const double eta = f[i] + c * rule.nodes[n];
                s += y[i] * eta - softplus(eta);
            }
            a[n] = s;
        }
        const double amax = *std::max_element(a.begin(), a.end());
        double num = 0.0, den = 0.0;
        for (std::size_t n = 0; n < k; ++n) {
            const double e = std::exp(a[n] - amax);
            num += e * c * rule.nodes[n];
            den += e;
        }
        b[j] = num / den;
        if (!std::isfinite(b[j])) throw std::domain_error("predict_b_quadrature: non-finite posterior mean");
    }
    return b;
}

Vector predict_prob(std::span<const double> f, std::span<const std::size_t> ids, std::span<const double> b) {
    if (f.size() != ids.size()) throw DimensionMismatch("predict_prob: f and ids lengths differ");
    Vector p(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double bj = ids[i] < b.size() ? b[ids[i]] : 0.0;
        p[i] = sigmoid(std::clamp(f[i] + bj, -30.0, 30.0));
    }
    return p;
}

double auc(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) throw DimensionMismatch("auc: lengths differ");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_pos = 0.0, npos = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]] > 0.5) {
                rank_pos += avg;
                npos += 1.0;
            }
        i = j;
    }
    const double nneg = static_cast<double>(n) - npos;
    if (npos == 0.0 || nneg == 0.0) throw std::invalid_argument("auc: both classes must be present");
    return (rank_pos - npos * (npos + 1.0) / 2.0) / (npos * nneg);
}

GlmmFit train_glmm(const GlmmData& data, const NetConfig& net, const TrainConfig& config) {
    if (data.y.size() != data.x.rows() || data.ids.size() != data.x.rows())
        throw DimensionMismatch("train_glmm: X, ids and y disagree on the number of rows");
    const auto rule = hermite_rule(config.quadrature_nodes);

    Trainable model;
    model.f = FeedForwardNet(data.x.cols(), mlp_layers(net, 1), derive_seed(config.seed, "f"));
    model.theta = {0.0};
    model.theta_names = {"sig2b"};
    model.constrained = [](std::span<const double> u) { return Vector{std::exp(u[0])}; };

    const Objective objective = [&](const BatchInput& b) {
        const std::size_t m = b.rows.size();
        std::vector<std::size_t> ids(m);
        Vector f(m), y(m);
        for (std::size_t i = 0; i < m; ++i) {
            ids[i] = data.ids[b.rows[i]];
            f[i] = b.f_out(i, 0);
            y[i] = data.y[b.rows[i]];
        }
        const auto clusters = ClusterIndex::build(ids, data.q);
        const double sigma_b = std::exp(0.5 * b.theta[0]);
        auto loss = nll_glmm(f, y, sigma_b, clusters, rule);
        BatchEval ev;
        ev.loss = loss.nll;
        if (b.want_grad) {
            ev.grad_f = DenseMatrix(m, 1, std::move(loss.grad_f));
            ev.grad_theta = {loss.grad_log_sig2b};
        }
        return ev;
    };
    const std::size_t budget = config.batch_size;
    const auto ids = data.ids;
    const Batcher batcher = [budget, ids](std::span<const std::size_t> rows, Rng* rng) {
        return cluster_batches(rows, ids, budget, rng);
    };
    auto hist = fit(model, FitInputs{data.x, nullptr, data.rows}, objective, batcher, config);
    GlmmFit out;
    out.f = std::move(model.f);
    out.sig2b = std::exp(model.theta[0]);
    out.history = std::move(hist);
    return out;
}

}  // namespace lmmnn

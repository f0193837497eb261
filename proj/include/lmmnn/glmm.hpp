#pragma once

#include <span>
#include <vector>

#include "lmmnn/trainer.hpp"

namespace lmmnn {

// Physicists' Gauss-Hermite rule: integral of h(x) exp(-x^2) ~ sum w_k h(x_k).
struct QuadratureRule {
    Vector nodes;
    Vector weights;
    std::size_t size() const noexcept { return nodes.size(); }
};

QuadratureRule hermite_rule(std::size_t k);

// Row positions (into the f / y vectors) of every cluster.
struct ClusterIndex {
    std::vector<std::vector<std::size_t>> members;

    // ids[rows[i]] is the level of position i; levels >= q are rejected.
    static ClusterIndex build(std::span<const std::size_t> ids, std::size_t q);
    std::size_t size() const noexcept { return members.size(); }
};

struct GlmmLoss {
    double nll = 0.0;
    Vector grad_f;             // per position
    double grad_log_sig2b = 0.0;
};

// Quadrature NLL over the clusters; positions not in any cluster are ignored.
GlmmLoss nll_glmm(std::span<const double> f, std::span<const double> y, double sigma_b, const ClusterIndex& clusters,
                  const QuadratureRule& rule);

// Posterior mean of b_j by the same quadrature; empty clusters get 0.
Vector predict_b_quadrature(std::span<const double> f, std::span<const double> y, double sigma_b,
                            const ClusterIndex& clusters, const QuadratureRule& rule);

// sigmoid(f + b[id]) with logits clipped to +-30; ids >= b.size() get b = 0.
Vector predict_prob(std::span<const double> f, std::span<const std::size_t> ids, std::span<const double> b);

// Mann-Whitney AUC, ties count half.
double auc(std::span<const double> scores, std::span<const double> labels);

struct GlmmData {
    const DenseMatrix& x;
    std::span<const std::size_t> ids;
    std::size_t q;
    std::span<const double> y;
    std::span<const std::size_t> rows;
};

struct GlmmFit {
    FeedForwardNet f;
    double sig2b = 1.0;
    TrainHistory history;
};

GlmmFit train_glmm(const GlmmData& data, const NetConfig& net, const TrainConfig& config);

namespace serial {
GlmmLoss nll_glmm(std::span<const double> f, std::span<const double> y, double sigma_b, const ClusterIndex& clusters,
                  const QuadratureRule& rule);
}

}  // namespace lmmnn

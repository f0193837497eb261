#pragma once

#include <optional>
#include <span>

#include "lmmnn/covariance.hpp"
#include "lmmnn/trainer.hpp"

namespace lmmnn {

// 0.5 e'V^-1 e + 0.5 log|V| + (n/2) log 2pi
double nll_full(std::span<const double> e, const DenseMatrix& v);

struct BatchLossResult {
    double nll = 0.0;
    Vector grad_f;      // d nll / d f(X) for the batch rows, = -V^-1 e
    Vector grad_theta;  // w.r.t. the unconstrained theta
    Vector alpha;       // V^-1 e
    DenseMatrix grad_g; // d nll / d g(Z) rows, learned g only
};

BatchLossResult nll_batch(std::span<const double> e, const CovarianceSpec& spec, const VarianceComponents& theta,
                          const BatchDesign& batch);

// -0.5 a' dV a + 0.5 sum(V^-1 .* dV) per derivative matrix, a = V^-1 e.
Vector grad_theta(std::span<const double> e, const CholeskyFactor& v, std::span<const DenseMatrix> dv);

// Max abs difference between the full-data theta gradient and the sum of
// per-cluster gradients. Rows 0..n-1 of `data` must be sorted by primary id.
double gradient_decomposition_check(std::span<const double> e, const CovarianceSpec& spec,
                                    const VarianceComponents& theta, const REDesignData& data);

// Input for g when the covariance spec learns it: the id column for random intercepts,
// (x, y) of the row's location for spatial.
DenseMatrix g_input(const CovarianceSpec& spec, const REDesignData& data);

struct LmmnnData {
    const DenseMatrix& x;
    const REDesignData& design;
    std::span<const double> y;
    std::span<const std::size_t> rows;  // training rows
};

struct LmmnnFit {
    FeedForwardNet f;
    std::optional<FeedForwardNet> g;
    VarianceComponents theta;
    TrainHistory history;
};

Objective gaussian_objective(const CovarianceSpec& spec, const REDesignData& design, std::span<const double> y);

LmmnnFit train(const LmmnnData& data, const CovarianceSpec& spec, const NetConfig& net, const TrainConfig& config);

}  // namespace lmmnn

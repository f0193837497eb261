#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lmmnn/covariance.hpp"
#include "lmmnn/neuralnet.hpp"

namespace lmmnn {

// What BLUP needs from a fit: theta, the training design, residuals
// y - f(X) on the training rows, and g(Z) of those rows when g is learned.
struct FittedModel {
    CovarianceSpec spec;
    VarianceComponents theta;
    FeedForwardNet f;
    std::optional<FeedForwardNet> g;
    REDesignData train_design;  // training rows only
    Vector residuals;
    DenseMatrix train_g;  // learned g only
};

enum class BlupRoute { Auto, BlockDiagonal, PushThrough, DenseCholesky };

struct BlupOptions {
    std::size_t dense_cap = 20000;   // full solve up to this many training rows
    std::size_t subsample = 10000;   // rows used above the cap
    std::size_t push_through_max = 4000;
    std::uint64_t seed = 0;
    BlupRoute force = BlupRoute::Auto;
};

// b = D g(Z)' V^-1 e over the training rows.
Vector blup(const FittedModel& fitted, const BlupOptions& options = {});

// Random intercepts shortcut: b_j = n_j s2b / (s2e + n_j s2b) * mean residual of j.
Vector blup_intercepts_fast(std::span<const std::size_t> ids, std::span<const double> residuals, std::size_t q,
                            double sig2e, double sig2b);
Vector blup_intercepts_fast(const FittedModel& fitted);

// BLUP restricted to S uniformly sampled training rows.
Vector subsample_blup(const FittedModel& fitted, std::size_t s, std::uint64_t seed);

// Random-effect part g(Z_te) b for new rows; unseen levels contribute nothing.
// g_input is required when g is learned.
Vector random_part(const FittedModel& fitted, std::span<const double> b, const REDesignData& design,
                   const DenseMatrix* g_input = nullptr);

// f(X_te) + g(Z_te) b
Vector predict(const FittedModel& fitted, std::span<const double> b, const DenseMatrix& x,
               const REDesignData& design, const DenseMatrix* g_input = nullptr);

double mse(std::span<const double> y, std::span<const double> yhat);

struct Aggregate {
    double mean = 0.0;
    double se = 0.0;  // sample sd / sqrt(count)
    std::size_t count = 0;
};
Aggregate aggregate(std::span<const double> values);

}  // namespace lmmnn

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmmnn/neuralnet.hpp"

namespace lmmnn {

struct TrainConfig {
    std::size_t batch_size = 100;
    std::size_t max_epochs = 500;
    std::size_t patience = 10;
    double validation_fraction = 0.10;
    std::uint64_t seed = 0;
    OptimizerConfig optimizer;
    std::size_t quadrature_nodes = 5;  // GLMM only

    void validate() const;
};

// Hidden layer widths, dropout after each hidden layer.
struct NetConfig {
    std::vector<std::size_t> hidden{100, 50, 25, 12};
    double dropout = 0.25;
};

std::vector<LayerSpec> mlp_layers(const NetConfig& net, std::size_t outputs);

struct HistoryRow {
    std::size_t epoch = 0;
    double train_nll = 0.0;
    double val_nll = 0.0;
    Vector theta;  // constrained scale
};

struct TrainHistory {
    std::vector<std::string> theta_names;
    std::vector<HistoryRow> rows;
    std::size_t best_epoch = 0;  // 0 when nothing was trained

    // epoch, train_nll, val_nll, then one column per theta entry
    void write_csv(const std::string& path) const;
};

// One mini-batch evaluation. Gradients are w.r.t. the network outputs of the
// batch rows and the unconstrained theta.
struct BatchInput {
    std::span<const std::size_t> rows;
    const DenseMatrix& f_out;
    const DenseMatrix* g_out;
    std::span<const double> theta;
    bool want_grad;
};

struct BatchEval {
    double loss = 0.0;
    DenseMatrix grad_f;
    DenseMatrix grad_g;
    Vector grad_theta;
};

using Objective = std::function<BatchEval(const BatchInput&)>;
// Splits a row pool into batches; shuffles when rng is given.
using Batcher = std::function<std::vector<std::vector<std::size_t>>(std::span<const std::size_t>, Rng*)>;

struct Trainable {
    FeedForwardNet f;
    std::optional<FeedForwardNet> g;
    Vector theta;  // unconstrained
    std::vector<std::string> theta_names;
    std::function<Vector(std::span<const double>)> constrained;  // for history; identity if empty
};

struct FitInputs {
    const DenseMatrix& xf;
    const DenseMatrix* xg = nullptr;
    std::span<const std::size_t> rows;  // training pool; validation is carved out of it
};

// Mini-batch training with early stopping on validation loss. Parameters are
// restored to the best validation epoch.
TrainHistory fit(Trainable& model, const FitInputs& in, const Objective& objective, const Batcher& batcher,
                 const TrainConfig& config);

// Shuffled (or ordered) chunks of batch_size; a trailing batch of one row is
// merged into its predecessor.
std::vector<std::vector<std::size_t>> random_batches(std::span<const std::size_t> rows, std::size_t batch_size,
                                                     Rng* rng);
// Whole clusters grouped greedily up to the budget. A cluster larger than the
// budget is a batch of its own.
std::vector<std::vector<std::size_t>> cluster_batches(std::span<const std::size_t> rows,
                                                      std::span<const std::size_t> ids, std::size_t budget, Rng* rng);

// Validation / training row split used by fit().
void split_validation(std::span<const std::size_t> pool, double fraction, std::uint64_t seed,
                      std::vector<std::size_t>& train, std::vector<std::size_t>& val);

DenseMatrix gather_rows(const DenseMatrix& x, std::span<const std::size_t> rows);

// Mean squared error and mean binary cross-entropy on logits (single output).
Objective mse_objective(std::span<const double> y);
Objective bce_objective(std::span<const double> y);

}  // namespace lmmnn

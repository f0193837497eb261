#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lmmnn/linalg.hpp"
#include "lmmnn/rng.hpp"

namespace lmmnn {

enum class Activation { Relu, Linear };

struct LayerSpec {
    enum class Kind { Dense, Dropout, Embedding };
    Kind kind = Kind::Dense;
    std::size_t in = 0;  // dense: 0 means "take the width of the previous layer"
    std::size_t out = 0;
    Activation activation = Activation::Linear;
    double rate = 0.0;
    std::size_t vocab = 0;
    std::size_t dim = 0;
    std::size_t column = 0;  // embedding: which input column holds the id

    static LayerSpec dense(std::size_t out, Activation act, std::size_t in = 0);
    static LayerSpec dropout(double rate);
    // Input column `column` holds the level id; the other columns pass through
    // after the looked-up row: output = [table[id], x without that column].
    static LayerSpec embedding(std::size_t vocab, std::size_t dim, std::size_t column = 0);
    bool operator==(const LayerSpec&) const = default;
};

struct Tensor {
    std::string name;
    DenseMatrix value;
};

// Activations kept from a forward pass, consumed by backward().
struct ForwardCache {
    std::vector<DenseMatrix> inputs;  // input of every layer
    std::vector<DenseMatrix> masks;   // relu / dropout masks (empty for other layers)
    std::vector<std::vector<std::size_t>> ids;
    std::size_t batch = 0;
};

struct BackwardResult {
    std::vector<DenseMatrix> grads;  // aligned with FeedForwardNet::params()
    DenseMatrix grad_input;
};

class FeedForwardNet {
public:
    FeedForwardNet() = default;
    FeedForwardNet(std::size_t input_dim, std::vector<LayerSpec> layers, std::uint64_t seed);

    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t output_dim() const noexcept { return output_dim_; }
    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }

    std::vector<Tensor>& params() noexcept { return params_; }
    const std::vector<Tensor>& params() const noexcept { return params_; }

    // rng is only drawn from in training mode with active dropout.
    DenseMatrix forward(const DenseMatrix& x, bool training, Rng* rng = nullptr, ForwardCache* cache = nullptr) const;
    BackwardResult backward(const ForwardCache& cache, const DenseMatrix& grad_out) const;

    // Single-output convenience: forward in eval mode, column 0.
    Vector predict(const DenseMatrix& x) const;

private:
    struct Slot {
        std::size_t weight = SIZE_MAX, bias = SIZE_MAX;
        std::size_t in = 0, out = 0;
    };
    std::size_t input_dim_ = 0, output_dim_ = 0;
    std::vector<LayerSpec> layers_;
    std::vector<Slot> slots_;
    std::vector<Tensor> params_;
};

// Table lookup and its scatter-add adjoint.
DenseMatrix embedding_lookup(const DenseMatrix& table, std::span<const std::size_t> ids);
DenseMatrix embedding_backward(std::size_t vocab, std::span<const std::size_t> ids, const DenseMatrix& grad_rows);

enum class Algorithm { Sgd, Adam };

struct OptimizerConfig {
    Algorithm algorithm = Algorithm::Adam;
    double learning_rate = 0.001;
};

struct OptimizerState {
    OptimizerConfig config;
    std::vector<DenseMatrix> m, v;
    std::uint64_t step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Applies one update. Throws std::domain_error naming the parameter if any
// gradient entry is non-finite; no parameter is touched in that case.
void step(OptimizerState& state, std::span<Tensor* const> params, std::span<const DenseMatrix> grads);

}  // namespace lmmnn

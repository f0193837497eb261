#include "lmmnn/neuralnet.hpp"

#include <cmath>
#include <stdexcept>

namespace lmmnn {

LayerSpec LayerSpec::dense(std::size_t out, Activation act, std::size_t in) {
    LayerSpec s;
    s.kind = Kind::Dense;
    s.in = in;
    s.out = out;
    s.activation = act;
    return s;
}

LayerSpec LayerSpec::dropout(double rate) {
    LayerSpec s;
    s.kind = Kind::Dropout;
    s.rate = rate;
    return s;
}

LayerSpec LayerSpec::embedding(std::size_t vocab, std::size_t dim, std::size_t column) {
    LayerSpec s;
    s.column = column;
    s.kind = Kind::Embedding;
    s.vocab = vocab;
    s.dim = dim;
    return s;
}

FeedForwardNet::FeedForwardNet(std::size_t input_dim, std::vector<LayerSpec> layers, std::uint64_t seed)
    : input_dim_(input_dim), layers_(std::move(layers)) {
    if (input_dim == 0) throw std::invalid_argument("network input width must be positive");
    Rng rng(seed);
    std::size_t width = input_dim;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        auto& l = layers_[li];
        Slot slot;
        slot.in = width;
        const std::string tag = "layer" + std::to_string(li);
        switch (l.kind) {
            case LayerSpec::Kind::Dense: {
                if (l.out == 0) throw std::invalid_argument(tag + ": dense width must be positive");
                if (l.in != 0 && l.in != width) throw DimensionMismatch(tag + ": dense input width mismatch");
                l.in = width;
                // Glorot uniform
                const double lim = std::sqrt(6.0 / static_cast<double>(width + l.out));
                std::uniform_real_distribution<double> u(-lim, lim);
                DenseMatrix w(width, l.out);
                for (double& x : w.data()) x = u(rng);
                slot.weight = params_.size();
                params_.push_back({tag + ".W", std::move(w)});
                slot.bias = params_.size();
                params_.push_back({tag + ".b", DenseMatrix(1, l.out)});
                width = l.out;
                break;
            }
            case LayerSpec::Kind::Dropout:
                if (!(l.rate >= 0.0 && l.rate < 1.0)) throw std::invalid_argument(tag + ": dropout rate must be in [0,1)");
                break;
            case LayerSpec::Kind::Embedding: {
                if (l.vocab == 0 || l.dim == 0) throw std::invalid_argument(tag + ": embedding dims must be positive");
                if (l.column >= width) throw DimensionMismatch(tag + ": embedding id column outside the input");
                std::uniform_real_distribution<double> u(-0.05, 0.05);
                DenseMatrix t(l.vocab, l.dim);
                for (double& x : t.data()) x = u(rng);
                slot.weight = params_.size();
                params_.push_back({tag + ".table", std::move(t)});
                width = l.dim + width - 1;
                break;
            }
        }
        slot.out = width;
        slots_.push_back(slot);
    }
    output_dim_ = width;
}

namespace {

std::vector<std::size_t> read_ids(const DenseMatrix& x, std::size_t col, std::size_t vocab) {
    std::vector<std::size_t> ids(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double v = x(i, col);
        if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(vocab))
            throw std::out_of_range("embedding id " + std::to_string(v) + " outside vocabulary of " +
                                    std::to_string(vocab));
        ids[i] = static_cast<std::size_t>(v);
    }
    return ids;
}

}  // namespace

DenseMatrix embedding_lookup(const DenseMatrix& table, std::span<const std::size_t> ids) {
    DenseMatrix out(ids.size(), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= table.rows()) throw std::out_of_range("embedding id outside vocabulary");
        auto src = table.row(ids[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

DenseMatrix embedding_backward(std::size_t vocab, std::span<const std::size_t> ids, const DenseMatrix& grad_rows) {
    if (grad_rows.rows() != ids.size()) throw DimensionMismatch("embedding_backward: one gradient row per id");
    DenseMatrix g(vocab, grad_rows.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab) throw std::out_of_range("embedding id outside vocabulary");
        auto dst = g.row(ids[i]);
        auto src = grad_rows.row(i);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    return g;
}

DenseMatrix FeedForwardNet::forward(const DenseMatrix& x, bool training, Rng* rng, ForwardCache* cache) const {
    if (x.cols() != input_dim_) throw DimensionMismatch("forward: input has " + std::to_string(x.cols()) +
                                                        " columns, network expects " + std::to_string(input_dim_));
    if (cache) {
        cache->inputs.assign(layers_.size(), {});
        cache->masks.assign(layers_.size(), {});
        cache->ids.assign(layers_.size(), {});
        cache->batch = x.rows();
    }
    DenseMatrix h = x;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const auto& l = layers_[li];
        const auto& slot = slots_[li];
        if (cache) cache->inputs[li] = h;
        switch (l.kind) {
            case LayerSpec::Kind::Dense: {
                DenseMatrix z = matmul(h, params_[slot.weight].value);
                const auto& b = params_[slot.bias].value;
                for (std::size_t i = 0; i < z.rows(); ++i)
                    for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += b(0, j);
                if (l.activation == Activation::Relu) {
                    DenseMatrix mask(z.rows(), z.cols());
                    for (std::size_t k = 0; k < z.data().size(); ++k) {
                        const bool on = z.data()[k] > 0.0;
                        mask.data()[k] = on ? 1.0 : 0.0;
                        if (!on) z.data()[k] = 0.0;
                    }
                    if (cache) cache->masks[li] = std::move(mask);
                }
                h = std::move(z);
                break;
            }
            case LayerSpec::Kind::Dropout: {
                if (!training || l.rate == 0.0) break;
                if (!rng) throw std::invalid_argument("forward: dropout in training mode needs an rng");
                const double keep = 1.0 - l.rate;
                std::uniform_real_distribution<double> u(0.0, 1.0);
                DenseMatrix mask(h.rows(), h.cols());
                for (std::size_t k = 0; k < h.data().size(); ++k) {
                    mask.data()[k] = u(*rng) < keep ? 1.0 / keep : 0.0;
                    h.data()[k] *= mask.data()[k];
                }
                if (cache) cache->masks[li] = std::move(mask);
                break;
            }
            case LayerSpec::Kind::Embedding: {
                auto ids = read_ids(h, l.column, l.vocab);
                const auto& table = params_[slot.weight].value;
                DenseMatrix out(h.rows(), slot.out);
                for (std::size_t i = 0; i < h.rows(); ++i) {
                    auto e = table.row(ids[i]);
                    auto dst = out.row(i);
                    std::copy(e.begin(), e.end(), dst.begin());
                    std::size_t k = l.dim;
                    for (std::size_t j = 0; j < h.cols(); ++j)
                        if (j != l.column) dst[k++] = h(i, j);
                }
                if (cache) cache->ids[li] = std::move(ids);
                h = std::move(out);
                break;
            }
        }
    }
    return h;
}

BackwardResult FeedForwardNet::backward(const ForwardCache& cache, const DenseMatrix& grad_out) const {
    if (cache.inputs.size() != layers_.size() || grad_out.rows() != cache.batch || grad_out.cols() != output_dim_)
        throw DimensionMismatch("backward: cache does not match this network or gradient");
    BackwardResult r;
    r.grads.resize(params_.size());
    DenseMatrix g = grad_out;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const auto& l = layers_[li];
        const auto& slot = slots_[li];
        const DenseMatrix& in = cache.inputs[li];
        switch (l.kind) {
            case LayerSpec::Kind::Dense: {
                if (l.activation == Activation::Relu) {
                    const auto& mask = cache.masks[li];
                    for (std::size_t k = 0; k < g.data().size(); ++k) g.data()[k] *= mask.data()[k];
                }
                r.grads[slot.weight] = matmul_at_b(in, g);
                DenseMatrix gb(1, g.cols());
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
                r.grads[slot.bias] = std::move(gb);
                g = matmul_a_bt(g, params_[slot.weight].value);
                break;
            }
            case LayerSpec::Kind::Dropout: {
                const auto& mask = cache.masks[li];
                if (mask.empty()) break;
                for (std::size_t k = 0; k < g.data().size(); ++k) g.data()[k] *= mask.data()[k];
                break;
            }
            case LayerSpec::Kind::Embedding: {
                const auto& ids = cache.ids[li];
                DenseMatrix rows(g.rows(), l.dim);
                DenseMatrix gin(g.rows(), slot.in);  // id column gets no gradient
                for (std::size_t i = 0; i < g.rows(); ++i) {
                    for (std::size_t j = 0; j < l.dim; ++j) rows(i, j) = g(i, j);
                    std::size_t k = l.dim;
                    for (std::size_t j = 0; j < slot.in; ++j)
                        if (j != l.column) gin(i, j) = g(i, k++);
                }
                r.grads[slot.weight] = embedding_backward(l.vocab, ids, rows);
                g = std::move(gin);
                break;
            }
        }
    }
    r.grad_input = std::move(g);
    return r;
}

Vector FeedForwardNet::predict(const DenseMatrix& x) const {
    const DenseMatrix out = forward(x, false);
    return out.column(0);
}

void step(OptimizerState& state, std::span<Tensor* const> params, std::span<const DenseMatrix> grads) {
    if (params.size() != grads.size()) throw DimensionMismatch("step: one gradient per parameter");
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& g = grads[p];
        if (g.rows() != params[p]->value.rows() || g.cols() != params[p]->value.cols())
            throw DimensionMismatch("step: gradient shape differs for " + params[p]->name);
        for (double x : g.data())
            if (!std::isfinite(x)) throw std::domain_error("non-finite gradient for parameter " + params[p]->name);
    }
    const double lr = state.config.learning_rate;
    if (state.config.algorithm == Algorithm::Sgd) {
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto& w = params[p]->value.data();
            const auto& g = grads[p].data();
            for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * g[k];
        }
        ++state.step;
        return;
    }
    if (state.m.size() != params.size()) {
        state.m.clear();
        state.v.clear();
        for (auto* p : params) {
            state.m.emplace_back(p->value.rows(), p->value.cols());
            state.v.emplace_back(p->value.rows(), p->value.cols());
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(kAdamBeta1, t);
    const double c2 = 1.0 - std::pow(kAdamBeta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = params[p]->value.data();
        auto& m = state.m[p].data();
        auto& v = state.v[p].data();
        const auto& g = grads[p].data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g[k];
            v[k] = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g[k] * g[k];
            w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + kAdamEps);
        }
    }
}

}  // namespace lmmnn

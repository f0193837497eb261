#include "lmmnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace lmmnn {

void TrainConfig::validate() const {
    if (batch_size < 2) throw std::invalid_argument("batch size must be >= 2");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw std::invalid_argument("validation fraction must be in (0, 1)");
    if (!(optimizer.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (quadrature_nodes < 1 || quadrature_nodes > 50) throw std::invalid_argument("quadrature nodes must be in [1, 50]");
}

std::vector<LayerSpec> mlp_layers(const NetConfig& net, std::size_t outputs) {
    std::vector<LayerSpec> layers;
    for (auto h : net.hidden) {
        layers.push_back(LayerSpec::dense(h, Activation::Relu));
        if (net.dropout > 0.0) layers.push_back(LayerSpec::dropout(net.dropout));
    }
    layers.push_back(LayerSpec::dense(outputs, Activation::Linear));
    return layers;
}

void TrainHistory::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write history file " + path);
    out.precision(17);
    out << "epoch,train_nll,val_nll";
    for (const auto& n : theta_names) out << ',' << n;
    out << '\n';
    for (const auto& r : rows) {
        out << r.epoch << ',' << r.train_nll << ',' << r.val_nll;
        for (double t : r.theta) out << ',' << t;
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<std::vector<std::size_t>> random_batches(std::span<const std::size_t> rows, std::size_t batch_size,
                                                     Rng* rng) {
    std::vector<std::size_t> order(rows.begin(), rows.end());
    if (rng) std::shuffle(order.begin(), order.end(), *rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size)
        out.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(order.size(), i + batch_size)));
    if (out.size() > 1 && out.back().size() < 2) {
        auto last = std::move(out.back());
        out.pop_back();
        out.back().insert(out.back().end(), last.begin(), last.end());
    }
    return out;
}

std::vector<std::vector<std::size_t>> cluster_batches(std::span<const std::size_t> rows,
                                                      std::span<const std::size_t> ids, std::size_t budget,
                                                      Rng* rng) {
    // clusters in order of first appearance
    std::vector<std::size_t> order;
    std::vector<std::vector<std::size_t>> members;
    std::vector<std::size_t> slot;
    for (auto r : rows) {
        const std::size_t id = ids[r];
        if (id >= slot.size()) slot.resize(id + 1, SIZE_MAX);
        if (slot[id] == SIZE_MAX) {
            slot[id] = members.size();
            members.emplace_back();
        }
        members[slot[id]].push_back(r);
    }
    order.resize(members.size());
    std::iota(order.begin(), order.end(), 0);
    if (rng) std::shuffle(order.begin(), order.end(), *rng);
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> cur;
    for (auto c : order) {
        const auto& m = members[c];
        if (!cur.empty() && cur.size() + m.size() > budget) {
            out.push_back(std::move(cur));
            cur.clear();
        }
        cur.insert(cur.end(), m.begin(), m.end());
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

void split_validation(std::span<const std::size_t> pool, double fraction, std::uint64_t seed,
                      std::vector<std::size_t>& train, std::vector<std::size_t>& val) {
    std::vector<std::size_t> order(pool.begin(), pool.end());
    Rng rng = make_stream(seed, "validation");
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t nval = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(order.size())));
    if (order.size() >= 4) nval = std::clamp<std::size_t>(nval, 2, order.size() - 2);
    else nval = 0;
    val.assign(order.begin(), order.begin() + static_cast<long>(nval));
    train.assign(order.begin() + static_cast<long>(nval), order.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
}

DenseMatrix gather_rows(const DenseMatrix& x, std::span<const std::size_t> rows) {
    DenseMatrix out(rows.size(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto src = x.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

namespace {

struct Snapshot {
    std::vector<Tensor> f, g;
    Vector theta;
};

Snapshot take(const Trainable& m) {
    Snapshot s{m.f.params(), m.g ? m.g->params() : std::vector<Tensor>{}, m.theta};
    return s;
}

void restore(Trainable& m, const Snapshot& s) {
    m.f.params() = s.f;
    if (m.g) m.g->params() = s.g;
    m.theta = s.theta;
}

Vector constrained_of(const Trainable& m) {
    if (m.constrained) return m.constrained(m.theta);
    return m.theta;
}

}  // namespace

TrainHistory fit(Trainable& model, const FitInputs& in, const Objective& objective, const Batcher& batcher,
                 const TrainConfig& config) {
    config.validate();
    if (in.xf.cols() != model.f.input_dim()) throw DimensionMismatch("fit: X width does not match the network");
    if (model.g && (!in.xg || in.xg->cols() != model.g->input_dim()))
        throw DimensionMismatch("fit: g input does not match the g network");

    TrainHistory hist;
    hist.theta_names = model.theta_names;
    if (config.max_epochs == 0) return hist;

    std::vector<std::size_t> train_rows, val_rows;
    split_validation(in.rows, config.validation_fraction, config.seed, train_rows, val_rows);
    if (train_rows.size() < 2) throw std::invalid_argument("fit: fewer than two training rows");
    const auto val_batches = batcher(val_rows, nullptr);

    Rng shuffle = make_stream(config.seed, "shuffle");
    Rng dropout = make_stream(config.seed, "dropout");
    OptimizerState opt{config.optimizer, {}, {}, 0};
    Tensor theta_t{"theta", DenseMatrix(1, model.theta.size(), model.theta)};

    std::vector<Tensor*> params;
    for (auto& t : model.f.params()) params.push_back(&t);
    if (model.g)
        for (auto& t : model.g->params()) params.push_back(&t);
    if (!model.theta.empty()) params.push_back(&theta_t);

    auto evaluate = [&](const std::vector<std::size_t>& rows, bool training, bool want_grad, ForwardCache* fc,
                        ForwardCache* gc, DenseMatrix& f_out, DenseMatrix& g_out) {
        f_out = model.f.forward(gather_rows(in.xf, rows), training, &dropout, fc);
        if (model.g) g_out = model.g->forward(gather_rows(*in.xg, rows), training, &dropout, gc);
        return objective(BatchInput{rows, f_out, model.g ? &g_out : nullptr, theta_t.value.data(), want_grad});
    };

    double best = INFINITY;
    Snapshot best_snap = take(model);
    std::size_t wait = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto batches = batcher(train_rows, &shuffle);
        double train_sum = 0.0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            ForwardCache fc, gc;
            DenseMatrix f_out, g_out;
            BatchEval ev = evaluate(batches[bi], true, true, &fc, &gc, f_out, g_out);
            if (!std::isfinite(ev.loss))
                throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(bi));
            train_sum += ev.loss;
            auto fg = model.f.backward(fc, ev.grad_f);
            std::vector<DenseMatrix> grads = std::move(fg.grads);
            if (model.g) {
                auto gg = model.g->backward(gc, ev.grad_g);
                for (auto& m : gg.grads) grads.push_back(std::move(m));
            }
            if (!model.theta.empty()) grads.emplace_back(1, ev.grad_theta.size(), ev.grad_theta);
            step(opt, params, grads);
        }
        model.theta = theta_t.value.data();

        double val_sum = 0.0;
        for (const auto& vb : val_batches) {
            DenseMatrix f_out, g_out;
            val_sum += evaluate(vb, false, false, nullptr, nullptr, f_out, g_out).loss;
        }
        // no validation rows: fall back to the training loss
        const double train_loss = train_sum / static_cast<double>(batches.size());
        const double val_loss = val_batches.empty() ? train_loss : val_sum / static_cast<double>(val_batches.size());
        if (!std::isfinite(val_loss))
            throw std::runtime_error("non-finite validation loss at epoch " + std::to_string(epoch));
        hist.rows.push_back({epoch, train_loss, val_loss, constrained_of(model)});

        if (val_loss < best) {
            best = val_loss;
            best_snap = take(model);
            hist.best_epoch = epoch;
            wait = 0;
        } else if (++wait >= config.patience) {
            break;
        }
    }
    restore(model, best_snap);
    return hist;
}

Objective mse_objective(std::span<const double> y) {
    return [y](const BatchInput& b) {
        const std::size_t m = b.rows.size();
        BatchEval ev;
        if (b.want_grad) ev.grad_f = DenseMatrix(m, 1);
        for (std::size_t i = 0; i < m; ++i) {
            const double r = b.f_out(i, 0) - y[b.rows[i]];
            ev.loss += r * r;
            if (b.want_grad) ev.grad_f(i, 0) = 2.0 * r / static_cast<double>(m);
        }
        ev.loss /= static_cast<double>(m);
        return ev;
    };
}

Objective bce_objective(std::span<const double> y) {
    return [y](const BatchInput& b) {
        const std::size_t m = b.rows.size();
        BatchEval ev;
        if (b.want_grad) ev.grad_f = DenseMatrix(m, 1);
        for (std::size_t i = 0; i < m; ++i) {
            const double z = b.f_out(i, 0), t = y[b.rows[i]];
            // softplus(z) - t z
            ev.loss += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - t * z;
            if (b.want_grad) ev.grad_f(i, 0) = (1.0 / (1.0 + std::exp(-z)) - t) / static_cast<double>(m);
        }
        ev.loss /= static_cast<double>(m);
        return ev;
    };
}

}  // namespace lmmnn

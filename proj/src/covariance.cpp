#include "lmmnn/covariance.hpp"

#include <cmath>
#include <stdexcept>

namespace lmmnn {

// ---------------------------------------------------------------------------
// Spec construction and layout
// ---------------------------------------------------------------------------

CovarianceSpec CovarianceSpec::random_intercepts(std::size_t q) {
    CovarianceSpec s;
    s.kind = CovKind::RandomIntercepts;
    s.cardinalities = {q};
    return s;
}

CovarianceSpec CovarianceSpec::multiple_categorical(std::vector<std::size_t> qs, bool nested) {
    CovarianceSpec s;
    s.kind = CovKind::MultipleCategorical;
    s.cardinalities = std::move(qs);
    s.nested = nested;
    return s;
}

CovarianceSpec CovarianceSpec::longitudinal(std::size_t q, std::size_t order, std::vector<CorrelatedPair> pairs) {
    CovarianceSpec s;
    s.kind = CovKind::Longitudinal;
    s.cardinalities = {q};
    s.poly_order = order;
    s.correlated = std::move(pairs);
    return s;
}

CovarianceSpec CovarianceSpec::spatial_rbf(std::size_t q) {
    CovarianceSpec s;
    s.kind = CovKind::SpatialRBF;
    s.cardinalities = {q};
    return s;
}

CovarianceSpec CovarianceSpec::combined(std::vector<CovarianceSpec> parts) {
    CovarianceSpec s;
    s.kind = CovKind::Combined;
    s.components = std::move(parts);
    return s;
}

CovarianceSpec CovarianceSpec::with_learned_embedding(std::size_t dim) const {
    CovarianceSpec s = *this;
    s.g_mode = GMode::LearnedEmbedding;
    s.g_dim = dim;
    s.validate();
    return s;
}

std::string to_string(CovKind kind) {
    switch (kind) {
        case CovKind::RandomIntercepts: return "random_intercepts";
        case CovKind::MultipleCategorical: return "multiple_categorical";
        case CovKind::Longitudinal: return "longitudinal";
        case CovKind::SpatialRBF: return "spatial_rbf";
        case CovKind::Combined: return "combined";
    }
    return "unknown";
}

void CovarianceSpec::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("CovarianceSpec: " + m); };
    if (kind == CovKind::Combined) {
        if (components.empty()) fail("combined spec has no components");
        if (learned_g()) fail("learned g is not supported on combined specs");
        std::size_t spatial = 0;
        for (const auto& c : components) {
            if (c.kind == CovKind::Combined) fail("combined spec may not contain a combined spec");
            if (c.learned_g()) fail("learned g is not supported inside combined specs");
            if (c.kind == CovKind::SpatialRBF) ++spatial;
            c.validate();
        }
        if (spatial > 1) fail("at most one spatial component is supported");
        return;
    }
    if (!components.empty()) fail("only combined specs have components");
    if (cardinalities.empty()) fail("missing cardinality");
    for (auto q : cardinalities)
        if (q < 1) fail("cardinality must be >= 1");
    if (kind != CovKind::MultipleCategorical && cardinalities.size() != 1) fail("expected a single cardinality");
    if (kind == CovKind::Longitudinal) {
        if (poly_order < 1) fail("polynomial order must be >= 1");
        for (std::size_t i = 0; i < correlated.size(); ++i) {
            const auto& p = correlated[i];
            if (p.first >= p.second || p.second >= poly_order) fail("correlated pair references invalid terms");
            for (std::size_t j = 0; j < i; ++j)
                if (correlated[j] == p) fail("duplicate correlated pair");
        }
    } else if (!correlated.empty()) {
        fail("correlated pairs are only valid for longitudinal specs");
    }
    if (learned_g()) {
        if (kind != CovKind::RandomIntercepts && kind != CovKind::SpatialRBF)
            fail("learned g is supported for random intercepts and spatial specs");
        if (g_dim < 1) fail("learned g output dimension must be >= 1");
    }
}

SpecLayout layout(const CovarianceSpec& spec) {
    spec.validate();
    SpecLayout out;
    std::vector<const CovarianceSpec*> leaves;
    if (spec.kind == CovKind::Combined)
        for (const auto& c : spec.components) leaves.push_back(&c);
    else
        leaves.push_back(&spec);

    std::size_t rho_total = 0;
    for (const auto* leaf : leaves)
        if (leaf->kind == CovKind::Longitudinal) rho_total += leaf->correlated.size();
    (void)rho_total;

    for (const auto* leaf : leaves) {
        TermLayout t;
        t.term = leaf;
        t.id_column = out.id_columns;
        t.psi_offset = out.psi_count;
        t.rho_offset = out.rho_count;
        t.z_offset = out.z_cols;
        switch (leaf->kind) {
            case CovKind::RandomIntercepts:
                out.id_columns += 1;
                t.psi_count = 1;
                t.z_cols = leaf->learned_g() ? leaf->g_dim : leaf->cardinalities[0];
                break;
            case CovKind::MultipleCategorical:
                out.id_columns += leaf->cardinalities.size();
                t.psi_count = leaf->cardinalities.size();
                for (auto q : leaf->cardinalities) t.z_cols += q;
                break;
            case CovKind::Longitudinal:
                out.id_columns += 1;
                t.psi_count = leaf->poly_order;
                t.rho_count = leaf->correlated.size();
                t.z_cols = leaf->poly_order * leaf->cardinalities[0];
                break;
            case CovKind::SpatialRBF:
                out.id_columns += 1;
                t.psi_count = leaf->learned_g() ? 1 : 2;
                t.z_cols = leaf->learned_g() ? leaf->g_dim : leaf->cardinalities[0];
                break;
            case CovKind::Combined: break;
        }
        out.psi_count += t.psi_count;
        out.rho_count += t.rho_count;
        out.z_cols += t.z_cols;
        out.terms.push_back(t);
    }
    return out;
}

std::vector<std::string> theta_names(const CovarianceSpec& spec) {
    const auto lay = layout(spec);
    std::vector<std::string> psi, rho;
    const bool prefix = spec.kind == CovKind::Combined;
    for (std::size_t ti = 0; ti < lay.terms.size(); ++ti) {
        const auto& t = lay.terms[ti];
        const std::string pre = prefix ? "t" + std::to_string(ti) + "_" : "";
        const auto& leaf = *t.term;
        switch (leaf.kind) {
            case CovKind::RandomIntercepts: psi.push_back(pre + "sig2b"); break;
            case CovKind::MultipleCategorical:
                for (std::size_t k = 0; k < leaf.cardinalities.size(); ++k)
                    psi.push_back(pre + "sig2b_" + std::to_string(k + 1));
                break;
            case CovKind::Longitudinal:
                for (std::size_t k = 0; k < leaf.poly_order; ++k) psi.push_back(pre + "sig2b_" + std::to_string(k));
                for (const auto& p : leaf.correlated)
                    rho.push_back(pre + "rho_" + std::to_string(p.first) + std::to_string(p.second));
                break;
            case CovKind::SpatialRBF:
                psi.push_back(pre + "sig2b0");
                if (!leaf.learned_g()) psi.push_back(pre + "sig2b1");
                break;
            case CovKind::Combined: break;
        }
    }
    std::vector<std::string> names{"sig2e"};
    names.insert(names.end(), psi.begin(), psi.end());
    names.insert(names.end(), rho.begin(), rho.end());
    return names;
}

// ---------------------------------------------------------------------------
// Variance components
// ---------------------------------------------------------------------------

VarianceComponents VarianceComponents::initial(const CovarianceSpec& spec) {
    const auto lay = layout(spec);
    VarianceComponents v;
    v.sig2e = 1.0;
    v.psi.assign(lay.psi_count, 1.0);
    v.rhos.assign(lay.rho_count, 0.0);
    return v;
}

VarianceComponents VarianceComponents::from_unconstrained(const CovarianceSpec& spec, std::span<const double> u) {
    const auto lay = layout(spec);
    if (u.size() != lay.theta_size()) throw DimensionMismatch("from_unconstrained: wrong parameter count");
    VarianceComponents v;
    v.sig2e = std::exp(u[0]);
    for (std::size_t i = 0; i < lay.psi_count; ++i) v.psi.push_back(std::exp(u[1 + i]));
    for (std::size_t i = 0; i < lay.rho_count; ++i) v.rhos.push_back(std::tanh(u[1 + lay.psi_count + i]));
    return v;
}

Vector VarianceComponents::unconstrained() const {
    Vector u{std::log(sig2e)};
    for (double p : psi) u.push_back(std::log(p));
    for (double r : rhos) u.push_back(std::atanh(r));
    return u;
}

Vector VarianceComponents::constrained() const {
    Vector c{sig2e};
    c.insert(c.end(), psi.begin(), psi.end());
    c.insert(c.end(), rhos.begin(), rhos.end());
    return c;
}

void VarianceComponents::check(const CovarianceSpec& spec) const {
    const auto lay = layout(spec);
    if (psi.size() != lay.psi_count || rhos.size() != lay.rho_count)
        throw DimensionMismatch("VarianceComponents do not conform to the covariance spec");
    if (!(sig2e >= 0.0) || !std::isfinite(sig2e)) throw std::invalid_argument("sig2e must be finite and >= 0");
    for (double p : psi)
        if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("variance components must be >= 0");
    for (double r : rhos)
        if (!(std::abs(r) < 1.0)) throw std::invalid_argument("correlations must lie in (-1, 1)");
}

// ---------------------------------------------------------------------------
// Design data
// ---------------------------------------------------------------------------

std::size_t REDesignData::rows() const noexcept {
    if (!ids.empty()) return ids.front().size();
    return times.size();
}

REDesignData REDesignData::subset(std::span<const std::size_t> rows) const {
    REDesignData out;
    out.locations = locations;
    out.ids.resize(ids.size());
    for (std::size_t c = 0; c < ids.size(); ++c) {
        out.ids[c].reserve(rows.size());
        for (auto r : rows) out.ids[c].push_back(ids[c].at(r));
    }
    if (!times.empty())
        for (auto r : rows) out.times.push_back(times.at(r));
    return out;
}

namespace {

void check_columns(const SpecLayout& lay, const REDesignData& data) {
    if (data.ids.size() < lay.id_columns) throw DimensionMismatch("REDesignData has fewer id columns than the covariance layout needs");
    for (const auto& t : lay.terms) {
        if (t.term->kind == CovKind::Longitudinal && data.times.size() != data.rows())
            throw DimensionMismatch("longitudinal spec requires one time per row");
        if (t.term->kind == CovKind::SpatialRBF && !t.term->learned_g() &&
            data.locations.size() < t.term->cardinalities[0])
            throw DimensionMismatch("spatial spec requires q locations");
    }
}

// Correlation-adjusted K x K covariance of the longitudinal terms.
DenseMatrix longitudinal_cov(const TermLayout& t, const VarianceComponents& theta) {
    const std::size_t k = t.term->poly_order;
    DenseMatrix corr = DenseMatrix::identity(k);
    for (std::size_t i = 0; i < t.rho_count; ++i) {
        const auto& p = t.term->correlated[i];
        corr(p.first, p.second) = corr(p.second, p.first) = theta.rhos[t.rho_offset + i];
    }
    DenseMatrix work = corr;
    if (!detail::cholesky_inplace(work))
        throw std::invalid_argument("longitudinal correlation matrix is not positive definite");
    DenseMatrix c(k, k);
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b)
            c(a, b) = corr(a, b) * std::sqrt(theta.psi[t.psi_offset + a] * theta.psi[t.psi_offset + b]);
    return c;
}

double sqdist(const Location& a, const Location& b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return dx * dx + dy * dy;
}

// Pairwise evaluation of the random-effect part of V and its derivatives on a batch.
class BatchKernel {
public:
    BatchKernel(const CovarianceSpec& spec, const VarianceComponents& theta, const BatchDesign& batch)
        : lay_(layout(spec)), theta_(theta), batch_(batch) {
        theta.check(spec);
        check_columns(lay_, batch.data);
        const std::size_t m = batch.rows.size();
        for (const auto& t : lay_.terms) {
            Leaf leaf;
            leaf.t = &t;
            if (t.term->learned_g()) {
                if (!batch.learned_g || batch.learned_g->rows() != m || batch.learned_g->cols() != t.z_cols)
                    throw DimensionMismatch("learned g outputs do not match the batch");
            } else if (t.term->kind == CovKind::Longitudinal) {
                const std::size_t k = t.term->poly_order;
                leaf.cov = longitudinal_cov(t, theta);
                leaf.phi = DenseMatrix(m, k);
                for (std::size_t a = 0; a < m; ++a) {
                    const double tt = batch.data.times[batch.rows[a]];
                    if (!std::isfinite(tt)) throw std::invalid_argument("longitudinal time is not finite");
                    double pw = 1.0;
                    for (std::size_t j = 0; j < k; ++j, pw *= tt) leaf.phi(a, j) = pw;
                }
                leaf.cphi = matmul_a_bt(leaf.phi, leaf.cov);  // rows: C phi_a (C symmetric)
            }
            leaves_.push_back(std::move(leaf));
        }
        // unconstrained index -> (leaf, local index, is_rho)
        params_.resize(lay_.theta_size());
        for (std::size_t li = 0; li < lay_.terms.size(); ++li) {
            const auto& t = lay_.terms[li];
            for (std::size_t i = 0; i < t.psi_count; ++i) params_[1 + t.psi_offset + i] = {li, i, false};
            for (std::size_t i = 0; i < t.rho_count; ++i)
                params_[1 + lay_.psi_count + t.rho_offset + i] = {li, i, true};
        }
    }

    std::size_t size() const noexcept { return batch_.rows.size(); }
    std::size_t theta_size() const noexcept { return lay_.theta_size(); }

    double value(std::size_t a, std::size_t b) const {
        double v = 0.0;
        for (const auto& leaf : leaves_) v += leaf_value(leaf, a, b);
        return v;
    }

    // d V_ab / d unconstrained[index], index >= 1.
    double derivative(std::size_t index, std::size_t a, std::size_t b) const {
        const auto& p = params_[index];
        const Leaf& leaf = leaves_[p.leaf];
        const TermLayout& t = *leaf.t;
        const auto& term = *t.term;
        if (term.learned_g()) return leaf_value(leaf, a, b);
        switch (term.kind) {
            case CovKind::RandomIntercepts: return leaf_value(leaf, a, b);
            case CovKind::MultipleCategorical: {
                const std::size_t col = t.id_column + p.local;
                if (!same_level(col, term.cardinalities[p.local], a, b)) return 0.0;
                return theta_.psi[t.psi_offset + p.local];
            }
            case CovKind::Longitudinal: {
                if (!same_level(t.id_column, term.cardinalities[0], a, b)) return 0.0;
                if (!p.is_rho) {
                    const std::size_t k = p.local;
                    return 0.5 * (leaf.phi(a, k) * leaf.cphi(b, k) + leaf.cphi(a, k) * leaf.phi(b, k));
                }
                const auto& pr = term.correlated[p.local];
                const double rho = theta_.rhos[t.rho_offset + p.local];
                const double s = std::sqrt(theta_.psi[t.psi_offset + pr.first] * theta_.psi[t.psi_offset + pr.second]);
                return (1.0 - rho * rho) * s *
                       (leaf.phi(a, pr.first) * leaf.phi(b, pr.second) + leaf.phi(a, pr.second) * leaf.phi(b, pr.first));
            }
            case CovKind::SpatialRBF: {
                const double v = leaf_value(leaf, a, b);
                if (p.local == 0 || v == 0.0) return v;
                const double s1 = theta_.psi[t.psi_offset + 1];
                const auto& locs = batch_.data.locations;
                const double h2 = sqdist(locs[level(t.id_column, a)], locs[level(t.id_column, b)]);
                return v * h2 / (2.0 * s1);
            }
            case CovKind::Combined: break;
        }
        return 0.0;
    }

private:
    struct Leaf {
        const TermLayout* t = nullptr;
        DenseMatrix cov, phi, cphi;
    };
    struct Param {
        std::size_t leaf = 0, local = 0;
        bool is_rho = false;
    };

    std::size_t level(std::size_t col, std::size_t a) const { return batch_.data.ids[col][batch_.rows[a]]; }

    bool same_level(std::size_t col, std::size_t q, std::size_t a, std::size_t b) const {
        const std::size_t la = level(col, a), lb = level(col, b);
        return la == lb && la < q;
    }

    double leaf_value(const Leaf& leaf, std::size_t a, std::size_t b) const {
        const TermLayout& t = *leaf.t;
        const auto& term = *t.term;
        if (term.learned_g()) {
            const auto& g = *batch_.learned_g;
            return theta_.psi[t.psi_offset] * dot(g.row(a), g.row(b));
        }
        switch (term.kind) {
            case CovKind::RandomIntercepts:
                return same_level(t.id_column, term.cardinalities[0], a, b) ? theta_.psi[t.psi_offset] : 0.0;
            case CovKind::MultipleCategorical: {
                double v = 0.0;
                for (std::size_t k = 0; k < term.cardinalities.size(); ++k)
                    if (same_level(t.id_column + k, term.cardinalities[k], a, b)) v += theta_.psi[t.psi_offset + k];
                return v;
            }
            case CovKind::Longitudinal:
                if (!same_level(t.id_column, term.cardinalities[0], a, b)) return 0.0;
                return dot(leaf.phi.row(a), leaf.cphi.row(b));
            case CovKind::SpatialRBF: {
                const std::size_t q = term.cardinalities[0];
                const std::size_t la = level(t.id_column, a), lb = level(t.id_column, b);
                if (la >= q || lb >= q) return 0.0;
                const double s0 = theta_.psi[t.psi_offset], s1 = theta_.psi[t.psi_offset + 1];
                if (la == lb) return s0;
                const double h2 = sqdist(batch_.data.locations[la], batch_.data.locations[lb]);
                return s0 * std::exp(-h2 / (2.0 * s1));
            }
            case CovKind::Combined: break;
        }
        return 0.0;
    }

    SpecLayout lay_;
    const VarianceComponents& theta_;
    const BatchDesign& batch_;
    std::vector<Leaf> leaves_;
    std::vector<Param> params_;
};

// Fills the lower triangle pairwise and mirrors it.
template <class Pair>
DenseMatrix assemble_symmetric(std::size_t m, Pair&& pair, bool parallel) {
    DenseMatrix v(m, m);
    const long n = static_cast<long>(m);
#pragma omp parallel for schedule(dynamic, 8) if (parallel && m > 64)
    for (long a = 0; a < n; ++a)
        for (long b = 0; b <= a; ++b) v(a, b) = pair(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < a; ++b) v(b, a) = v(a, b);
    return v;
}

DenseMatrix marginal_V_impl(const CovarianceSpec& spec, const VarianceComponents& theta, const BatchDesign& batch,
                            bool noise, bool parallel) {
    const BatchKernel kernel(spec, theta, batch);
    DenseMatrix v =
        assemble_symmetric(kernel.size(), [&](std::size_t a, std::size_t b) { return kernel.value(a, b); }, parallel);
    if (noise)
        for (std::size_t i = 0; i < v.rows(); ++i) v(i, i) += theta.sig2e;
    return v;
}

}  // namespace

DesignMatrix build_Z(const CovarianceSpec& spec, const REDesignData& data, std::span<const std::size_t> rows,
                     bool allow_unknown) {
    const auto lay = layout(spec);
    check_columns(lay, data);
    DesignMatrix out{SparseDesign(lay.z_cols), {}};
    std::vector<SparseDesign::Entry> entries;
    for (std::size_t pos = 0; pos < rows.size(); ++pos) {
        const std::size_t r = rows[pos];
        if (r >= data.rows()) throw std::out_of_range("build_Z: row index out of range");
        entries.clear();
        bool unknown = false;
        for (const auto& t : lay.terms) {
            const auto& term = *t.term;
            std::size_t z = t.z_offset;
            const std::size_t ncols = term.kind == CovKind::MultipleCategorical ? term.cardinalities.size() : 1;
            for (std::size_t k = 0; k < ncols; ++k) {
                const std::size_t q = term.cardinalities[k];
                const std::size_t id = data.ids[t.id_column + k][r];
                if (id >= q) {
                    if (!allow_unknown)
                        throw std::out_of_range("build_Z: level " + std::to_string(id) + " unknown at training time");
                    unknown = true;
                } else if (term.kind == CovKind::Longitudinal) {
                    double pw = 1.0;
                    for (std::size_t j = 0; j < term.poly_order; ++j, pw *= data.times[r])
                        if (pw != 0.0) entries.push_back({z + j * q + id, pw});
                } else {
                    entries.push_back({z + id, 1.0});
                }
                z += q;
            }
        }
        out.z.add_row(entries);
        if (unknown) out.unknown_rows.push_back(pos);
    }
    return out;
}

DenseMatrix rbf_kernel(std::span<const Location> locations, double sig2b0, double sig2b1) {
    if (!(sig2b0 > 0.0) || !(sig2b1 > 0.0)) throw std::invalid_argument("rbf_kernel: variances must be positive");
    for (const auto& l : locations)
        if (!std::isfinite(l.x) || !std::isfinite(l.y)) throw std::invalid_argument("rbf_kernel: non-finite location");
    const std::size_t q = locations.size();
    DenseMatrix d(q, q);
    for (std::size_t i = 0; i < q; ++i) {
        d(i, i) = sig2b0;
        for (std::size_t j = 0; j < i; ++j)
            d(i, j) = d(j, i) = sig2b0 * std::exp(-sqdist(locations[i], locations[j]) / (2.0 * sig2b1));
    }
    return d;
}

DenseMatrix build_D(const CovarianceSpec& spec, const VarianceComponents& theta, const REDesignData& data) {
    const auto lay = layout(spec);
    theta.check(spec);
    DenseMatrix d(lay.z_cols, lay.z_cols);
    for (const auto& t : lay.terms) {
        const auto& term = *t.term;
        const std::size_t o = t.z_offset;
        if (term.learned_g()) {
            for (std::size_t i = 0; i < t.z_cols; ++i) d(o + i, o + i) = theta.psi[t.psi_offset];
            continue;
        }
        switch (term.kind) {
            case CovKind::RandomIntercepts:
                for (std::size_t i = 0; i < t.z_cols; ++i) d(o + i, o + i) = theta.psi[t.psi_offset];
                break;
            case CovKind::MultipleCategorical: {
                std::size_t z = o;
                for (std::size_t k = 0; k < term.cardinalities.size(); ++k)
                    for (std::size_t i = 0; i < term.cardinalities[k]; ++i, ++z) d(z, z) = theta.psi[t.psi_offset + k];
                break;
            }
            case CovKind::Longitudinal: {
                const auto c = longitudinal_cov(t, theta);
                const std::size_t q = term.cardinalities[0];
                for (std::size_t l = 0; l < term.poly_order; ++l)
                    for (std::size_t m = 0; m < term.poly_order; ++m)
                        for (std::size_t j = 0; j < q; ++j) d(o + l * q + j, o + m * q + j) = c(l, m);
                break;
            }
            case CovKind::SpatialRBF: {
                const std::size_t q = term.cardinalities[0];
                if (data.locations.size() < q) throw DimensionMismatch("build_D: spatial spec requires q locations");
                if (theta.psi[t.psi_offset] == 0.0) break;
                const auto k = rbf_kernel(std::span(data.locations).first(q), theta.psi[t.psi_offset],
                                          theta.psi[t.psi_offset + 1]);
                for (std::size_t i = 0; i < q; ++i)
                    for (std::size_t j = 0; j < q; ++j) d(o + i, o + j) = k(i, j);
                break;
            }
            case CovKind::Combined: break;
        }
    }
    return d;
}

Vector apply_D(const CovarianceSpec& spec, const VarianceComponents& theta, const REDesignData& data,
               std::span<const double> u) {
    const auto lay = layout(spec);
    theta.check(spec);
    if (u.size() != lay.z_cols) throw DimensionMismatch("apply_D: vector length != Z columns");
    Vector out(u.size(), 0.0);
    for (const auto& t : lay.terms) {
        const auto& term = *t.term;
        const std::size_t o = t.z_offset;
        if (term.learned_g() || term.kind == CovKind::RandomIntercepts) {
            for (std::size_t i = 0; i < t.z_cols; ++i) out[o + i] = theta.psi[t.psi_offset] * u[o + i];
            continue;
        }
        switch (term.kind) {
            case CovKind::MultipleCategorical: {
                std::size_t z = o;
                for (std::size_t k = 0; k < term.cardinalities.size(); ++k)
                    for (std::size_t i = 0; i < term.cardinalities[k]; ++i, ++z)
                        out[z] = theta.psi[t.psi_offset + k] * u[z];
                break;
            }
            case CovKind::Longitudinal: {
                const auto c = longitudinal_cov(t, theta);
                const std::size_t q = term.cardinalities[0];
                for (std::size_t l = 0; l < term.poly_order; ++l)
                    for (std::size_t m = 0; m < term.poly_order; ++m)
                        for (std::size_t j = 0; j < q; ++j) out[o + l * q + j] += c(l, m) * u[o + m * q + j];
                break;
            }
            case CovKind::SpatialRBF: {
                const std::size_t q = term.cardinalities[0];
                if (data.locations.size() < q) throw DimensionMismatch("apply_D: spatial spec requires q locations");
                if (theta.psi[t.psi_offset] == 0.0) break;
                const auto k = rbf_kernel(std::span(data.locations).first(q), theta.psi[t.psi_offset],
                                          theta.psi[t.psi_offset + 1]);
                const auto ku = matvec(k, u.subspan(o, q));
                std::copy(ku.begin(), ku.end(), out.begin() + static_cast<long>(o));
                break;
            }
            default: break;
        }
    }
    return out;
}

DenseMatrix marginal_V(const CovarianceSpec& spec, const VarianceComponents& theta, const BatchDesign& batch,
                       bool noise) {
    return marginal_V_impl(spec, theta, batch, noise, true);
}

DenseMatrix marginal_V(const SparseDesign& z, const DenseMatrix& d, double sig2e, bool noise) {
    if (z.cols() != d.rows() || d.rows() != d.cols()) throw DimensionMismatch("marginal_V: Z columns != D size");
    const std::size_t m = z.rows();
    DenseMatrix v(m, m);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b <= a; ++b) {
            double s = 0.0;
            for (const auto& ea : z.row(a))
                for (const auto& eb : z.row(b)) s += ea.value * d(ea.col, eb.col) * eb.value;
            v(a, b) = v(b, a) = s;
        }
    if (noise)
        for (std::size_t i = 0; i < m; ++i) v(i, i) += sig2e;
    return v;
}

DenseMatrix marginal_V(const DenseMatrix& g, const DenseMatrix& d, double sig2e, bool noise) {
    if (g.cols() != d.rows() || d.rows() != d.cols()) throw DimensionMismatch("marginal_V: g(Z) columns != D size");
    DenseMatrix v = matmul_a_bt(matmul(g, d), g);
    for (std::size_t a = 0; a < v.rows(); ++a)
        for (std::size_t b = 0; b < a; ++b) v(a, b) = v(b, a) = 0.5 * (v(a, b) + v(b, a));
    if (noise)
        for (std::size_t i = 0; i < v.rows(); ++i) v(i, i) += sig2e;
    return v;
}

DenseMatrix dV_dtheta(const CovarianceSpec& spec, const VarianceComponents& theta, const BatchDesign& batch,
                      std::size_t index) {
    const BatchKernel kernel(spec, theta, batch);
    if (index >= kernel.theta_size()) throw std::out_of_range("dV_dtheta: parameter index out of range");
    const std::size_t m = kernel.size();
    if (index == 0) {
        DenseMatrix v(m, m);
        for (std::size_t i = 0; i < m; ++i) v(i, i) = theta.sig2e;
        return v;
    }
    return assemble_symmetric(m, [&](std::size_t a, std::size_t b) { return kernel.derivative(index, a, b); }, true);
}

std::vector<DenseMatrix> dV_all(const CovarianceSpec& spec, const VarianceComponents& theta,
                                const BatchDesign& batch) {
    const BatchKernel kernel(spec, theta, batch);
    const std::size_t m = kernel.size();
    std::vector<DenseMatrix> out;
    out.reserve(kernel.theta_size());
    DenseMatrix e(m, m);
    for (std::size_t i = 0; i < m; ++i) e(i, i) = theta.sig2e;
    out.push_back(std::move(e));
    for (std::size_t p = 1; p < kernel.theta_size(); ++p)
        out.push_back(
            assemble_symmetric(m, [&](std::size_t a, std::size_t b) { return kernel.derivative(p, a, b); }, true));
    return out;
}

std::optional<std::vector<std::size_t>> is_block_diagonal(const CovarianceSpec& spec, const REDesignData& data,
                                                          std::span<const std::size_t> rows) {
    const auto lay = layout(spec);
    if (spec.kind == CovKind::Combined || spec.learned_g()) return std::nullopt;
    if (spec.kind == CovKind::SpatialRBF) return std::nullopt;
    if (spec.kind == CovKind::MultipleCategorical && !spec.nested && spec.cardinalities.size() > 1)
        return std::nullopt;
    check_columns(lay, data);

    const auto& primary = data.ids[0];
    if (spec.kind == CovKind::MultipleCategorical) {
        // Every lower-level id must sit under exactly one primary id.
        for (std::size_t c = 1; c < spec.cardinalities.size(); ++c) {
            std::vector<std::size_t> parent(spec.cardinalities[c], SIZE_MAX);
            for (auto r : rows) {
                const std::size_t id = data.ids[c][r];
                if (id >= parent.size()) continue;
                if (parent[id] == SIZE_MAX)
                    parent[id] = primary[r];
                else if (parent[id] != primary[r])
                    return std::nullopt;
            }
        }
    }

    std::vector<std::size_t> sizes;
    std::vector<bool> seen;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t id = primary[rows[i]];
        if (i > 0 && id == primary[rows[i - 1]]) {
            ++sizes.back();
            continue;
        }
        if (id >= seen.size()) seen.resize(id + 1, false);
        if (seen[id]) return std::nullopt;  // level split across runs
        seen[id] = true;
        sizes.push_back(1);
    }
    return sizes;
}

namespace serial {

DenseMatrix marginal_V(const CovarianceSpec& spec, const VarianceComponents& theta, const BatchDesign& batch,
                       bool noise) {
    return marginal_V_impl(spec, theta, batch, noise, false);
}

}  // namespace serial

}  // namespace lmmnn

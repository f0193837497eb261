#pragma once
// Small random covariance instances shared by the unit tests and acceptance.

#include <random>

#include "lmmnn/covariance.hpp"
#include "lmmnn/rng.hpp"

namespace fixture {

using namespace lmmnn;

struct Instance {
    CovarianceSpec spec;
    REDesignData data;
    VarianceComponents theta;
    std::vector<std::size_t> rows;
};

inline std::vector<std::size_t> iota(std::size_t n, std::size_t from = 0) {
    std::vector<std::size_t> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = from + i;
    return r;
}

inline std::vector<std::size_t> random_ids(std::size_t m, std::size_t q, Rng& rng) {
    std::uniform_int_distribution<std::size_t> u(0, q - 1);
    std::vector<std::size_t> ids(m);
    for (auto& i : ids) i = u(rng);
    return ids;
}

inline std::vector<Location> random_locations(std::size_t q, Rng& rng, double half = 2.0) {
    std::uniform_real_distribution<double> u(-half, half);
    std::vector<Location> out(q);
    for (auto& l : out) l = {u(rng), u(rng)};
    return out;
}

inline double pos(Rng& rng) { return std::uniform_real_distribution<double>(0.3, 2.0)(rng); }

// kind 0..4 = random intercepts, multiple categorical, longitudinal, spatial, combined
inline Instance random_instance(int kind, std::size_t m, Rng& rng) {
    Instance in;
    std::uniform_real_distribution<double> ut(0.0, 1.0), ur(-0.4, 0.4);
    switch (kind) {
        case 0: {
            const std::size_t q = 6;
            in.spec = CovarianceSpec::random_intercepts(q);
            in.data.ids = {random_ids(m, q, rng)};
            break;
        }
        case 1: {
            in.spec = CovarianceSpec::multiple_categorical({5, 4, 3});
            in.data.ids = {random_ids(m, 5, rng), random_ids(m, 4, rng), random_ids(m, 3, rng)};
            break;
        }
        case 2: {
            const std::size_t q = 5;
            in.spec = CovarianceSpec::longitudinal(q, 3, {{0, 1}, {0, 2}});
            in.data.ids = {random_ids(m, q, rng)};
            for (std::size_t i = 0; i < m; ++i) in.data.times.push_back(ut(rng));
            break;
        }
        case 3: {
            const std::size_t q = 8;
            in.spec = CovarianceSpec::spatial_rbf(q);
            in.data.ids = {random_ids(m, q, rng)};
            in.data.locations = random_locations(q, rng);
            break;
        }
        default: {
            in.spec = CovarianceSpec::combined({CovarianceSpec::random_intercepts(4),
                                                CovarianceSpec::random_intercepts(3), CovarianceSpec::spatial_rbf(6)});
            in.data.ids = {random_ids(m, 4, rng), random_ids(m, 3, rng), random_ids(m, 6, rng)};
            in.data.locations = random_locations(6, rng);
            break;
        }
    }
    in.theta = VarianceComponents::initial(in.spec);
    in.theta.sig2e = pos(rng);
    for (auto& p : in.theta.psi) p = pos(rng);
    for (auto& r : in.theta.rhos) r = ur(rng);
    in.rows = iota(m);
    return in;
}

inline const char* kind_name(int kind) {
    static const char* names[] = {"random intercepts", "multiple categorical", "longitudinal", "spatial", "combined"};
    return names[kind];
}

}  // namespace fixture

namespace fixture {

// V written out pairwise from the model definition, no Z or D involved.
inline DenseMatrix hand_V(const Instance& in, bool noise = true) {
    const std::size_t m = in.rows.size();
    DenseMatrix v(m, m);
    const auto& th = in.theta;
    auto leaf = [&](const CovarianceSpec& s, std::size_t col, std::size_t psi, std::size_t rho, std::size_t a,
                    std::size_t b) -> double {
        const auto& ids = in.data.ids;
        switch (s.kind) {
            case CovKind::RandomIntercepts: return ids[col][a] == ids[col][b] ? th.psi[psi] : 0.0;
            case CovKind::MultipleCategorical: {
                double x = 0.0;
                for (std::size_t k = 0; k < s.cardinalities.size(); ++k)
                    if (ids[col + k][a] == ids[col + k][b]) x += th.psi[psi + k];
                return x;
            }
            case CovKind::Longitudinal: {
                if (ids[col][a] != ids[col][b]) return 0.0;
                const std::size_t K = s.poly_order;
                double x = 0.0;
                for (std::size_t k = 0; k < K; ++k)
                    for (std::size_t l = 0; l < K; ++l) {
                        double c = 0.0;
                        if (k == l) {
                            c = th.psi[psi + k];
                        } else {
                            for (std::size_t r = 0; r < s.correlated.size(); ++r) {
                                const auto& pr = s.correlated[r];
                                if ((pr.first == k && pr.second == l) || (pr.first == l && pr.second == k))
                                    c = th.rhos[rho + r] * std::sqrt(th.psi[psi + k] * th.psi[psi + l]);
                            }
                        }
                        x += std::pow(in.data.times[a], double(k)) * c * std::pow(in.data.times[b], double(l));
                    }
                return x;
            }
            case CovKind::SpatialRBF: {
                const auto& la = in.data.locations[ids[col][a]];
                const auto& lb = in.data.locations[ids[col][b]];
                const double d2 = (la.x - lb.x) * (la.x - lb.x) + (la.y - lb.y) * (la.y - lb.y);
                return th.psi[psi] * std::exp(-d2 / (2.0 * th.psi[psi + 1]));
            }
            default: return 0.0;
        }
    };
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const std::size_t a = in.rows[i], b = in.rows[j];
            double x = 0.0;
            if (in.spec.kind == CovKind::Combined) {
                std::size_t col = 0, psi = 0;
                for (const auto& c : in.spec.components) {
                    x += leaf(c, col, psi, 0, a, b);
                    col += c.kind == CovKind::MultipleCategorical ? c.cardinalities.size() : 1;
                    psi += c.kind == CovKind::SpatialRBF ? 2
                           : c.kind == CovKind::MultipleCategorical ? c.cardinalities.size()
                           : c.kind == CovKind::Longitudinal        ? c.poly_order
                                                                    : 1;
                }
            } else {
                x = leaf(in.spec, 0, 0, 0, a, b);
            }
            if (noise && i == j) x += th.sig2e;
            v(i, j) = x;
        }
    return v;
}

}  // namespace fixture

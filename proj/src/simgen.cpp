#include "lmmnn/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace lmmnn {

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::SingleCategorical: return "single";
        case Scenario::MultipleCategorical: return "multiple";
        case Scenario::Longitudinal: return "longitudinal";
        case Scenario::Spatial: return "spatial";
        case Scenario::Combined: return "combined";
        case Scenario::GlmmBinary: return "glmm";
    }
    return "unknown";
}

std::string to_string(GTransform g) {
    switch (g) {
        case GTransform::Identity: return "identity";
        case GTransform::LinearW: return "linear";
        case GTransform::NonlinearW: return "nonlinear";
    }
    return "unknown";
}

std::string to_string(SplitMode s) { return s == SplitMode::Future ? "future" : "random"; }

Scenario parse_scenario(const std::string& s) {
    if (s == "single" || s == "single-categorical") return Scenario::SingleCategorical;
    if (s == "multiple" || s == "multiple-categorical") return Scenario::MultipleCategorical;
    if (s == "longitudinal") return Scenario::Longitudinal;
    if (s == "spatial") return Scenario::Spatial;
    if (s == "combined") return Scenario::Combined;
    if (s == "glmm" || s == "glmm-binary") return Scenario::GlmmBinary;
    throw std::invalid_argument("unknown scenario '" + s + "'");
}

GTransform parse_g_transform(const std::string& s) {
    if (s == "identity") return GTransform::Identity;
    if (s == "linear" || s == "linear-W") return GTransform::LinearW;
    if (s == "nonlinear" || s == "nonlinear-W") return GTransform::NonlinearW;
    throw std::invalid_argument("unknown g mode '" + s + "'");
}

SplitMode parse_split_mode(const std::string& s) {
    if (s == "random") return SplitMode::Random;
    if (s == "future") return SplitMode::Future;
    throw std::invalid_argument("unknown split mode '" + s + "'");
}

void SimSpec::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("SimSpec: " + m); };
    if (p < 2) fail("p must be >= 2");
    if (n < 2) fail("n must be >= 2");
    if (!(sig2e >= 0.0)) fail("sig2e must be >= 0");
    for (double s : sig2b)
        if (!(s >= 0.0) || !std::isfinite(s)) fail("variances must be finite and >= 0");
    for (auto qq : q)
        if (qq < 1) fail("q values must be >= 1");
    std::size_t want_q = 1, want_s = 1;
    switch (scenario) {
        case Scenario::SingleCategorical:
        case Scenario::GlmmBinary: break;
        case Scenario::MultipleCategorical:
            want_q = q.size();
            want_s = q.size();
            if (q.empty()) fail("multiple categorical needs at least one q");
            break;
        case Scenario::Longitudinal:
            want_s = 3;
            if (rhos.size() != 2) fail("longitudinal needs rhos {rho01, rho02}");
            for (double r : rhos)
                if (!(std::abs(r) < 1.0)) fail("correlations must be in (-1, 1)");
            break;
        case Scenario::Spatial: want_s = 2; break;
        case Scenario::Combined:
            want_q = 3;
            want_s = 4;
            break;
    }
    if (q.size() != want_q) fail("expected " + std::to_string(want_q) + " q value(s) for " + to_string(scenario));
    if (sig2b.size() != want_s)
        fail("expected " + std::to_string(want_s) + " variance value(s) for " + to_string(scenario));
    if (scenario == Scenario::Spatial && !(sig2b[1] > 0.0)) fail("spatial lengthscale must be > 0");
    if (scenario == Scenario::Combined && !(sig2b[3] > 0.0)) fail("spatial lengthscale must be > 0");
    if (scenario != Scenario::Spatial && scenario != Scenario::Combined)
        for (std::size_t i = 0; i < q.size(); ++i)
            if (n < q[i]) fail("n must be >= q for categorical scenarios");
    if (g != GTransform::Identity) {
        if (scenario != Scenario::SingleCategorical) fail("W transforms are only supported for single categorical");
        if (q[0] / 10 < 1) fail("W transforms need q >= 10 (d = q/10 >= 1)");
    }
    if (split == SplitMode::Future && scenario != Scenario::Longitudinal) fail("future split needs longitudinal data");
}

CovarianceSpec covariance_for(const SimSpec& sim) {
    switch (sim.scenario) {
        case Scenario::SingleCategorical:
        case Scenario::GlmmBinary: return CovarianceSpec::random_intercepts(sim.q[0]);
        case Scenario::MultipleCategorical: return CovarianceSpec::multiple_categorical(sim.q);
        case Scenario::Longitudinal: return CovarianceSpec::longitudinal(sim.q[0], 3, {{0, 1}, {0, 2}});
        case Scenario::Spatial: return CovarianceSpec::spatial_rbf(sim.q[0]);
        case Scenario::Combined:
            return CovarianceSpec::combined({CovarianceSpec::random_intercepts(sim.q[0]),
                                             CovarianceSpec::random_intercepts(sim.q[1]),
                                             CovarianceSpec::spatial_rbf(sim.q[2])});
    }
    throw std::logic_error("covariance_for: bad scenario");
}

Vector f_true(const DenseMatrix& x) {
    if (x.cols() < 2) throw DimensionMismatch("f_true needs at least two columns");
    Vector f(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = x.row(i);
        double s = 0.0;
        for (double v : r) s += v;
        f[i] = s * std::cos(s) + 2.0 * r[0] * r[1];
    }
    return f;
}

std::vector<std::size_t> sample_cluster_sizes(std::size_t n, std::size_t q, std::uint64_t seed, std::uint64_t index) {
    if (q < 1) throw std::invalid_argument("sample_cluster_sizes: q must be >= 1");
    Rng rng = make_stream(seed, "sizes", index);
    std::poisson_distribution<int> pois(30.0);
    std::vector<double> w(q);
    for (int attempt = 0; attempt < 2; ++attempt) {
        double total = 0.0;
        for (auto& x : w) total += (x = pois(rng));
        if (total > 0.0) break;
        if (attempt == 1) throw std::runtime_error("sample_cluster_sizes: all Poisson draws were zero");
    }
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    std::vector<std::size_t> level(n);
    for (auto& l : level) l = pick(rng);
    return level;
}

DenseMatrix sample_w(std::size_t q, std::uint64_t seed) {
    const std::size_t d = q / 10;
    if (d < 1) throw std::invalid_argument("sample_w: d = q/10 must be >= 1");
    Rng rng = make_stream(seed, "W");
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    DenseMatrix w(q, d);
    for (auto& x : w.data()) x = u(rng);
    return w;
}

DenseMatrix apply_g(const SparseDesign& z, GTransform mode, const DenseMatrix& w) {
    if (mode == GTransform::Identity) return z.to_dense();
    if (w.rows() != z.cols()) throw DimensionMismatch("apply_g: W rows != Z columns");
    DenseMatrix g(z.rows(), w.cols());
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (const auto& e : z.row(i)) {
            auto wr = w.row(e.col);
            for (std::size_t j = 0; j < w.cols(); ++j) g(i, j) += e.value * wr[j];
        }
    if (mode == GTransform::NonlinearW)
        for (auto& x : g.data()) x = x * std::cos(x);
    return g;
}

void random_split(std::size_t n, std::uint64_t seed, std::vector<std::size_t>& train, std::vector<std::size_t>& test) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_stream(seed, "split");
    std::shuffle(order.begin(), order.end(), rng);
    const auto nt = static_cast<std::size_t>(std::llround(kTestFraction * static_cast<double>(n)));
    test.assign(order.begin(), order.begin() + static_cast<long>(nt));
    train.assign(order.begin() + static_cast<long>(nt), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
}

namespace {

Vector normals(Rng& rng, std::size_t k, double sd) {
    std::normal_distribution<double> z(0.0, 1.0);
    Vector v(k);
    for (auto& x : v) x = sd * z(rng);
    return v;
}

// Correlated draw b = L z for covariance c (small, PSD up to jitter).
Vector correlated(Rng& rng, DenseMatrix c) {
    for (std::size_t i = 0; i < c.rows(); ++i) c(i, i) += 1e-10;
    const auto f = cholesky(c);
    const auto z = normals(rng, c.rows(), 1.0);
    return matvec(f.lower, z);
}

// Subjects with n_j ~ U{1..M}, M = round(2n/q - 1), nudged until the sizes sum to n.
void longitudinal_design(std::size_t n, std::size_t q, std::uint64_t seed, REDesignData& design) {
    Rng rng = make_stream(seed, "sizes");
    const auto m_max = static_cast<std::size_t>(
        std::max(1.0, std::round(2.0 * static_cast<double>(n) / static_cast<double>(q) - 1.0)));
    std::uniform_int_distribution<std::size_t> size(1, m_max), who(0, q - 1);
    std::vector<std::size_t> nj(q);
    std::size_t total = 0;
    for (auto& s : nj) total += (s = size(rng));
    while (total > n) {
        auto& s = nj[who(rng)];
        if (s > 1) --s, --total;
    }
    while (total < n) {
        auto& s = nj[who(rng)];
        if (s < m_max) ++s, ++total;
    }
    design.ids.assign(1, {});
    design.ids[0].reserve(n);
    design.times.reserve(n);
    for (std::size_t j = 0; j < q; ++j)
        for (std::size_t k = 0; k < nj[j]; ++k) {
            design.ids[0].push_back(j);
            design.times.push_back(m_max > 1 ? static_cast<double>(k) / static_cast<double>(m_max - 1) : 0.0);
        }
}

std::vector<Location> sample_locations(std::size_t q, std::uint64_t seed) {
    Rng rng = make_stream(seed, "locations");
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    std::vector<Location> locs(q);
    for (auto& l : locs) {
        l.x = u(rng);
        l.y = u(rng);
    }
    return locs;
}

}  // namespace

MixedDataset gen(const SimSpec& sim) {
    sim.validate();
    MixedDataset ds;
    ds.scenario = to_string(sim.scenario);
    ds.sim = sim;
    ds.spec = covariance_for(sim);
    ds.binary = sim.scenario == Scenario::GlmmBinary;
    ds.split_mode = to_string(sim.split);
    const std::size_t n = sim.n;

    {
        Rng rng = make_stream(sim.seed, "X");
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        ds.x = DenseMatrix(n, sim.p);
        for (auto& v : ds.x.data()) v = u(rng);
    }

    GroundTruth truth;
    truth.theta.sig2e = ds.binary ? 0.0 : sim.sig2e;
    truth.theta.psi = sim.sig2b;
    if (sim.scenario == Scenario::Longitudinal) truth.theta.rhos = sim.rhos;
    Rng brng = make_stream(sim.seed, "b");

    switch (sim.scenario) {
        case Scenario::SingleCategorical:
        case Scenario::GlmmBinary:
            ds.design.ids = {sample_cluster_sizes(n, sim.q[0], sim.seed)};
            break;
        case Scenario::MultipleCategorical:
            for (std::size_t k = 0; k < sim.q.size(); ++k)
                ds.design.ids.push_back(sample_cluster_sizes(n, sim.q[k], sim.seed, k));
            break;
        case Scenario::Longitudinal: longitudinal_design(n, sim.q[0], sim.seed, ds.design); break;
        case Scenario::Spatial:
            ds.design.locations = sample_locations(sim.q[0], sim.seed);
            ds.design.ids = {sample_cluster_sizes(n, sim.q[0], sim.seed)};
            break;
        case Scenario::Combined:
            ds.design.locations = sample_locations(sim.q[2], sim.seed);
            for (std::size_t k = 0; k < 3; ++k) ds.design.ids.push_back(sample_cluster_sizes(n, sim.q[k], sim.seed, k));
            break;
    }

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    const auto z = build_Z(ds.spec, ds.design, all).z;

    if (sim.g != GTransform::Identity) {
        truth.w = sample_w(sim.q[0], sim.seed);
        truth.b = normals(brng, truth.w.cols(), std::sqrt(sim.sig2b[0]));
        truth.re = matvec(apply_g(z, sim.g, truth.w), truth.b);
    } else {
        switch (sim.scenario) {
            case Scenario::SingleCategorical:
            case Scenario::GlmmBinary:
            case Scenario::MultipleCategorical:
                for (std::size_t k = 0; k < sim.q.size(); ++k) {
                    const auto part = normals(brng, sim.q[k], std::sqrt(sim.sig2b[k]));
                    truth.b.insert(truth.b.end(), part.begin(), part.end());
                }
                break;
            case Scenario::Longitudinal: {
                const std::size_t q = sim.q[0];
                const double s0 = std::sqrt(sim.sig2b[0]), s1 = std::sqrt(sim.sig2b[1]), s2 = std::sqrt(sim.sig2b[2]);
                const DenseMatrix c{{s0 * s0, sim.rhos[0] * s0 * s1, sim.rhos[1] * s0 * s2},
                                    {sim.rhos[0] * s0 * s1, s1 * s1, 0.0},
                                    {sim.rhos[1] * s0 * s2, 0.0, s2 * s2}};
                truth.b.assign(3 * q, 0.0);
                for (std::size_t j = 0; j < q; ++j) {
                    const auto bj = correlated(brng, c);
                    for (std::size_t k = 0; k < 3; ++k) truth.b[k * q + j] = bj[k];
                }
                break;
            }
            case Scenario::Spatial:
                truth.b = sim.sig2b[0] > 0.0
                              ? correlated(brng, rbf_kernel(ds.design.locations, sim.sig2b[0], sim.sig2b[1]))
                              : Vector(sim.q[0], 0.0);
                break;
            case Scenario::Combined: {
                for (std::size_t k = 0; k < 2; ++k) {
                    const auto part = normals(brng, sim.q[k], std::sqrt(sim.sig2b[k]));
                    truth.b.insert(truth.b.end(), part.begin(), part.end());
                }
                const auto part = sim.sig2b[2] > 0.0
                                      ? correlated(brng, rbf_kernel(ds.design.locations, sim.sig2b[2], sim.sig2b[3]))
                                      : Vector(sim.q[2], 0.0);
                truth.b.insert(truth.b.end(), part.begin(), part.end());
                break;
            }
        }
        truth.re = z.times(truth.b);
    }

    truth.f = f_true(ds.x);
    ds.y.resize(n);
    if (ds.binary) {
        Rng rng = make_stream(sim.seed, "bernoulli");
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double p = 1.0 / (1.0 + std::exp(-(truth.f[i] + truth.re[i])));
            ds.y[i] = u(rng) < p ? 1.0 : 0.0;
        }
    } else {
        Rng rng = make_stream(sim.seed, "eps");
        truth.eps = normals(rng, n, std::sqrt(sim.sig2e));
        for (std::size_t i = 0; i < n; ++i) ds.y[i] = truth.f[i] + truth.re[i] + truth.eps[i];
    }

    if (sim.split == SplitMode::Future) {
        std::vector<std::size_t> order = all;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return ds.design.times[a] < ds.design.times[b]; });
        const auto nt = static_cast<std::size_t>(std::llround(kTestFraction * static_cast<double>(n)));
        ds.train_rows.assign(order.begin(), order.end() - static_cast<long>(nt));
        ds.test_rows.assign(order.end() - static_cast<long>(nt), order.end());
        std::sort(ds.train_rows.begin(), ds.train_rows.end());
        std::sort(ds.test_rows.begin(), ds.test_rows.end());
    } else {
        random_split(n, sim.seed, ds.train_rows, ds.test_rows);
    }
    ds.truth = std::move(truth);
    return ds;
}

}  // namespace lmmnn

#pragma once
// Independent reference computations. Nothing here calls the library's
// factorizations, so agreement is a real cross-check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "lmmnn/linalg.hpp"
#include "lmmnn/rng.hpp"

namespace oracle {

using lmmnn::DenseMatrix;
using lmmnn::Vector;

inline DenseMatrix random_matrix(std::size_t r, std::size_t c, lmmnn::Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    DenseMatrix m(r, c);
    for (double& x : m.data()) x = n(rng);
    return m;
}

inline DenseMatrix random_spd(std::size_t n, lmmnn::Rng& rng, double ridge = 0.5) {
    const auto g = random_matrix(n, n, rng);
    DenseMatrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += g(i, k) * g(j, k);
            a(i, j) = s / static_cast<double>(n);
        }
    for (std::size_t i = 0; i < n; ++i) a(i, i) += ridge;
    return a;
}

inline DenseMatrix mul(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

inline Vector mulv(const DenseMatrix& a, const Vector& x) {
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) y[i] += a(i, k) * x[k];
    return y;
}

// Gauss-Jordan with full row pivoting.
inline DenseMatrix gj_inverse(DenseMatrix a) {
    const std::size_t n = a.rows();
    DenseMatrix inv = DenseMatrix::identity(n);
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
        for (std::size_t j = 0; j < n; ++j) {
            std::swap(a(c, j), a(piv, j));
            std::swap(inv(c, j), inv(piv, j));
        }
        const double d = a(c, c);
        for (std::size_t j = 0; j < n; ++j) {
            a(c, j) /= d;
            inv(c, j) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = a(r, c);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                a(r, j) -= f * a(c, j);
                inv(r, j) -= f * inv(c, j);
            }
        }
    }
    return inv;
}

inline double cofactor_det(const DenseMatrix& a) {
    const std::size_t n = a.rows();
    if (n == 1) return a(0, 0);
    double det = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        DenseMatrix minor(n - 1, n - 1);
        for (std::size_t i = 1; i < n; ++i)
            for (std::size_t j = 0, k = 0; j < n; ++j)
                if (j != c) minor(i - 1, k++) = a(i, j);
        det += ((c % 2) ? -1.0 : 1.0) * a(0, c) * cofactor_det(minor);
    }
    return det;
}

// Log-determinant by Gaussian elimination with partial pivoting (SPD input).
inline double ge_logdet(DenseMatrix a) {
    const std::size_t n = a.rows();
    double ld = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
        if (piv != c)
            for (std::size_t j = 0; j < n; ++j) std::swap(a(c, j), a(piv, j));
        ld += std::log(std::abs(a(c, c)));
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a(r, c) / a(c, c);
            for (std::size_t j = c; j < n; ++j) a(r, j) -= f * a(c, j);
        }
    }
    return ld;
}

// Cyclic Jacobi eigenvalues, ascending.
inline Vector jacobi_eigenvalues(DenseMatrix a, double tol = 1e-14) {
    const std::size_t n = a.rows();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off < tol * tol) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
    }
    Vector ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

// Full Gaussian NLL via explicit inverse and elimination log-determinant.
inline double gaussian_nll(const Vector& e, const DenseMatrix& v) {
    const auto inv = gj_inverse(v);
    const auto ve = mulv(inv, e);
    double q = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) q += e[i] * ve[i];
    return 0.5 * q + 0.5 * ge_logdet(v) + 0.5 * static_cast<double>(e.size()) * std::log(2.0 * M_PI);
}

inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-6) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// five-point stencil, O(h^4); less roundoff than the two-point rule at equal accuracy
inline double central_diff5(const std::function<double(double)>& f, double x, double h = 1e-3) {
    return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12.0 * h);
}

// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Composite Simpson over [lo, hi] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double lo, double hi, std::size_t n = 20000) {
    const double h = (hi - lo) / static_cast<double>(n);
    double s = f(lo) + f(hi);
    for (std::size_t i = 1; i < n; ++i) s += f(lo + h * static_cast<double>(i)) * ((i % 2) ? 4.0 : 2.0);
    return s * h / 3.0;
}

// Cluster likelihood of a logistic random intercept, integrated over b ~ N(0, sigma_b^2)
// on a dense grid.
inline double cluster_likelihood(std::span<const double> f, std::span<const double> y, double sigma_b) {
    auto integrand = [&](double b) {
        double l = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double p = sigmoid(f[i] + b);
            l += y[i] > 0.5 ? std::log(p) : std::log1p(-p);
        }
        return std::exp(l - 0.5 * b * b / (sigma_b * sigma_b)) / (std::sqrt(2.0 * M_PI) * sigma_b);
    };
    const double lim = 12.0 * sigma_b;
    return simpson(integrand, -lim, lim);
}

}  // namespace oracle

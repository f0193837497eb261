#include <cmath>

#include "lmmnn/linalg.hpp"

namespace lmmnn::serial {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions differ");
    DenseMatrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t p = 0; p < a.cols(); ++p) {
            const double aip = a(i, p);
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aip * b(p, j);
        }
    return c;
}

DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows() != b.rows()) throw DimensionMismatch("matmul_at_b: row counts differ");
    DenseMatrix c(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.cols(); ++i)
        for (std::size_t p = 0; p < a.rows(); ++p) {
            const double api = a(p, i);
            if (api == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += api * b(p, j);
        }
    return c;
}

DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.cols()) throw DimensionMismatch("matmul_a_bt: column counts differ");
    DenseMatrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(j, p);
            c(i, j) = s;
        }
    return c;
}

bool cholesky_inplace(DenseMatrix& a) {
    const std::size_t n = a.rows();
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
        if (!(d > 0.0) || !std::isfinite(d)) return false;
        const double ljj = std::sqrt(d);
        a(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
            a(i, j) = s / ljj;
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a(i, j) = 0.0;
    return true;
}

DenseMatrix solve(const CholeskyFactor& factor, const DenseMatrix& b) {
    const std::size_t n = factor.dim();
    if (b.rows() != n) throw DimensionMismatch("solve: right-hand side rows != factor dimension");
    const DenseMatrix& l = factor.lower;
    DenseMatrix x = b;
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = x(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
            x(i, c) = s / l(i, i);
        }
        for (std::size_t i = n; i-- > 0;) {
            double s = x(i, c);
            for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x(k, c);
            x(i, c) = s / l(i, i);
        }
    }
    return x;
}

}  // namespace lmmnn::serial

#include "lmmnn/linalg.hpp"

#include <cmath>
#include <exception>
#include <lapacke.h>
#include <numeric>

namespace lmmnn {

namespace {

// Below this many multiply-adds an OpenMP region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

void require(bool cond, const char* what) {
    if (!cond) throw DimensionMismatch(what);
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows * cols, "DenseMatrix: data length != rows * cols");
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        require(r.size() == cols_, "DenseMatrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> diag) {
    DenseMatrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
}

DenseMatrix DenseMatrix::transpose() const {
    DenseMatrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

Vector DenseMatrix::column(std::size_t j) const {
    Vector c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
}

void SparseDesign::add_row(std::span<const Entry> entries) {
    for (const auto& e : entries) {
        if (e.col >= cols_) throw std::out_of_range("SparseDesign: column index out of range");
        entries_.push_back(e);
    }
    offsets_.push_back(entries_.size());
}

DenseMatrix SparseDesign::to_dense() const {
    DenseMatrix d(rows(), cols_);
    for (std::size_t i = 0; i < rows(); ++i)
        for (const auto& e : row(i)) d(i, e.col) += e.value;
    return d;
}

Vector SparseDesign::transpose_times(std::span<const double> v) const {
    require(v.size() == rows(), "SparseDesign::transpose_times: length mismatch");
    Vector out(cols_, 0.0);
    for (std::size_t i = 0; i < rows(); ++i)
        for (const auto& e : row(i)) out[e.col] += e.value * v[i];
    return out;
}

Vector SparseDesign::times(std::span<const double> u) const {
    require(u.size() == cols_, "SparseDesign::times: length mismatch");
    Vector out(rows(), 0.0);
    for (std::size_t i = 0; i < rows(); ++i)
        for (const auto& e : row(i)) out[i] += e.value * u[e.col];
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

bool is_symmetric(const DenseMatrix& a, double tol) {
    if (a.rows() != a.cols()) return false;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < i; ++j) {
            const double x = a(i, j), y = a(j, i);
            if (std::abs(x - y) > tol * std::max(1.0, std::abs(x))) return false;
        }
    return true;
}

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    DenseMatrix c(n, m);
    const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
    for (long i = 0; i < rows; ++i) {
        double* ci = c.row(i).data();
        const double* ai = a.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b.row(p).data();
            for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
    return c;
}

DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.rows() == b.rows(), "matmul_at_b: row counts differ");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    DenseMatrix c(k, m);
    const long outer = static_cast<long>(k);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
    for (long i = 0; i < outer; ++i) {
        double* ci = c.row(i).data();
        for (std::size_t p = 0; p < n; ++p) {
            const double api = a(p, i);
            if (api == 0.0) continue;
            const double* bp = b.row(p).data();
            for (std::size_t j = 0; j < m; ++j) ci[j] += api * bp[j];
        }
    }
    return c;
}

DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.cols() == b.cols(), "matmul_a_bt: column counts differ");
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    DenseMatrix c(n, m);
    const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
    for (long i = 0; i < rows; ++i) {
        const auto ai = a.row(i);
        for (std::size_t j = 0; j < m; ++j) c(i, j) = dot(ai, b.row(j));
    }
    return c;
}

Vector matvec(const DenseMatrix& a, std::span<const double> x) {
    require(a.cols() == x.size(), "matvec: length mismatch");
    Vector y(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
    return y;
}

// ---------------------------------------------------------------------------
// Cholesky
// ---------------------------------------------------------------------------

namespace detail {

bool cholesky_inplace(DenseMatrix& a) {
    const std::size_t n = a.rows();
    for (std::size_t j = 0; j < n; ++j) {
        auto rj = a.row(j);
        double d = rj[j];
        for (std::size_t k = 0; k < j; ++k) d -= rj[k] * rj[k];
        if (!(d > 0.0) || !std::isfinite(d)) return false;
        const double ljj = std::sqrt(d);
        rj[j] = ljj;
        const long first = static_cast<long>(j + 1), last = static_cast<long>(n);
#pragma omp parallel for schedule(static) if ((n - j) * j > kParallelWork)
        for (long i = first; i < last; ++i) {
            double* ri = a.row(i).data();
            double s = ri[j];
            for (std::size_t k = 0; k < j; ++k) s -= ri[k] * rj[k];
            ri[j] = s / ljj;
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a(i, j) = 0.0;
    return true;
}

}  // namespace detail

CholeskyFactor cholesky(const DenseMatrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("cholesky: matrix is not square");
    if (!is_symmetric(a)) throw std::invalid_argument("cholesky: matrix is not symmetric");
    const std::size_t n = a.rows();
    double mean_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean_diag += a(i, i);
    mean_diag = n ? mean_diag / static_cast<double>(n) : 0.0;

    for (double rel : kJitterLadder) {
        const double jitter = rel * mean_diag;
        if (rel > 0.0 && !(jitter > 0.0)) break;
        DenseMatrix work = a;
        for (std::size_t i = 0; i < n; ++i) work(i, i) += jitter;
        if (detail::cholesky_inplace(work)) return CholeskyFactor{std::move(work), jitter};
    }
    throw NotPositiveDefinite("cholesky: matrix not positive definite after jitter ladder");
}

DenseMatrix solve(const CholeskyFactor& factor, const DenseMatrix& b) {
    const std::size_t n = factor.dim();
    if (b.rows() != n) throw DimensionMismatch("solve: right-hand side rows != factor dimension");
    const DenseMatrix& l = factor.lower;
    const DenseMatrix u = l.transpose();
    DenseMatrix xt = b.transpose();  // one right-hand side per row
    const long nrhs = static_cast<long>(b.cols());
#pragma omp parallel for schedule(static) if (n * n * b.cols() > kParallelWork)
    for (long c = 0; c < nrhs; ++c) {
        double* x = xt.row(c).data();
        for (std::size_t i = 0; i < n; ++i) {
            const double* li = l.row(i).data();
            double s = x[i];
            for (std::size_t k = 0; k < i; ++k) s -= li[k] * x[k];
            x[i] = s / li[i];
        }
        for (std::size_t ii = n; ii-- > 0;) {
            const double* ui = u.row(ii).data();
            double s = x[ii];
            for (std::size_t k = ii + 1; k < n; ++k) s -= ui[k] * x[k];
            x[ii] = s / ui[ii];
        }
    }
    return xt.transpose();
}

Vector solve(const CholeskyFactor& factor, std::span<const double> b) {
    DenseMatrix rhs(b.size(), 1, Vector(b.begin(), b.end()));
    return solve(factor, rhs).data();
}

DenseMatrix inverse(const CholeskyFactor& factor) {
    DenseMatrix inv = solve(factor, DenseMatrix::identity(factor.dim()));
    // Symmetrize against round-off in the two triangular sweeps.
    for (std::size_t i = 0; i < inv.rows(); ++i)
        for (std::size_t j = 0; j < i; ++j) {
            const double v = 0.5 * (inv(i, j) + inv(j, i));
            inv(i, j) = inv(j, i) = v;
        }
    return inv;
}

double logdet(const CholeskyFactor& factor) {
    double s = 0.0;
    for (std::size_t i = 0; i < factor.dim(); ++i) s += std::log(factor.lower(i, i));
    return 2.0 * s;
}

Vector block_solve(std::span<const DenseMatrix> blocks, std::span<const double> e) {
    std::vector<std::size_t> offsets(blocks.size() + 1, 0);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].rows() != blocks[b].cols()) throw DimensionMismatch("block_solve: block is not square");
        offsets[b + 1] = offsets[b] + blocks[b].rows();
    }
    if (offsets.back() != e.size()) throw DimensionMismatch("block_solve: block sizes do not sum to rhs length");

    Vector x(e.size());
    const long nb = static_cast<long>(blocks.size());
    std::vector<std::exception_ptr> errors(blocks.size());
#pragma omp parallel for schedule(dynamic) if (nb > 16)
    for (long b = 0; b < nb; ++b) {
        try {
            const auto f = cholesky(blocks[b]);
            const auto xb = solve(f, e.subspan(offsets[b], blocks[b].rows()));
            std::copy(xb.begin(), xb.end(), x.begin() + static_cast<long>(offsets[b]));
        } catch (const NotPositiveDefinite&) {
            errors[b] = std::make_exception_ptr(NotPositiveDefinite(
                "block_solve: block " + std::to_string(b) + " not positive definite", static_cast<std::size_t>(b)));
        } catch (...) {
            errors[b] = std::current_exception();
        }
    }
    for (const auto& err : errors)
        if (err) std::rethrow_exception(err);
    return x;
}

Vector lu_solve(DenseMatrix a, std::span<const double> b) {
    const std::size_t n = a.rows();
    if (a.cols() != n || b.size() != n) throw DimensionMismatch("lu_solve: dimension mismatch");
    Vector x(b.begin(), b.end());
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
        if (a(piv, k) == 0.0) throw std::runtime_error("lu_solve: singular matrix");
        if (piv != k) {
            std::swap_ranges(a.row(k).begin(), a.row(k).end(), a.row(piv).begin());
            std::swap(x[k], x[piv]);
        }
        const double* rk = a.row(k).data();
        const long first = static_cast<long>(k + 1), last = static_cast<long>(n);
#pragma omp parallel for schedule(static) if ((n - k) * (n - k) > kParallelWork)
        for (long i = first; i < last; ++i) {
            double* ri = a.row(i).data();
            const double m = ri[k] / rk[k];
            if (m == 0.0) continue;
            ri[k] = m;
            for (std::size_t j = k + 1; j < n; ++j) ri[j] -= m * rk[j];
            x[i] -= m * x[k];
        }
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = x[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
        x[i] = s / a(i, i);
    }
    return x;
}

Vector symmetric_eigenvalues(const DenseMatrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("symmetric_eigenvalues: matrix is not square");
    const auto n = static_cast<lapack_int>(a.rows());
    Vector w(a.rows());
    if (n == 0) return w;
    std::vector<double> work = a.data();
    const lapack_int info = LAPACKE_dsyevd(LAPACK_ROW_MAJOR, 'N', 'U', n, work.data(), n, w.data());
    if (info != 0) throw std::runtime_error("symmetric_eigenvalues: dsyevd failed, info=" + std::to_string(info));
    return w;
}

}  // namespace lmmnn

#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lmmnn {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

    static DenseMatrix identity(std::size_t n);
    static DenseMatrix diagonal(std::span<const double> diag);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    DenseMatrix transpose() const;
    Vector column(std::size_t j) const;
    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const DenseMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Row-wise (CSR) sparse design matrix.
class SparseDesign {
public:
    struct Entry {
        std::size_t col;
        double value;
    };

    SparseDesign() = default;
    explicit SparseDesign(std::size_t cols) : cols_(cols) { offsets_.push_back(0); }

    void add_row(std::span<const Entry> entries);
    void add_row(std::initializer_list<Entry> entries) { add_row(std::span<const Entry>(entries.begin(), entries.size())); }

    std::size_t rows() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
    std::size_t cols() const noexcept { return cols_; }
    std::span<const Entry> row(std::size_t i) const noexcept {
        return {entries_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
    }

    DenseMatrix to_dense() const;
    // Z' v for v of length rows().
    Vector transpose_times(std::span<const double> v) const;
    // Z u for u of length cols().
    Vector times(std::span<const double> u) const;

private:
    std::size_t cols_ = 0;
    std::vector<std::size_t> offsets_;
    std::vector<Entry> entries_;
};

class NotPositiveDefinite : public std::runtime_error {
public:
    explicit NotPositiveDefinite(const std::string& what, std::optional<std::size_t> block = std::nullopt)
        : std::runtime_error(what), block_index(block) {}
    std::optional<std::size_t> block_index;
};

class DimensionMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct CholeskyFactor {
    DenseMatrix lower;
    double jitter = 0.0;  // total diagonal jitter added before factorizing

    std::size_t dim() const noexcept { return lower.rows(); }
};

// Relative diagonal jitter tried in order before giving up.
inline constexpr double kJitterLadder[] = {0.0, 1e-8, 1e-6, 1e-4};

CholeskyFactor cholesky(const DenseMatrix& a);
DenseMatrix solve(const CholeskyFactor& factor, const DenseMatrix& b);
Vector solve(const CholeskyFactor& factor, std::span<const double> b);
DenseMatrix inverse(const CholeskyFactor& factor);
double logdet(const CholeskyFactor& factor);

// Solves diag(blocks) x = e block by block.
Vector block_solve(std::span<const DenseMatrix> blocks, std::span<const double> e);

// General square solve with partial pivoting (LU).
Vector lu_solve(DenseMatrix a, std::span<const double> b);

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b);  // a' b
DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b);  // a b'
Vector matvec(const DenseMatrix& a, std::span<const double> x);

// Eigenvalues of a symmetric matrix in ascending order (LAPACK dsyevd).
Vector symmetric_eigenvalues(const DenseMatrix& a);

bool is_symmetric(const DenseMatrix& a, double tol = 1e-10);
double dot(std::span<const double> a, std::span<const double> b);

// Serial reference kernels. The public kernels above parallelize the outer
// loop with OpenMP and keep the per-element reduction order of these.
namespace serial {
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b);
// In-place lower Cholesky of a; returns false on a non-positive pivot.
bool cholesky_inplace(DenseMatrix& a);
DenseMatrix solve(const CholeskyFactor& factor, const DenseMatrix& b);
}  // namespace serial

namespace detail {
bool cholesky_inplace(DenseMatrix& a);
}

}  // namespace lmmnn

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "lmmnn/linalg.hpp"

namespace lmmnn {

struct DecayFit {
    double c = 0.0;
    double p = 0.0;
};

struct SpectrumReport {
    Vector eigenvalues;  // descending
    DecayFit fit;
    std::optional<double> max_deviation;  // closed form vs dense, when checked
};

// Level ids per row plus the kernel variance: sigma2 * [same level].
struct CategoricalKernel {
    std::vector<std::size_t> ids;
    double sigma2 = 1.0;

    // Rows assigned to levels in contiguous runs of the given sizes.
    static CategoricalKernel from_sizes(std::span<const std::size_t> sizes, double sigma2);
};

inline constexpr std::size_t kDenseEigenCap = 2000;

// {sigma2 n_j} and n - q zeros, without forming the matrix. The dense check
// (n <= dense_check_max) fills max_deviation.
SpectrumReport categorical_spectrum(std::span<const std::size_t> sizes, double sigma2,
                                    std::size_t dense_check_max = 200);

// Least squares of log lambda_i on log i over 1-based indices [first, last];
// non-positive values in the window are skipped.
DecayFit fit_decay(std::span<const double> eigenvalues, std::size_t first, std::size_t last);
// Window 1..(number of positive eigenvalues).
DecayFit fit_decay(std::span<const double> eigenvalues);

// Dense eigenvalues of sum_l sigma2_l Z_l Z_l' + sig2e I.
SpectrumReport summed_spectrum(std::span<const CategoricalKernel> kernels, double sig2e);

DenseMatrix categorical_kernel_matrix(const CategoricalKernel& k);

}  // namespace lmmnn

#include "lmmnn/eigendecay.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace lmmnn {

CategoricalKernel CategoricalKernel::from_sizes(std::span<const std::size_t> sizes, double sigma2) {
    CategoricalKernel k;
    k.sigma2 = sigma2;
    for (std::size_t j = 0; j < sizes.size(); ++j) k.ids.insert(k.ids.end(), sizes[j], j);
    return k;
}

DenseMatrix categorical_kernel_matrix(const CategoricalKernel& k) {
    const std::size_t n = k.ids.size();
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (k.ids[i] == k.ids[j]) m(i, j) = k.sigma2;
    return m;
}

namespace {

Vector descending(Vector v) {
    std::sort(v.begin(), v.end(), std::greater<>());
    return v;
}

}  // namespace

SpectrumReport categorical_spectrum(std::span<const std::size_t> sizes, double sigma2, std::size_t dense_check_max) {
    SpectrumReport r;
    std::size_t n = 0;
    for (auto s : sizes) {
        if (s == 0) throw std::invalid_argument("categorical_spectrum: level sizes must be positive");
        n += s;
        r.eigenvalues.push_back(sigma2 * static_cast<double>(s));
    }
    r.eigenvalues.resize(n, 0.0);
    r.eigenvalues = descending(std::move(r.eigenvalues));
    std::size_t positive = 0;
    for (double v : r.eigenvalues)
        if (v > 0.0) ++positive;
    if (positive >= 3) r.fit = fit_decay(r.eigenvalues, 1, positive);
    if (n <= dense_check_max) {
        const auto dense = descending(symmetric_eigenvalues(
            categorical_kernel_matrix(CategoricalKernel::from_sizes(sizes, sigma2))));
        double dev = 0.0;
        for (std::size_t i = 0; i < n; ++i) dev = std::max(dev, std::abs(dense[i] - r.eigenvalues[i]));
        r.max_deviation = dev;
    }
    return r;
}

DecayFit fit_decay(std::span<const double> eig, std::size_t first, std::size_t last) {
    if (first < 1 || last > eig.size() || first > last) throw std::invalid_argument("fit_decay: bad window");
    double sx = 0, sy = 0, sxx = 0, sxy = 0, m = 0;
    for (std::size_t i = first; i <= last; ++i) {
        const double v = eig[i - 1];
        if (!(v > 0.0)) continue;
        const double x = std::log(static_cast<double>(i)), y = std::log(v);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        m += 1.0;
    }
    if (m < 3.0) throw std::invalid_argument("fit_decay: fewer than 3 positive eigenvalues in the window");
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    const double icpt = (sy - slope * sx) / m;
    return {std::exp(icpt), -slope};
}

DecayFit fit_decay(std::span<const double> eig) {
    std::size_t positive = 0;
    for (double v : eig)
        if (v > 0.0) ++positive;
    return fit_decay(eig, 1, std::max<std::size_t>(positive, 1));
}

SpectrumReport summed_spectrum(std::span<const CategoricalKernel> kernels, double sig2e) {
    if (kernels.empty()) throw std::invalid_argument("summed_spectrum: no kernels");
    const std::size_t n = kernels[0].ids.size();
    for (const auto& k : kernels)
        if (k.ids.size() != n) throw DimensionMismatch("summed_spectrum: kernels differ in size");
    if (n > kDenseEigenCap)
        throw std::invalid_argument("summed_spectrum: n = " + std::to_string(n) + " exceeds the dense cap of " +
                                    std::to_string(kDenseEigenCap));
    DenseMatrix v(n, n);
    for (const auto& k : kernels)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (k.ids[i] == k.ids[j]) v(i, j) += k.sigma2;
    for (std::size_t i = 0; i < n; ++i) v(i, i) += sig2e;
    SpectrumReport r;
    r.eigenvalues = descending(symmetric_eigenvalues(v));
    // window: the levels of all kernels, i.e. the non-trivial part
    std::size_t levels = 0;
    for (const auto& k : kernels) {
        std::vector<std::size_t> u(k.ids);
        std::sort(u.begin(), u.end());
        levels += static_cast<std::size_t>(std::unique(u.begin(), u.end()) - u.begin());
    }
    std::size_t positive = 0;
    for (double e : r.eigenvalues)
        if (e > 1e-12) ++positive;
    const std::size_t last = std::min({levels, positive, n});
    if (last >= 3) r.fit = fit_decay(r.eigenvalues, 1, last);
    return r;
}

}  // namespace lmmnn

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmmnn/covariance.hpp"
#include "lmmnn/rng.hpp"

namespace lmmnn {

enum class Scenario { SingleCategorical, MultipleCategorical, Longitudinal, Spatial, Combined, GlmmBinary };
enum class GTransform { Identity, LinearW, NonlinearW };
enum class SplitMode { Random, Future };

std::string to_string(Scenario s);
std::string to_string(GTransform g);
std::string to_string(SplitMode s);
Scenario parse_scenario(const std::string& s);
GTransform parse_g_transform(const std::string& s);
SplitMode parse_split_mode(const std::string& s);

inline constexpr double kTestFraction = 0.2;

// Variance layout per scenario:
//   single / glmm: sig2b = {s}
//   multiple: one entry per categorical
//   longitudinal: {s0, s1, s2}; rhos = {rho01, rho02}
//   spatial: {sig2b0 (scale), sig2b1 (lengthscale)}
//   combined: q = {q1, q2, locations}; sig2b = {s1, s2, sig2b0, sig2b1}
struct SimSpec {
    Scenario scenario = Scenario::SingleCategorical;
    std::size_t n = 10000;
    std::size_t p = 10;
    std::vector<std::size_t> q{100};
    double sig2e = 1.0;
    Vector sig2b{1.0};
    Vector rhos{0.3, 0.3};
    GTransform g = GTransform::Identity;
    SplitMode split = SplitMode::Random;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const SimSpec&) const = default;
};

// Covariance structure used to fit a scenario.
CovarianceSpec covariance_for(const SimSpec& sim);

struct GroundTruth {
    VarianceComponents theta;
    Vector b;      // random effects (Z columns, or d for W transforms)
    Vector f;      // f_true(X)
    Vector eps;    // empty for binary data
    Vector re;     // g(Z) b per row
    DenseMatrix w; // W for the W transforms
};

struct MixedDataset {
    std::string scenario = "single";
    DenseMatrix x;
    REDesignData design;
    Vector y;
    CovarianceSpec spec;
    bool binary = false;
    std::vector<std::size_t> train_rows, test_rows;
    std::string split_mode = "random";
    std::optional<SimSpec> sim;
    std::optional<GroundTruth> truth;

    std::size_t rows() const noexcept { return y.size(); }
};

// s cos s + 2 X1 X2, s = row sum over all columns
Vector f_true(const DenseMatrix& x);

// Level of every row; level probabilities are normalized Poisson(30) draws.
// `index` selects the stream when several id columns are drawn from one seed.
std::vector<std::size_t> sample_cluster_sizes(std::size_t n, std::size_t q, std::uint64_t seed, std::uint64_t index = 0);

// identity -> Z; linear -> Z W; nonlinear -> (Z W) .* cos(Z W)
DenseMatrix apply_g(const SparseDesign& z, GTransform mode, const DenseMatrix& w);
DenseMatrix sample_w(std::size_t q, std::uint64_t seed);  // q x floor(q/10), U(-1, 1)

MixedDataset gen(const SimSpec& spec);

// Random split of n rows with the fixed test fraction.
void random_split(std::size_t n, std::uint64_t seed, std::vector<std::size_t>& train, std::vector<std::size_t>& test);

}  // namespace lmmnn

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmmnn/linalg.hpp"

namespace lmmnn {

enum class CovKind { RandomIntercepts, MultipleCategorical, Longitudinal, SpatialRBF, Combined };
enum class GMode { Identity, LearnedEmbedding };

struct CorrelatedPair {
    std::size_t first = 0;
    std::size_t second = 0;
    bool operator==(const CorrelatedPair&) const = default;
};

// Declarative random-effects structure. Build with the named factories.
struct CovarianceSpec {
    CovKind kind = CovKind::RandomIntercepts;
    std::vector<std::size_t> cardinalities;  // q, or q_1..q_K for multiple categorical
    bool nested = false;
    std::size_t poly_order = 1;              // longitudinal K: terms t^0..t^{K-1}
    std::vector<CorrelatedPair> correlated;  // longitudinal term pairs with a free rho
    std::vector<CovarianceSpec> components;  // Combined only
    GMode g_mode = GMode::Identity;
    std::size_t g_dim = 0;

    static CovarianceSpec random_intercepts(std::size_t q);
    static CovarianceSpec multiple_categorical(std::vector<std::size_t> qs, bool nested = false);
    static CovarianceSpec longitudinal(std::size_t q, std::size_t order, std::vector<CorrelatedPair> pairs = {});
    static CovarianceSpec spatial_rbf(std::size_t q);
    static CovarianceSpec combined(std::vector<CovarianceSpec> parts);

    // g(Z) learned by a network with `dim` outputs; D becomes sig2b * I_dim.
    // Valid for random intercepts (embedding table) and spatial (MLP on locations).
    CovarianceSpec with_learned_embedding(std::size_t dim) const;

    bool learned_g() const noexcept { return g_mode == GMode::LearnedEmbedding; }
    void validate() const;
    bool operator==(const CovarianceSpec&) const = default;
};

std::string to_string(CovKind kind);

// Where one leaf term lives in the data columns, theta vector and Z columns.
struct TermLayout {
    const CovarianceSpec* term = nullptr;
    std::size_t id_column = 0;
    std::size_t psi_offset = 0, psi_count = 0;
    std::size_t rho_offset = 0, rho_count = 0;
    std::size_t z_offset = 0, z_cols = 0;
};

struct SpecLayout {
    std::vector<TermLayout> terms;
    std::size_t id_columns = 0;
    std::size_t psi_count = 0;
    std::size_t rho_count = 0;
    std::size_t z_cols = 0;
    std::size_t theta_size() const noexcept { return 1 + psi_count + rho_count; }
};

// The returned layout points into `spec`; keep `spec` alive.
SpecLayout layout(const CovarianceSpec& spec);

// Names of the theta entries in canonical order: sig2e, psi..., rhos...
std::vector<std::string> theta_names(const CovarianceSpec& spec);

// theta = [sig2e, psi, rhos]. The optimizer sees [log sig2e, log psi, atanh rhos].
struct VarianceComponents {
    double sig2e = 1.0;
    Vector psi;
    Vector rhos;

    static VarianceComponents initial(const CovarianceSpec& spec);
    static VarianceComponents from_unconstrained(const CovarianceSpec& spec, std::span<const double> u);
    Vector unconstrained() const;
    Vector constrained() const;
    std::size_t size() const noexcept { return 1 + psi.size() + rhos.size(); }
    void check(const CovarianceSpec& spec) const;
};

struct Location {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Location&) const = default;
};

// Per-observation information Z is generated from. ids[c][i] is the level of
// row i in id column c; ids >= the declared cardinality mark unseen levels.
struct REDesignData {
    std::vector<std::vector<std::size_t>> ids;
    Vector times;
    std::vector<Location> locations;  // level table for the spatial term

    std::size_t rows() const noexcept;
    REDesignData subset(std::span<const std::size_t> rows) const;
};

struct DesignMatrix {
    SparseDesign z;
    std::vector<std::size_t> unknown_rows;  // rows (batch positions) with an unseen level
};

// Z for the given rows (identity g). Unknown levels throw unless allow_unknown,
// in which case the row's term entries are left empty and the row is flagged.
DesignMatrix build_Z(const CovarianceSpec& spec, const REDesignData& data, std::span<const std::size_t> rows,
                     bool allow_unknown = false);

DenseMatrix rbf_kernel(std::span<const Location> locations, double sig2b0, double sig2b1);

// Dense D(psi) over all Z columns (learned g: sig2b * I_dim).
DenseMatrix build_D(const CovarianceSpec& spec, const VarianceComponents& theta, const REDesignData& data);
// D u without materializing D for the diagonal and block-structured terms.
Vector apply_D(const CovarianceSpec& spec, const VarianceComponents& theta, const REDesignData& data,
               std::span<const double> u);

// Rows of a mini-batch. learned_g holds g(Z) outputs for these rows when the
// spec learns g.
struct BatchDesign {
    const REDesignData& data;
    std::span<const std::size_t> rows;
    const DenseMatrix* learned_g = nullptr;
};

// V = g(Z) D g(Z)' (+ sig2e I), assembled pairwise without forming Z.
DenseMatrix marginal_V(const CovarianceSpec& spec, const VarianceComponents& theta, const BatchDesign& batch,
                       bool noise = true);
// Direct products, used as oracles and for arbitrary designs.
DenseMatrix marginal_V(const SparseDesign& z, const DenseMatrix& d, double sig2e, bool noise = true);
DenseMatrix marginal_V(const DenseMatrix& g, const DenseMatrix& d, double sig2e, bool noise = true);

// dV / d(unconstrained theta[index]).
DenseMatrix dV_dtheta(const CovarianceSpec& spec, const VarianceComponents& theta, const BatchDesign& batch,
                      std::size_t index);
std::vector<DenseMatrix> dV_all(const CovarianceSpec& spec, const VarianceComponents& theta,
                                const BatchDesign& batch);

// Block sizes of V when rows are grouped by the primary id in contiguous runs
// and the structure is block-diagonal; nullopt otherwise.
std::optional<std::vector<std::size_t>> is_block_diagonal(const CovarianceSpec& spec, const REDesignData& data,
                                                          std::span<const std::size_t> rows);

namespace serial {
DenseMatrix marginal_V(const CovarianceSpec& spec, const VarianceComponents& theta, const BatchDesign& batch,
                       bool noise = true);
}

}  // namespace lmmnn

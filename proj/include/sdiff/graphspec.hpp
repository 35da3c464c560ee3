#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "sdiff/common.hpp"
#include "sdiff/dataio.hpp"

namespace sdiff {

/// X~ = D_U^{-1/2} X D_I^{-1/2} in user-major sparse form. Zero-degree rows
/// and columns stay zero.
class NormalizedBipartite {
public:
    using Sparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;

    explicit NormalizedBipartite(Sparse matrix) : matrix_(std::move(matrix)) {}

    std::size_t n_users() const noexcept { return static_cast<std::size_t>(matrix_.rows()); }
    std::size_t n_items() const noexcept { return static_cast<std::size_t>(matrix_.cols()); }
    const Sparse& matrix() const noexcept { return matrix_; }

private:
    Sparse matrix_;
};

NormalizedBipartite build_normalized_bipartite(const InteractionMatrix& m);

/// A v = X~^T (X~ v), never forming the item x item gram.
Eigen::VectorXd apply_item_gram(const NormalizedBipartite& b, const Eigen::VectorXd& v);

/// Dense A = X~^T X~. Guarded to small instances; used by oracles and tests.
Eigen::MatrixXd dense_item_gram(const NormalizedBipartite& b);

inline constexpr std::size_t kDenseItemLimit = 512;

/// Symmetric linear operator y = A x of dimension `dim`.
struct SymmetricOperator {
    std::size_t dim = 0;
    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> apply;
};

SymmetricOperator item_gram_operator(const NormalizedBipartite& b);

/// Truncated eigenbasis of the item graph: columns of U are eigenvectors of
/// A, d = 1 - mu are the matching Laplacian frequencies, ascending.
struct SpectralBasis {
    Eigen::MatrixXd U;
    Eigen::VectorXd d;
    Eigen::VectorXd residuals;
    std::uint64_t matrix_hash = 0;
    std::uint64_t seed = 0;

    std::size_t rank() const noexcept { return static_cast<std::size_t>(U.cols()); }
    std::size_t n_items() const noexcept { return static_cast<std::size_t>(U.rows()); }
};

struct LanczosOptions {
    std::size_t rank = 200;
    /// Base restart count; the solver gives up after 5x this many restarts.
    std::size_t iterations = 10;
    double tol = 1e-8;
    std::uint64_t seed = 0;
    /// Krylov subspace size per cycle; 0 picks max(2K+1, K+32) capped at dim.
    std::size_t krylov_dim = 0;
};

struct LanczosReport {
    std::size_t restarts = 0;
    std::size_t matvecs = 0;
    double max_residual = 0.0;
};

/// Largest `rank` eigenpairs of a symmetric PSD operator by thick-restart
/// Lanczos with full (twice-applied) Gram-Schmidt reorthogonalization.
/// Deterministic for a fixed seed. Throws Error("not_converged") with the
/// achieved residual when the restart budget runs out.
SpectralBasis truncated_eigendecomposition(const SymmetricOperator& op, const LanczosOptions& options,
                                           LanczosReport* report = nullptr);

/// Convenience: normalized graph of `m`, then the truncated basis, stamped
/// with `m.content_hash()`.
SpectralBasis build_spectral_basis(const InteractionMatrix& m, const LanczosOptions& options,
                                   LanczosReport* report = nullptr);

Eigen::VectorXd gft(const SpectralBasis& b, const Eigen::VectorXd& x);
Eigen::VectorXd igft(const SpectralBasis& b, const Eigen::VectorXd& v);

/// U^T x for a binary x given by its support (sum of the matching rows of U).
Eigen::VectorXd gft_support(const SpectralBasis& b, std::span<const ItemIndex> support);

/// e^{-L t} x by dense eigendecomposition of L = I - A. Small instances only.
Eigen::VectorXd heat_kernel_reference(const NormalizedBipartite& b, double t, const Eigen::VectorXd& x);

void save_basis(const std::filesystem::path& path, const SpectralBasis& basis);
SpectralBasis load_basis(const std::filesystem::path& path);

}  // namespace sdiff

#include "sdiff/graphspec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "sdiff/binio.hpp"
#include "sdiff/rng.hpp"

namespace sdiff {

namespace {

constexpr std::string_view kBasisMagic = "SDIFFBAS";
constexpr std::uint32_t kBasisVersion = 1;

double inv_sqrt_or_zero(double degree) { return degree > 0.0 ? 1.0 / std::sqrt(degree) : 0.0; }

Eigen::VectorXd random_unit(std::size_t n, Rng& rng) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    v.normalize();
    return v;
}

// Two passes of classical Gram-Schmidt against the first `cols` columns of V.
// Returns the accumulated projection coefficients.
Eigen::VectorXd reorthogonalize(const Eigen::MatrixXd& V, Eigen::Index cols, Eigen::VectorXd& w) {
    Eigen::VectorXd coeffs = Eigen::VectorXd::Zero(cols);
    if (cols == 0) return coeffs;
    for (int pass = 0; pass < 2; ++pass) {
        const Eigen::VectorXd h = V.leftCols(cols).transpose() * w;
        w.noalias() -= V.leftCols(cols) * h;
        coeffs += h;
    }
    return coeffs;
}

}  // namespace

NormalizedBipartite build_normalized_bipartite(const InteractionMatrix& m) {
    require(m.n_users() > 0 && m.n_items() > 0, "invalid_argument", "empty interaction matrix");
    const auto& du = m.user_degrees();
    const auto& di = m.item_degrees();

    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(m.n_interactions());
    for (std::size_t u = 0; u < m.n_users(); ++u) {
        const double su = inv_sqrt_or_zero(du[u]);
        for (const auto i : m.row(static_cast<UserIndex>(u))) {
            entries.emplace_back(static_cast<int>(u), static_cast<int>(i), su * inv_sqrt_or_zero(di[i]));
        }
    }
    NormalizedBipartite::Sparse x(static_cast<Eigen::Index>(m.n_users()), static_cast<Eigen::Index>(m.n_items()));
    x.setFromTriplets(entries.begin(), entries.end());
    x.makeCompressed();
    return NormalizedBipartite(std::move(x));
}

Eigen::VectorXd apply_item_gram(const NormalizedBipartite& b, const Eigen::VectorXd& v) {
    require(static_cast<std::size_t>(v.size()) == b.n_items(), "dimension_mismatch",
            "apply_item_gram: vector has " + std::to_string(v.size()) + " entries, expected " +
                std::to_string(b.n_items()));
    const Eigen::VectorXd xv = b.matrix() * v;
    return b.matrix().transpose() * xv;
}

Eigen::MatrixXd dense_item_gram(const NormalizedBipartite& b) {
    require(b.n_items() <= kDenseItemLimit, "too_large",
            "dense gram limited to " + std::to_string(kDenseItemLimit) + " items");
    const Eigen::MatrixXd x = Eigen::MatrixXd(b.matrix());
    return x.transpose() * x;
}

SymmetricOperator item_gram_operator(const NormalizedBipartite& b) {
    return SymmetricOperator{b.n_items(), [&b](const Eigen::VectorXd& in, Eigen::VectorXd& out) {
                                 const Eigen::VectorXd xv = b.matrix() * in;
                                 out.noalias() = b.matrix().transpose() * xv;
                             }};
}

SpectralBasis truncated_eigendecomposition(const SymmetricOperator& op, const LanczosOptions& options,
                                           LanczosReport* report) {
    const auto n = static_cast<Eigen::Index>(op.dim);
    const auto k = static_cast<Eigen::Index>(options.rank);
    require(k >= 1, "invalid_argument", "eigenbasis rank must be at least 1");
    require(k <= n, "invalid_argument",
            "eigenbasis rank " + std::to_string(k) + " exceeds operator dimension " + std::to_string(n));
    require(options.tol > 0.0, "invalid_argument", "residual tolerance must be positive");

    Eigen::Index ncv = options.krylov_dim > 0 ? static_cast<Eigen::Index>(options.krylov_dim)
                                              : std::max<Eigen::Index>(2 * k + 1, k + 32);
    ncv = std::min(std::max(ncv, k + 1), n);
    const std::size_t max_restarts = 5 * std::max<std::size_t>(options.iterations, 1);

    Rng rng(options.seed);
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(n, ncv + 1);
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(ncv, ncv);
    V.col(0) = random_unit(op.dim, rng);

    Eigen::VectorXd w(n);
    Eigen::Index start = 0;
    double last_beta = 0.0;
    std::size_t matvecs = 0;
    std::size_t restarts = 0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz;

    while (true) {
        for (Eigen::Index j = start; j < ncv; ++j) {
            op.apply(V.col(j), w);
            ++matvecs;
            const Eigen::VectorXd h = reorthogonalize(V, j + 1, w);
            T.col(j).head(j + 1) = h;
            T.row(j).head(j + 1) = h.transpose();

            double beta = w.norm();
            if (j + 1 == n) {
                // Krylov space exhausted; w is roundoff.
                V.col(j + 1).setZero();
            } else if (beta <= 1e-12 * std::max(1.0, std::abs(T(j, j)))) {
                // Invariant subspace reached: continue from a fresh direction.
                Eigen::VectorXd r = random_unit(op.dim, rng);
                reorthogonalize(V, j + 1, r);
                V.col(j + 1) = r.normalized();
                beta = 0.0;
            } else {
                V.col(j + 1) = w / beta;
            }
            if (j + 1 < ncv) {
                T(j + 1, j) = beta;
                T(j, j + 1) = beta;
            }
            last_beta = beta;
        }

        ritz.compute(T);
        const Eigen::VectorXd& theta = ritz.eigenvalues();  // ascending
        const Eigen::MatrixXd& Y = ritz.eigenvectors();

        bool converged = true;
        for (Eigen::Index i = ncv - k; i < ncv; ++i) {
            const double estimate = std::abs(last_beta * Y(ncv - 1, i));
            if (estimate > options.tol * std::max(1.0, std::abs(theta[i]))) {
                converged = false;
                break;
            }
        }
        if (converged || restarts >= max_restarts) break;

        // Thick restart: keep the largest `keep` Ritz vectors plus the residual direction.
        const Eigen::Index keep = std::min<Eigen::Index>(k + (ncv - k) / 2, ncv - 1);
        const Eigen::MatrixXd kept = V.leftCols(ncv) * Y.rightCols(keep);
        const Eigen::VectorXd residual_dir = V.col(ncv);
        V.leftCols(keep) = kept;
        V.col(keep) = residual_dir;
        T.setZero();
        for (Eigen::Index i = 0; i < keep; ++i) T(i, i) = theta[ncv - keep + i];
        start = keep;
        ++restarts;
    }

    const Eigen::VectorXd& theta = ritz.eigenvalues();
    const Eigen::MatrixXd& Y = ritz.eigenvectors();

    SpectralBasis basis;
    basis.seed = options.seed;
    basis.U.resize(n, k);
    basis.d.resize(k);
    basis.residuals.resize(k);
    // Descending mu == ascending frequency.
    const Eigen::MatrixXd top = V.leftCols(ncv) * Y.rightCols(k);
    double worst = 0.0;
    double worst_scaled = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::Index src = k - 1 - c;
        const double mu = theta[ncv - k + src];
        basis.U.col(c) = top.col(src);
        // Sign convention: largest-magnitude entry positive.
        Eigen::Index peak = 0;
        basis.U.col(c).cwiseAbs().maxCoeff(&peak);
        if (basis.U(peak, c) < 0.0) basis.U.col(c) *= -1.0;
        double freq = 1.0 - mu;
        if (freq < 0.0 && freq > -1e-10) freq = 0.0;
        basis.d[c] = freq;

        op.apply(basis.U.col(c), w);
        ++matvecs;
        w -= mu * basis.U.col(c);
        basis.residuals[c] = w.norm();
        worst = std::max(worst, basis.residuals[c]);
        worst_scaled = std::max(worst_scaled, basis.residuals[c] / std::max(1.0, std::abs(mu)));
    }

    if (report) *report = LanczosReport{restarts, matvecs, worst};
    if (worst_scaled > options.tol) {
        std::ostringstream msg;
        msg << "Lanczos did not converge after " << restarts << " restarts: max residual " << worst
            << " > tol " << options.tol;
        throw Error("not_converged", msg.str());
    }
    return basis;
}

SpectralBasis build_spectral_basis(const InteractionMatrix& m, const LanczosOptions& options, LanczosReport* report) {
    const auto graph = build_normalized_bipartite(m);
    auto basis = truncated_eigendecomposition(item_gram_operator(graph), options, report);
    basis.matrix_hash = m.content_hash();
    return basis;
}

Eigen::VectorXd gft(const SpectralBasis& b, const Eigen::VectorXd& x) {
    require(static_cast<std::size_t>(x.size()) == b.n_items(), "dimension_mismatch",
            "gft: signal has " + std::to_string(x.size()) + " entries, basis has " + std::to_string(b.n_items()));
    return b.U.transpose() * x;
}

Eigen::VectorXd igft(const SpectralBasis& b, const Eigen::VectorXd& v) {
    require(static_cast<std::size_t>(v.size()) == b.rank(), "dimension_mismatch",
            "igft: spectrum has " + std::to_string(v.size()) + " entries, basis rank is " + std::to_string(b.rank()));
    return b.U * v;
}

Eigen::VectorXd gft_support(const SpectralBasis& b, std::span<const ItemIndex> support) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(b.rank()));
    for (const auto i : support) {
        require(i < b.n_items(), "dimension_mismatch", "gft_support: item index out of range");
        v += b.U.row(i).transpose();
    }
    return v;
}

Eigen::VectorXd heat_kernel_reference(const NormalizedBipartite& b, double t, const Eigen::VectorXd& x) {
    require(static_cast<std::size_t>(x.size()) == b.n_items(), "dimension_mismatch",
            "heat_kernel_reference: signal size does not match item count");
    const Eigen::MatrixXd a = dense_item_gram(b);
    const Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(a.rows(), a.cols()) - a;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lap);
    const Eigen::VectorXd decay = (-t * eig.eigenvalues().array()).exp();
    return eig.eigenvectors() * (decay.asDiagonal() * (eig.eigenvectors().transpose() * x));
}

void save_basis(const std::filesystem::path& path, const SpectralBasis& basis) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "io_error", "cannot write basis file '" + path.string() + "'");
    binio::put_magic(out, kBasisMagic);
    binio::put_u32(out, kBasisVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(basis.rank()));
    binio::put_u64(out, basis.n_items());
    binio::put_u64(out, basis.matrix_hash);
    binio::put_u64(out, basis.seed);
    for (Eigen::Index i = 0; i < basis.d.size(); ++i) binio::put_f64(out, basis.d[i]);
    for (Eigen::Index c = 0; c < basis.U.cols(); ++c) {
        for (Eigen::Index r = 0; r < basis.U.rows(); ++r) binio::put_f32(out, static_cast<float>(basis.U(r, c)));
    }
    for (Eigen::Index i = 0; i < basis.residuals.size(); ++i) binio::put_f64(out, basis.residuals[i]);
    require(out.good(), "io_error", "failed writing basis file '" + path.string() + "'");
}

SpectralBasis load_basis(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "io_error", "cannot read basis file '" + path.string() + "'");
    binio::expect_magic(in, kBasisMagic, path.string());
    const auto version = binio::get_u32(in);
    require(version == kBasisVersion, "bad_artifact", "unsupported basis format version " + std::to_string(version));
    const auto k = static_cast<Eigen::Index>(binio::get_u32(in));
    const auto n = static_cast<Eigen::Index>(binio::get_u64(in));
    SpectralBasis basis;
    basis.matrix_hash = binio::get_u64(in);
    basis.seed = binio::get_u64(in);
    basis.d.resize(k);
    basis.U.resize(n, k);
    basis.residuals.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) basis.d[i] = binio::get_f64(in);
    for (Eigen::Index c = 0; c < k; ++c) {
        for (Eigen::Index r = 0; r < n; ++r) basis.U(r, c) = binio::get_f32(in);
    }
    for (Eigen::Index i = 0; i < k; ++i) basis.residuals[i] = binio::get_f64(in);
    return basis;
}

}  // namespace sdiff

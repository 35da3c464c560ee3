#include <filesystem>
#include <fstream>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "sdiff/graphspec.hpp"
#include "support.hpp"

using namespace sdiff;

namespace {

LanczosOptions full_rank(std::size_t n, std::uint64_t seed = 1) {
    LanczosOptions o;
    o.rank = n;
    o.seed = seed;
    return o;
}

}  // namespace

TEST_CASE("normalized bipartite on a 2x2 example") {
    const InteractionMatrix m({{0, 1}, {1}}, 2);
    const Eigen::MatrixXd x = Eigen::MatrixXd(build_normalized_bipartite(m).matrix());
    CHECK(x(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(x(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(x(1, 0) == 0.0);
    CHECK(x(1, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("identity interactions give the identity") {
    const InteractionMatrix m({{0}, {1}, {2}}, 3);
    const Eigen::MatrixXd x = Eigen::MatrixXd(build_normalized_bipartite(m).matrix());
    CHECK((x - Eigen::MatrixXd::Identity(3, 3)).norm() == 0.0);
    const auto b = build_normalized_bipartite(m);
    const Eigen::Vector3d v(0.3, -2.0, 5.0);
    CHECK((apply_item_gram(b, v) - v).norm() == 0.0);
}

TEST_CASE("zero-degree item has an empty column") {
    const InteractionMatrix m({{0, 2}, {2}}, 4);
    const Eigen::MatrixXd x = Eigen::MatrixXd(build_normalized_bipartite(m).matrix());
    CHECK(x.col(1).norm() == 0.0);
    CHECK(x.col(3).norm() == 0.0);
    CHECK(x.allFinite());
}

TEST_CASE("matrix-free gram matches the dense oracle") {
    for (unsigned seed : {1u, 2u, 3u}) {
        const auto m = testing::random_graph(20, 3 + seed * 20, 0.25, seed);
        const auto b = build_normalized_bipartite(m);
        const Eigen::MatrixXd a = testing::dense_gram(m);
        CHECK((dense_item_gram(b) - a).lpNorm<Eigen::Infinity>() <= 1e-12);
        const Eigen::VectorXd v = Eigen::VectorXd::Random(a.rows());
        CHECK((apply_item_gram(b, v) - a * v).lpNorm<Eigen::Infinity>() <= 1e-12);
        CHECK(apply_item_gram(b, Eigen::VectorXd::Zero(a.rows())).norm() == 0.0);
    }
}

TEST_CASE("gram guards") {
    const auto m = testing::random_graph(5, 600, 0.01, 9);
    const auto b = build_normalized_bipartite(m);
    CHECK_THROWS_AS(dense_item_gram(b), Error);
    CHECK_THROWS_AS(apply_item_gram(b, Eigen::VectorXd::Zero(3)), Error);
}

TEST_CASE("full-rank eigenpairs match a dense eigensolve") {
    const auto m = testing::random_graph(12, 4, 0.5, 4);
    const auto basis = build_spectral_basis(m, full_rank(4));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(testing::dense_gram(m));
    // Dense eigenvalues ascend in mu, so descending d; the basis has d ascending.
    for (int i = 0; i < 4; ++i) {
        const double mu = eig.eigenvalues()[3 - i];
        CHECK(std::abs((1.0 - basis.d[i]) - mu) <= 1e-8);
    }
    CHECK(basis.residuals.maxCoeff() <= 1e-8);
}

TEST_CASE("truncated eigenpairs on a mid-sized graph") {
    const auto m = testing::random_graph(200, 120, 0.05, 6);
    LanczosOptions o;
    o.rank = 30;
    o.seed = 3;
    LanczosReport report;
    const auto basis = build_spectral_basis(m, o, &report);
    const Eigen::MatrixXd a = testing::dense_gram(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    const auto n = a.rows();
    for (int i = 0; i < 30; ++i) {
        CHECK(std::abs((1.0 - basis.d[i]) - eig.eigenvalues()[n - 1 - i]) <= 1e-8);
        const double mu = 1.0 - basis.d[i];
        const double res = (a * basis.U.col(i) - mu * basis.U.col(i)).norm();
        CHECK(res <= 1e-8 * std::max(1.0, std::abs(mu)));
    }
    const Eigen::MatrixXd gram = basis.U.transpose() * basis.U;
    CHECK((gram - Eigen::MatrixXd::Identity(30, 30)).lpNorm<Eigen::Infinity>() <= 1e-10);
    for (int i = 1; i < 30; ++i) CHECK(basis.d[i] >= basis.d[i - 1]);
    CHECK(basis.d.minCoeff() >= 0.0);
    CHECK(basis.d.maxCoeff() <= 1.0 + 1e-8);
    CHECK(report.matvecs > 0);
}

TEST_CASE("identity graph: all frequencies zero") {
    const InteractionMatrix m({{0}, {1}, {2}, {3}, {4}}, 5);
    const auto basis = build_spectral_basis(m, full_rank(5));
    CHECK(basis.d.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("eigensolver is deterministic and validates its input") {
    const auto m = testing::random_graph(50, 40, 0.1, 8);
    LanczosOptions o;
    o.rank = 10;
    o.seed = 5;
    const auto a = build_spectral_basis(m, o);
    const auto b = build_spectral_basis(m, o);
    CHECK(a.U == b.U);
    CHECK(a.d == b.d);
    o.rank = 41;
    CHECK_THROWS_AS(build_spectral_basis(m, o), Error);
}

TEST_CASE("eigensolver reports non-convergence") {
    const auto m = testing::random_graph(200, 150, 0.05, 12);
    LanczosOptions o;
    o.rank = 40;
    o.iterations = 1;
    o.krylov_dim = 41;
    o.tol = 1e-15;
    try {
        build_spectral_basis(m, o);
        FAIL("expected non-convergence");
    } catch (const Error& e) {
        CHECK(e.code() == "not_converged");
    }
}

TEST_CASE("gft and igft") {
    const auto m = testing::random_graph(30, 16, 0.3, 10);
    const auto full = build_spectral_basis(m, full_rank(16));
    const Eigen::VectorXd x = Eigen::VectorXd::Random(16);
    CHECK((igft(full, gft(full, x)) - x).lpNorm<Eigen::Infinity>() <= 1e-10);

    const Eigen::VectorXd e3 = gft(full, full.U.col(3));
    Eigen::VectorXd unit = Eigen::VectorXd::Zero(16);
    unit[3] = 1.0;
    CHECK((e3 - unit).lpNorm<Eigen::Infinity>() <= 1e-10);

    LanczosOptions o;
    o.rank = 5;
    const auto part = build_spectral_basis(m, o);
    CHECK(igft(part, gft(part, x)).norm() <= x.norm() + 1e-12);

    const std::vector<ItemIndex> support{1, 4, 7};
    Eigen::VectorXd dense = Eigen::VectorXd::Zero(16);
    for (const auto i : support) dense[i] = 1.0;
    CHECK((gft_support(full, support) - gft(full, dense)).norm() <= 1e-12);
    CHECK_THROWS_AS(gft(full, Eigen::VectorXd::Zero(3)), Error);
    CHECK_THROWS_AS(igft(part, Eigen::VectorXd::Zero(16)), Error);
}

TEST_CASE("heat kernel reference") {
    const auto m = testing::random_graph(10, 4, 0.6, 21);
    const auto b = build_normalized_bipartite(m);
    const Eigen::VectorXd x = Eigen::Vector4d(1.0, -0.5, 0.25, 2.0);
    CHECK((heat_kernel_reference(b, 0.0, x) - x).norm() <= 1e-12);

    const Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(4, 4) - testing::dense_gram(m);
    CHECK((heat_kernel_reference(b, 1.0, x) - testing::taylor_heat(lap, 1.0, x)).lpNorm<Eigen::Infinity>() <= 1e-10);

    const auto basis = build_spectral_basis(m, full_rank(4));
    const Eigen::VectorXd lambda = (-1.0 * basis.d).array().exp();
    const Eigen::VectorXd spectral = igft(basis, lambda.cwiseProduct(gft(basis, x)));
    CHECK((heat_kernel_reference(b, 1.0, x) - spectral).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("heat kernel decays to the zero-frequency projection") {
    // One user holding every item: A has a single unit eigenvalue.
    const InteractionMatrix m({{0, 1, 2}, {0, 1, 2}}, 3);
    const auto b = build_normalized_bipartite(m);
    const Eigen::Vector3d x(3.0, 0.0, 0.0);
    const Eigen::Vector3d mean = Eigen::Vector3d::Constant(1.0);
    CHECK((heat_kernel_reference(b, 60.0, x) - mean).norm() <= 1e-12);
}

TEST_CASE("basis file round-trip") {
    const auto m = testing::random_graph(30, 20, 0.2, 13);
    LanczosOptions o;
    o.rank = 6;
    o.seed = 77;
    const auto basis = build_spectral_basis(m, o);
    const auto dir = std::filesystem::temp_directory_path() / "sdiff_test_graphspec";
    std::filesystem::create_directories(dir);
    const auto path = dir / "basis.bin";
    save_basis(path, basis);
    const auto back = load_basis(path);
    CHECK(back.matrix_hash == m.content_hash());
    CHECK(back.seed == 77);
    CHECK(back.d == basis.d);
    CHECK(back.residuals == basis.residuals);
    CHECK((back.U - basis.U.cast<float>().cast<double>()).norm() == 0.0);

    std::ifstream in(path, std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    CHECK(std::string(magic, 8) == "SDIFFBAS");

    std::ofstream(dir / "junk.bin", std::ios::binary) << "NOTABASIS-----------------";
    CHECK_THROWS_AS(load_basis(dir / "junk.bin"), Error);
}

TEST_CASE("eigenvector sign convention") {
    const auto m = testing::random_graph(90, 50, 0.1, 4);
    LanczosOptions o;
    o.rank = 12;
    for (const std::uint64_t seed : {1u, 2u, 3u}) {
        o.seed = seed;
        const auto basis = build_spectral_basis(m, o);
        for (Eigen::Index c = 0; c < 12; ++c) {
            Eigen::Index peak = 0;
            basis.U.col(c).cwiseAbs().maxCoeff(&peak);
            CHECK(basis.U(peak, c) > 0.0);
        }
    }
}

#pragma once

// Shared fixtures and independent reference implementations for the tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "sdiff/dataio.hpp"

namespace testing {

/// Users in the first half interact only with the first half of the items,
/// the rest only with the second half; each in-block pair is present with
/// probability `density`.
inline sdiff::InteractionMatrix two_block(std::size_t users, std::size_t items, double density, unsigned seed) {
    std::mt19937 gen(seed);
    std::bernoulli_distribution keep(density);
    const std::size_t half = items / 2;
    std::vector<std::vector<sdiff::ItemIndex>> rows(users);
    for (std::size_t u = 0; u < users; ++u) {
        const std::size_t first = u < users / 2 ? 0 : half;
        const std::size_t last = u < users / 2 ? half : items;
        for (std::size_t i = first; i < last; ++i) {
            if (keep(gen)) rows[u].push_back(static_cast<sdiff::ItemIndex>(i));
        }
        if (rows[u].empty()) rows[u].push_back(static_cast<sdiff::ItemIndex>(first));
    }
    return sdiff::InteractionMatrix(std::move(rows), items);
}

/// Random bipartite graph; every user has at least one item.
inline sdiff::InteractionMatrix random_graph(std::size_t users, std::size_t items, double density, unsigned seed) {
    std::mt19937 gen(seed);
    std::bernoulli_distribution keep(density);
    std::uniform_int_distribution<std::size_t> pick(0, items - 1);
    std::vector<std::vector<sdiff::ItemIndex>> rows(users);
    for (std::size_t u = 0; u < users; ++u) {
        for (std::size_t i = 0; i < items; ++i) {
            if (keep(gen)) rows[u].push_back(static_cast<sdiff::ItemIndex>(i));
        }
        if (rows[u].empty()) rows[u].push_back(static_cast<sdiff::ItemIndex>(pick(gen)));
    }
    return sdiff::InteractionMatrix(std::move(rows), items);
}

/// Dense X~ = D_U^{-1/2} X D_I^{-1/2} from the raw rows.
inline Eigen::MatrixXd dense_normalized(const sdiff::InteractionMatrix& m) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.n_users()),
                                              static_cast<Eigen::Index>(m.n_items()));
    for (std::size_t u = 0; u < m.n_users(); ++u) {
        for (const auto i : m.row(static_cast<sdiff::UserIndex>(u))) x(static_cast<Eigen::Index>(u), i) = 1.0;
    }
    const Eigen::VectorXd du = x.rowwise().sum();
    const Eigen::VectorXd di = x.colwise().sum().transpose();
    const auto inv_sqrt = [](double v) { return v > 0.0 ? 1.0 / std::sqrt(v) : 0.0; };
    return du.unaryExpr(inv_sqrt).asDiagonal() * x * di.unaryExpr(inv_sqrt).asDiagonal();
}

inline Eigen::MatrixXd dense_gram(const sdiff::InteractionMatrix& m) {
    const Eigen::MatrixXd xt = dense_normalized(m);
    return xt.transpose() * xt;
}

/// e^{-L t} x by the power series, summed until terms vanish.
inline Eigen::VectorXd taylor_heat(const Eigen::MatrixXd& lap, double t, const Eigen::VectorXd& x) {
    Eigen::VectorXd term = x;
    Eigen::VectorXd sum = x;
    for (int k = 1; k < 200; ++k) {
        term = (-t / k) * (lap * term);
        sum += term;
        if (term.lpNorm<Eigen::Infinity>() < 1e-18) break;
    }
    return sum;
}

/// Recall and NDCG written out from their definitions with sets and an
/// explicit ideal ranking.
struct NaiveMetrics {
    double recall;
    double ndcg;
};

inline NaiveMetrics naive_metrics(const std::vector<sdiff::ItemIndex>& ranked, const std::set<sdiff::ItemIndex>& truth,
                                  std::size_t k) {
    if (truth.empty()) return {0.0, 0.0};
    std::vector<sdiff::ItemIndex> top(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(std::min(k, ranked.size())));
    std::size_t hits = 0;
    double dcg = 0.0;
    for (std::size_t pos = 1; pos <= top.size(); ++pos) {
        if (truth.count(top[pos - 1])) {
            ++hits;
            dcg += 1.0 / std::log2(static_cast<double>(pos) + 1.0);
        }
    }
    // Ideal list: all relevant items first.
    double idcg = 0.0;
    std::size_t pos = 1;
    for (auto it = truth.begin(); it != truth.end() && pos <= k; ++it, ++pos) {
        idcg += 1.0 / std::log2(static_cast<double>(pos) + 1.0);
    }
    return {static_cast<double>(hits) / static_cast<double>(truth.size()), dcg / idcg};
}

}  // namespace testing

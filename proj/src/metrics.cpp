#include "sdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sdiff {

std::vector<ItemIndex> excluded_items(const DatasetSplit& split, UserIndex u, EvalStage stage) {
    std::vector<ItemIndex> out(split.train.at(u));
    if (stage == EvalStage::Test) {
        const auto& val = split.val.at(u);
        std::vector<ItemIndex> merged;
        merged.reserve(out.size() + val.size());
        std::merge(out.begin(), out.end(), val.begin(), val.end(), std::back_inserter(merged));
        out = std::move(merged);
    }
    return out;
}

std::span<const ItemIndex> held_out_items(const DatasetSplit& split, UserIndex u, EvalStage stage) {
    return stage == EvalStage::Test ? std::span<const ItemIndex>(split.test.at(u))
                                    : std::span<const ItemIndex>(split.val.at(u));
}

double recall_at_k(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth, std::size_t k) {
    if (truth.empty()) return 0.0;
    const auto n = std::min(k, ranked.size());
    std::size_t hits = 0;
    for (std::size_t r = 0; r < n; ++r) {
        if (std::binary_search(truth.begin(), truth.end(), ranked[r])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double ndcg_at_k(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth, std::size_t k) {
    if (truth.empty()) return 0.0;
    const auto n = std::min(k, ranked.size());
    double dcg = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (std::binary_search(truth.begin(), truth.end(), ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
    double idcg = 0.0;
    const auto ideal = std::min(k, truth.size());
    for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    return dcg / idcg;
}

Metrics evaluate(const DatasetSplit& split, EvalStage stage, const Recommender& recommender,
                 std::span<const std::size_t> ks) {
    require(!ks.empty(), "invalid_argument", "evaluate needs at least one cutoff");
    Metrics m;
    m.ks.assign(ks.begin(), ks.end());
    m.seed = split.seed;
    for (const auto k : m.ks) {
        require(k >= 1, "invalid_argument", "cutoffs must be at least 1");
        m.user_recall[k];
        m.user_ndcg[k];
    }

    for (std::size_t u = 0; u < split.n_users(); ++u) {
        const auto user = static_cast<UserIndex>(u);
        const auto truth = held_out_items(split, user, stage);
        if (truth.empty()) continue;
        const auto ranked = recommender(user);
        const auto excluded = excluded_items(split, user, stage);
        for (const auto item : ranked) {
            if (std::binary_search(excluded.begin(), excluded.end(), item)) {
                throw Error("protocol_violation", "recommendation for user " + std::to_string(u) +
                                                      " contains excluded item " + std::to_string(item));
            }
        }
        m.users.push_back(user);
        for (const auto k : m.ks) {
            m.user_recall[k].push_back(recall_at_k(ranked, truth, k));
            m.user_ndcg[k].push_back(ndcg_at_k(ranked, truth, k));
        }
    }

    for (const auto k : m.ks) {
        const auto& r = m.user_recall[k];
        const auto& n = m.user_ndcg[k];
        const double count = static_cast<double>(r.size());
        m.recall[k] = r.empty() ? 0.0 : std::accumulate(r.begin(), r.end(), 0.0) / count;
        m.ndcg[k] = n.empty() ? 0.0 : std::accumulate(n.begin(), n.end(), 0.0) / count;
    }
    return m;
}

std::vector<double> popularity_baseline(const DatasetSplit& split, std::size_t n_items) {
    std::vector<double> scores(n_items, 0.0);
    std::size_t total = 0;
    for (const auto& row : split.train) {
        for (const auto i : row) {
            require(i < n_items, "dimension_mismatch", "popularity_baseline: item index out of range");
            scores[i] += 1.0;
        }
        total += row.size();
    }
    require(total > 0, "invalid_argument", "popularity_baseline: no training interactions");
    return scores;
}

MeanStd mean_std(std::span<const double> values) {
    MeanStd r;
    if (values.empty()) return r;
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (const auto v : values) ss += (v - r.mean) * (v - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return r;
}

}  // namespace sdiff

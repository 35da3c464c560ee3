#pragma once

#include <functional>
#include <map>
#include <span>
#include <vector>

#include "sdiff/common.hpp"
#include "sdiff/dataio.hpp"

namespace sdiff {

enum class EvalStage { Validation, Test };

/// Items a ranked list must not contain: train at validation time, train and
/// validation at test time.
std::vector<ItemIndex> excluded_items(const DatasetSplit& split, UserIndex u, EvalStage stage);

/// Held-out items the ranking is scored against.
std::span<const ItemIndex> held_out_items(const DatasetSplit& split, UserIndex u, EvalStage stage);

/// |top-K ∩ truth| / |truth|. `truth` must be sorted.
double recall_at_k(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth, std::size_t k);

/// Binary-relevance NDCG: sum_r rel_r / log2(r + 1) over the first K ranks,
/// divided by the ideal DCG of min(K, |truth|) hits. `truth` must be sorted.
double ndcg_at_k(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth, std::size_t k);

struct Metrics {
    std::vector<std::size_t> ks;
    std::map<std::size_t, double> recall;
    std::map<std::size_t, double> ndcg;
    std::vector<UserIndex> users;  ///< users with a nonempty held-out set
    std::map<std::size_t, std::vector<double>> user_recall;
    std::map<std::size_t, std::vector<double>> user_ndcg;
    std::uint64_t seed = 0;

    std::size_t user_count() const noexcept { return users.size(); }
};

using Recommender = std::function<std::vector<ItemIndex>(UserIndex)>;

/// Averages Recall@K and NDCG@K over users with a nonempty held-out set.
/// A ranked list containing an excluded item is a protocol violation and
/// raises Error("protocol_violation").
Metrics evaluate(const DatasetSplit& split, EvalStage stage, const Recommender& recommender,
                 std::span<const std::size_t> ks);

/// Training interaction count per item.
std::vector<double> popularity_baseline(const DatasetSplit& split, std::size_t n_items);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

/// Sample mean and (n-1) standard deviation; std = 0 for a single value.
MeanStd mean_std(std::span<const double> values);

}  // namespace sdiff

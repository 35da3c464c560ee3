#pragma once

#include <atomic>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sdiff/denoiser.hpp"
#include "sdiff/graphspec.hpp"
#include "sdiff/rng.hpp"
#include "sdiff/schedule.hpp"

namespace sdiff {

struct SamplerConfig {
    /// Weight of the unconditional estimate in the blend
    /// (1 - s) phi(v, U^T c, t) + s phi(v, 0, t).
    double guidance = 0.02;
    /// Number of independent reverse runs averaged per user.
    std::size_t ensemble = 1;
    std::uint64_t seed = 0;
    /// Scores returned for an empty condition; empty means such a user is an
    /// error ("empty_condition").
    std::span<const double> fallback_scores;
};

struct SamplerStats {
    std::size_t conditional_calls = 0;
    std::size_t unconditional_calls = 0;
};

/// Reverse process on a batch of spectral conditions (K x B, columns
/// U^T c_b); `rngs[b]` supplies the noise for column b. Returns the final
/// clean estimate v^_0 for each column.
Eigen::MatrixXf reverse_process(const DenoiserParams<float>& params, const NoiseSchedule& schedule,
                                const Eigen::MatrixXf& condition, std::span<Rng> rngs, const SamplerConfig& config,
                                SamplerStats* stats = nullptr);

/// Denoised preference scores x^_0 = U v^_0 for one user.
Eigen::VectorXd sample_preferences(const DenoiserParams<float>& params, const NoiseSchedule& schedule,
                                   const SpectralBasis& basis, std::span<const ItemIndex> condition,
                                   const SamplerConfig& config, Rng& rng, SamplerStats* stats = nullptr);

/// Highest-scoring items outside `history`, ties broken by lower index.
/// Returns every candidate when fewer than k remain.
std::vector<ItemIndex> recommend_topk(std::span<const double> scores, std::span<const ItemIndex> history,
                                      std::size_t k);

struct RankedList {
    std::vector<ItemIndex> items;
    std::vector<double> scores;
};

struct RankRequest {
    std::vector<UserIndex> users;
    std::function<std::span<const ItemIndex>(UserIndex)> condition;
    std::function<std::vector<ItemIndex>(UserIndex)> excluded;
    std::size_t top_n = 20;
};

/// Samples and ranks every requested user. User u draws its noise from
/// Rng::stream(config.seed, u), and users are processed in fixed chunks, so
/// the output does not depend on `threads`.
std::vector<RankedList> rank_users(const DenoiserParams<float>& params, const NoiseSchedule& schedule,
                                   const SpectralBasis& basis, const RankRequest& request,
                                   const SamplerConfig& config, std::size_t threads = 1,
                                   SamplerStats* stats = nullptr);

/// Ranks with a fixed score vector shared by all users (popularity baseline).
std::vector<RankedList> rank_with_scores(std::span<const double> scores, const RankRequest& request);

}  // namespace sdiff

#include "sdiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace sdiff {

namespace {

constexpr std::size_t kChunk = 64;

Eigen::VectorXf to_float(const Eigen::VectorXd& v) { return v.cast<float>(); }

void add_noise(Eigen::MatrixXf& v, const Eigen::VectorXf& alpha, const Eigen::VectorXf& sigma,
               const Eigen::MatrixXf& mean, std::span<Rng> rngs, bool draw) {
    v = alpha.asDiagonal() * mean;
    if (!draw) return;
    for (Eigen::Index b = 0; b < v.cols(); ++b) {
        auto& rng = rngs[static_cast<std::size_t>(b)];
        for (Eigen::Index i = 0; i < v.rows(); ++i) v(i, b) += sigma[i] * static_cast<float>(rng.normal());
    }
}

}  // namespace

Eigen::MatrixXf reverse_process(const DenoiserParams<float>& params, const NoiseSchedule& schedule,
                                const Eigen::MatrixXf& condition, std::span<Rng> rngs, const SamplerConfig& config,
                                SamplerStats* stats) {
    require(config.guidance >= 0.0 && config.guidance <= 1.0, "invalid_argument", "guidance weight must lie in [0, 1]");
    require(static_cast<std::size_t>(condition.rows()) == schedule.dim() &&
                params.shape.spectral_dim == schedule.dim(),
            "dimension_mismatch", "model, schedule and condition disagree on the spectral size");
    require(rngs.size() == static_cast<std::size_t>(condition.cols()), "invalid_argument",
            "one random stream per column is required");

    const auto batch = condition.cols();
    const auto& sp = schedule.params();
    const auto s = static_cast<float>(config.guidance);
    const auto ensemble = std::max<std::size_t>(config.ensemble, 1);
    const Eigen::MatrixXf zeros = Eigen::MatrixXf::Zero(condition.rows(), batch);
    const auto times = schedule.sampling_times();

    Eigen::MatrixXf total = Eigen::MatrixXf::Zero(condition.rows(), batch);
    Eigen::MatrixXf v(condition.rows(), batch);
    Eigen::MatrixXf estimate(condition.rows(), batch);
    for (std::size_t run = 0; run < ensemble; ++run) {
        const auto start = schedule.at(sp.tau);
        add_noise(v, to_float(start.alpha), to_float(start.sigma), condition, rngs, true);

        for (std::size_t step = 0; step < times.size(); ++step) {
            const Eigen::VectorXf t = Eigen::VectorXf::Constant(batch, static_cast<float>(times[step]));
            estimate.setZero();
            if (s < 1.0f) {
                estimate += (1.0f - s) * denoise(params, v, condition, t);
                if (stats) ++stats->conditional_calls;
            }
            if (s > 0.0f) {
                estimate += s * denoise(params, v, zeros, t);
                if (stats) ++stats->unconditional_calls;
            }
            // Previous grid point; the last one is t = 0 where sigma = 0.
            const int remaining = static_cast<int>(times.size() - step - 1);
            const double t_prev = sp.tau * remaining / sp.steps;
            const auto c = schedule.at(t_prev);
            add_noise(v, to_float(c.alpha), to_float(c.sigma), estimate, rngs, remaining > 0);
        }
        total += estimate;
    }
    if (ensemble > 1) total /= static_cast<float>(ensemble);
    return total;
}

Eigen::VectorXd sample_preferences(const DenoiserParams<float>& params, const NoiseSchedule& schedule,
                                   const SpectralBasis& basis, std::span<const ItemIndex> condition,
                                   const SamplerConfig& config, Rng& rng, SamplerStats* stats) {
    if (condition.empty()) {
        require(!config.fallback_scores.empty(), "empty_condition", "user has no interactions to condition on");
        require(config.fallback_scores.size() == basis.n_items(), "dimension_mismatch",
                "fallback scores do not cover every item");
        return Eigen::Map<const Eigen::VectorXd>(config.fallback_scores.data(),
                                                 static_cast<Eigen::Index>(config.fallback_scores.size()));
    }
    const Eigen::MatrixXf spec = gft_support(basis, condition).cast<float>();
    const auto v0 = reverse_process(params, schedule, spec, std::span<Rng>(&rng, 1), config, stats);
    return basis.U * v0.col(0).cast<double>();
}

std::vector<ItemIndex> recommend_topk(std::span<const double> scores, std::span<const ItemIndex> history,
                                      std::size_t k) {
    require(k >= 1, "invalid_argument", "top-k needs k >= 1");
    std::vector<char> blocked(scores.size(), 0);
    for (const auto i : history) {
        if (i < blocked.size()) blocked[i] = 1;
    }
    std::vector<ItemIndex> candidates;
    candidates.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!blocked[i]) candidates.push_back(static_cast<ItemIndex>(i));
    }
    const auto better = [&scores](ItemIndex a, ItemIndex b) {
        const double sa = std::isnan(scores[a]) ? -INFINITY : scores[a];
        const double sb = std::isnan(scores[b]) ? -INFINITY : scores[b];
        if (sa != sb) return sa > sb;
        return a < b;
    };
    const auto n = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n), candidates.end(),
                      better);
    candidates.resize(n);
    return candidates;
}

std::vector<RankedList> rank_users(const DenoiserParams<float>& params, const NoiseSchedule& schedule,
                                   const SpectralBasis& basis, const RankRequest& request,
                                   const SamplerConfig& config, std::size_t threads, SamplerStats* stats) {
    require(params.shape.spectral_dim == basis.rank(), "dimension_mismatch",
            "model spectral size does not match the basis rank");
    const auto n_users = request.users.size();
    std::vector<RankedList> out(n_users);
    const std::size_t n_chunks = (n_users + kChunk - 1) / kChunk;
    std::atomic<std::size_t> next_chunk{0};
    std::vector<SamplerStats> worker_stats(std::max<std::size_t>(threads, 1));
    std::vector<std::exception_ptr> errors(worker_stats.size());

    const auto work = [&](std::size_t worker) {
        try {
            for (std::size_t c = next_chunk++; c < n_chunks; c = next_chunk++) {
                const std::size_t first = c * kChunk;
                const std::size_t last = std::min(n_users, first + kChunk);
                std::vector<std::size_t> sampled;
                std::vector<Rng> rngs;
                Eigen::MatrixXf spec(static_cast<Eigen::Index>(basis.rank()), 0);
                std::vector<Eigen::VectorXd> specs;
                for (std::size_t j = first; j < last; ++j) {
                    const auto u = request.users[j];
                    const auto cond = request.condition(u);
                    if (cond.empty()) {
                        require(!config.fallback_scores.empty(), "empty_condition",
                                "user " + std::to_string(u) + " has no interactions to condition on");
                        const auto excluded = request.excluded(u);
                        auto& r = out[j];
                        r.items = recommend_topk(config.fallback_scores, excluded, request.top_n);
                        for (const auto i : r.items) r.scores.push_back(config.fallback_scores[i]);
                        continue;
                    }
                    sampled.push_back(j);
                    rngs.push_back(Rng::stream(config.seed, u));
                    specs.push_back(gft_support(basis, cond));
                }
                if (sampled.empty()) continue;
                spec.resize(static_cast<Eigen::Index>(basis.rank()), static_cast<Eigen::Index>(sampled.size()));
                for (std::size_t b = 0; b < sampled.size(); ++b) spec.col(static_cast<Eigen::Index>(b)) = specs[b].cast<float>();

                const auto v0 = reverse_process(params, schedule, spec, rngs, config, &worker_stats[worker]);
                const Eigen::MatrixXd scores = basis.U * v0.cast<double>();
                for (std::size_t b = 0; b < sampled.size(); ++b) {
                    const auto j = sampled[b];
                    const auto col = scores.col(static_cast<Eigen::Index>(b));
                    const std::span<const double> view(col.data(), static_cast<std::size_t>(col.size()));
                    auto& r = out[j];
                    r.items = recommend_topk(view, request.excluded(request.users[j]), request.top_n);
                    r.scores.reserve(r.items.size());
                    for (const auto i : r.items) r.scores.push_back(view[i]);
                }
            }
        } catch (...) {
            errors[worker] = std::current_exception();
        }
    };

    if (worker_stats.size() == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < worker_stats.size(); ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    if (stats) {
        for (const auto& ws : worker_stats) {
            stats->conditional_calls += ws.conditional_calls;
            stats->unconditional_calls += ws.unconditional_calls;
        }
    }
    return out;
}

std::vector<RankedList> rank_with_scores(std::span<const double> scores, const RankRequest& request) {
    std::vector<RankedList> out(request.users.size());
    for (std::size_t j = 0; j < request.users.size(); ++j) {
        auto& r = out[j];
        r.items = recommend_topk(scores, request.excluded(request.users[j]), request.top_n);
        for (const auto i : r.items) r.scores.push_back(scores[i]);
    }
    return out;
}

}  // namespace sdiff

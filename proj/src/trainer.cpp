#include "sdiff/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <thread>

#include "sdiff/metrics.hpp"
#include "sdiff/sampler.hpp"

namespace sdiff {

namespace {

// Stream ids; users own the ids below 2^32.
constexpr std::uint64_t kInitStream = 1ULL << 40;
constexpr std::uint64_t kShuffleStream = 2ULL << 40;
constexpr std::uint64_t kBatchStream = 3ULL << 40;
constexpr std::uint64_t kValidationStream = 4ULL << 40;

float sharded_loss_and_grad(const DenoiserParams<float>& p, const DenoiserBatch<float>& batch,
                            DenoiserParams<float>& grad, std::size_t threads) {
    const auto b = static_cast<std::size_t>(batch.noisy.cols());
    const auto shards = std::max<std::size_t>(1, std::min(threads, b));
    if (shards == 1) return loss_and_grad(p, batch, &grad);

    std::vector<DenoiserParams<float>> grads(shards);
    std::vector<float> losses(shards, 0.0f);
    std::vector<std::size_t> sizes(shards);
    std::vector<std::thread> pool;
    for (std::size_t s = 0; s < shards; ++s) {
        const auto first = s * b / shards;
        const auto last = (s + 1) * b / shards;
        sizes[s] = last - first;
        pool.emplace_back([&, s, first, last] {
            const auto cols = static_cast<Eigen::Index>(last - first);
            const auto off = static_cast<Eigen::Index>(first);
            DenoiserBatch<float> part{batch.noisy.middleCols(off, cols), batch.condition.middleCols(off, cols),
                                      batch.t.segment(off, cols), batch.target.middleCols(off, cols)};
            losses[s] = loss_and_grad(p, part, &grads[s]);
        });
    }
    for (auto& t : pool) t.join();

    grad = DenoiserParams<float>::zeros(p.shape);
    float loss = 0.0f;
    auto dst = grad.tensors();
    for (std::size_t s = 0; s < shards; ++s) {
        const float w = static_cast<float>(sizes[s]) / static_cast<float>(b);
        loss += w * losses[s];
        const auto src = grads[s].tensors();
        for (std::size_t k = 0; k < dst.size(); ++k) *dst[k] += w * *src[k];
    }
    return loss;
}

}  // namespace

DropoutMode parse_dropout_mode(std::string_view name) {
    if (name == "example") return DropoutMode::PerExample;
    if (name == "batch") return DropoutMode::PerBatch;
    throw Error("invalid_argument", "unknown dropout mode '" + std::string(name) + "' (expected example or batch)");
}

std::string_view dropout_mode_name(DropoutMode mode) {
    return mode == DropoutMode::PerBatch ? "batch" : "example";
}

void TrainConfig::validate() const {
    require(batch_size >= 1, "invalid_argument", "batch size must be positive");
    require(max_epochs >= 1, "invalid_argument", "epoch count must be positive");
    require(lr > 0.0 && std::isfinite(lr), "invalid_argument", "learning rate must be positive");
    require(p_uncond >= 0.0 && p_uncond <= 1.0, "invalid_argument", "p_uncond must lie in [0, 1]");
    require(p_mask >= 0.0 && p_mask <= 1.0, "invalid_argument", "p_mask must lie in [0, 1]");
    require(guidance >= 0.0 && guidance <= 1.0, "invalid_argument", "guidance weight must lie in [0, 1]");
    require(patience >= 1, "invalid_argument", "patience must be positive");
    require(threads >= 1, "invalid_argument", "thread count must be positive");
}

DenoiserBatch<float> make_batch(std::span<const UserIndex> users, const DatasetSplit& split,
                                const SpectralBasis& basis, const NoiseSchedule& schedule, const TrainConfig& config,
                                Rng& rng, TrainStats* stats) {
    const auto k = static_cast<Eigen::Index>(basis.rank());
    const auto b = static_cast<Eigen::Index>(users.size());
    const double tau = schedule.params().tau;
    DenoiserBatch<float> batch{Eigen::MatrixXf(k, b), Eigen::MatrixXf(k, b), Eigen::VectorXf(b),
                               Eigen::MatrixXf(k, b)};

    const bool drop_batch = config.dropout == DropoutMode::PerBatch && rng.bernoulli(config.p_uncond);
    for (Eigen::Index j = 0; j < b; ++j) {
        const auto& row = split.train.at(users[static_cast<std::size_t>(j)]);
        const Eigen::VectorXd v0 = gft_support(basis, row);

        const auto kept = mask_condition(row, config.p_mask, rng);
        const bool drop = config.dropout == DropoutMode::PerBatch ? drop_batch : rng.bernoulli(config.p_uncond);
        const Eigen::VectorXd cond = drop ? Eigen::VectorXd::Zero(k) : gft_support(basis, kept);

        const double t = rng.uniform(0.0, tau);
        const Eigen::VectorXd vt = forward_sample(schedule, v0, t, rng);

        batch.target.col(j) = v0.cast<float>();
        batch.condition.col(j) = cond.cast<float>();
        batch.noisy.col(j) = vt.cast<float>();
        batch.t[j] = static_cast<float>(t);
        if (stats) {
            ++stats->examples;
            if (drop) ++stats->unconditional;
            if (config.record_times) stats->times.push_back(t);
        }
    }
    return batch;
}

std::uint64_t train_hash(const DatasetSplit& split, std::size_t n_items) {
    return InteractionMatrix(split.train, n_items).content_hash();
}

std::pair<double, double> validation_metrics(const DenoiserParams<float>& params, const DatasetSplit& split,
                                             const SpectralBasis& basis, const NoiseSchedule& schedule,
                                             double guidance, std::uint64_t seed, std::size_t threads) {
    const auto popularity = popularity_baseline(split, basis.n_items());
    RankRequest request;
    for (std::size_t u = 0; u < split.n_users(); ++u) {
        if (!split.val[u].empty()) request.users.push_back(static_cast<UserIndex>(u));
    }
    request.condition = [&split](UserIndex u) { return std::span<const ItemIndex>(split.train[u]); };
    request.excluded = [&split](UserIndex u) { return excluded_items(split, u, EvalStage::Validation); };
    request.top_n = 10;

    SamplerConfig sc;
    sc.guidance = guidance;
    sc.seed = seed;
    sc.fallback_scores = popularity;
    const auto lists = rank_users(params, schedule, basis, request, sc, threads);

    std::vector<std::vector<ItemIndex>> by_user(split.n_users());
    for (std::size_t j = 0; j < lists.size(); ++j) by_user[request.users[j]] = lists[j].items;
    const std::size_t ks[] = {10};
    const auto m = evaluate(split, EvalStage::Validation, [&by_user](UserIndex u) { return by_user[u]; }, ks);
    return {m.recall.at(10), m.ndcg.at(10)};
}

TrainResult train(const TrainConfig& config, const DatasetSplit& split, const SpectralBasis& basis,
                  const NoiseSchedule& schedule, const EpochCallback& on_epoch) {
    config.validate();
    require(train_hash(split, basis.n_items()) == basis.matrix_hash, "hash_mismatch",
            "spectral basis was not built from this training split");
    require(schedule.dim() == basis.rank() && schedule.frequencies() == basis.d, "hash_mismatch",
            "noise schedule was not built from this spectral basis");
    require(config.shape.spectral_dim == basis.rank(), "dimension_mismatch",
            "model spectral size does not match the basis rank");

    std::vector<UserIndex> users;
    for (std::size_t u = 0; u < split.n_users(); ++u) {
        if (!split.train[u].empty()) users.push_back(static_cast<UserIndex>(u));
    }
    require(!users.empty(), "empty_input", "no user has training interactions");

    TrainResult result;
    auto params = init_denoiser<float>(config.shape, derive_seed(config.seed, kInitStream));
    result.adam = AdamState<float>::fresh(config.shape, AdamConfig{config.lr});
    result.params = params;
    result.status = "max_epochs";

    DenoiserParams<float> grad;
    std::size_t stale = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        Rng order_rng = Rng::stream(derive_seed(config.seed, kShuffleStream), epoch);
        order_rng.shuffle(users.begin(), users.end());

        double loss_sum = 0.0;
        bool finite = true;
        for (std::size_t first = 0, batch_no = 0; first < users.size(); first += config.batch_size, ++batch_no) {
            const auto last = std::min(users.size(), first + config.batch_size);
            const std::span<const UserIndex> members(users.data() + first, last - first);
            Rng rng = Rng::stream(derive_seed(config.seed, kBatchStream + epoch), batch_no);
            const auto batch = make_batch(members, split, basis, schedule, config, rng, &result.stats);

            float loss = 0.0f;
            try {
                loss = sharded_loss_and_grad(params, batch, grad, config.threads);
            } catch (const Error& e) {
                if (e.code() != "non_finite") throw;
                finite = false;
                break;
            }
            if (!std::isfinite(loss) || !grad.all_finite()) {
                finite = false;
                break;
            }
            auto trial = params;
            auto trial_adam = result.adam;
            adam_step(trial, grad, trial_adam);
            if (!trial.all_finite()) {
                finite = false;
                break;
            }
            params = std::move(trial);
            result.adam = std::move(trial_adam);
            ++result.steps;
            loss_sum += static_cast<double>(loss) * static_cast<double>(members.size());
        }
        if (!finite) {
            result.status = "non_finite_loss";
            if (result.best_epoch == 0) result.params = params;
            break;
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.loss = loss_sum / static_cast<double>(users.size());
        bool stop = false;
        if (config.eval_every > 0 && epoch % config.eval_every == 0) {
            const auto [recall, ndcg] = validation_metrics(params, split, basis, schedule, config.guidance,
                                                           derive_seed(config.seed, kValidationStream),
                                                           config.threads);
            entry.val_recall = recall;
            entry.val_ndcg = ndcg;
            if (recall > result.best_val_recall) {
                result.best_val_recall = recall;
                result.best_epoch = epoch;
                result.params = params;
                stale = 0;
            } else if (++stale >= config.patience) {
                result.status = "converged";
                stop = true;
            }
        }
        if (!config.deterministic) {
            entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        }
        result.log.push_back(entry);
        if (on_epoch) on_epoch(entry);
        if (stop) break;
    }
    if (result.best_epoch == 0 && result.status != "non_finite_loss") result.params = params;
    return result;
}

void write_train_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "io_error", "cannot write " + path.string());
    out << "epoch,loss,val_recall@10,val_ndcg@10,wall_ms\n";
    out << std::setprecision(9);
    for (const auto& e : log) {
        out << e.epoch << ',' << e.loss << ',';
        if (e.val_recall) out << *e.val_recall;
        out << ',';
        if (e.val_ndcg) out << *e.val_ndcg;
        out << ',' << std::fixed << std::setprecision(1) << e.wall_ms << std::defaultfloat << std::setprecision(9)
            << '\n';
    }
    require(static_cast<bool>(out), "io_error", "write failed: " + path.string());
}

}  // namespace sdiff

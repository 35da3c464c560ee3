#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sdiff/dataio.hpp"
#include "sdiff/denoiser.hpp"
#include "sdiff/graphspec.hpp"
#include "sdiff/rng.hpp"
#include "sdiff/schedule.hpp"

namespace sdiff {

/// How the unconditional branch is selected during training.
enum class DropoutMode { PerExample, PerBatch };

DropoutMode parse_dropout_mode(std::string_view name);
std::string_view dropout_mode_name(DropoutMode mode);

struct TrainConfig {
    std::size_t batch_size = 100;
    double lr = 1e-4;
    std::size_t max_epochs = 1000;
    double p_uncond = 0.02;
    double p_mask = 0.5;
    DropoutMode dropout = DropoutMode::PerExample;
    std::size_t eval_every = 1;  ///< epochs between validation runs; 0 disables
    std::size_t patience = 20;   ///< non-improving evaluations before stopping
    std::uint64_t seed = 0;
    DenoiserShape shape;
    double guidance = 0.02;      ///< sampler weight used for validation
    std::size_t threads = 1;     ///< gradient shards; 1 is the deterministic path
    bool deterministic = false;  ///< record wall_ms = 0 in the log
    bool record_times = false;   ///< keep every sampled t in TrainStats

    void validate() const;
};

struct TrainStats {
    std::size_t examples = 0;
    std::size_t unconditional = 0;
    std::vector<double> times;
};

/// One minibatch built as in the training loop: the target is the spectrum
/// of the full training row, the condition that of its masked copy (or zero
/// when dropped), t ~ U(0, tau) per example.
DenoiserBatch<float> make_batch(std::span<const UserIndex> users, const DatasetSplit& split,
                                const SpectralBasis& basis, const NoiseSchedule& schedule, const TrainConfig& config,
                                Rng& rng, TrainStats* stats = nullptr);

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;
    std::optional<double> val_recall;
    std::optional<double> val_ndcg;
    double wall_ms = 0.0;
};

struct TrainResult {
    DenoiserParams<float> params;  ///< best by validation Recall@10 (last, if never evaluated)
    AdamState<float> adam;         ///< optimizer state after the last good step
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_val_recall = -1.0;
    std::uint64_t steps = 0;
    std::string status;            ///< "converged", "max_epochs" or "non_finite_loss"
    TrainStats stats;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Hash of the training matrix a basis must have been built from.
std::uint64_t train_hash(const DatasetSplit& split, std::size_t n_items);

/// Trains the denoiser. Raises "hash_mismatch" when the basis was not built
/// from split.train, or the schedule frequencies are not the basis ones.
TrainResult train(const TrainConfig& config, const DatasetSplit& split, const SpectralBasis& basis,
                  const NoiseSchedule& schedule, const EpochCallback& on_epoch = {});

/// Validation Recall@10 / NDCG@10 of a model, sampling with a fixed seed.
std::pair<double, double> validation_metrics(const DenoiserParams<float>& params, const DatasetSplit& split,
                                             const SpectralBasis& basis, const NoiseSchedule& schedule,
                                             double guidance, std::uint64_t seed, std::size_t threads = 1);

void write_train_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

}  // namespace sdiff

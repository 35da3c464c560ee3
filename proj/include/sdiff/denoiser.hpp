#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>

#include <Eigen/Dense>

#include "sdiff/common.hpp"

namespace sdiff {

struct DenoiserShape {
    std::size_t spectral_dim = 200;  ///< K
    std::size_t hidden = 1024;       ///< trunk width h
    std::size_t time_dim = 64;       ///< sinusoidal embedding size d_t (even)
    std::size_t film_width = 16;     ///< hidden width w_f of the FiLM scalar nets

    bool operator==(const DenoiserShape&) const = default;
};

/// Closed form: 2 (3 w_f + 1) + d_t^2 + d_t + (K + d_t) h + h + h K + K.
std::size_t parameter_count(const DenoiserShape& shape);

/// Weights of phi(v_t, c, t):
///
///   gamma_i = f(c_i), beta_i = h(c_i)            f, h: R -> R, shared over i,
///                                                one tanh hidden layer each
///   fused   = v_t + gamma (.) c + beta
///   e       = tanh(W_time emb(t) + b_time)       emb: sinusoidal, size d_t
///   out     = W2 silu(W1 [fused; e] + b1) + b2
///
/// The same layout stores gradients and Adam moments.
template <typename T>
struct DenoiserParams {
    using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

    DenoiserShape shape;
    Matrix gamma_w1, gamma_b1, gamma_w2, gamma_b2;  // w_f x 1 (b2: 1 x 1)
    Matrix beta_w1, beta_b1, beta_w2, beta_b2;
    Matrix time_w, time_b;                          // d_t x d_t, d_t x 1
    Matrix trunk_w1, trunk_b1;                      // h x (K + d_t), h x 1
    Matrix trunk_w2, trunk_b2;                      // K x h, K x 1

    static DenoiserParams zeros(const DenoiserShape& shape);

    static constexpr std::size_t kTensorCount = 14;
    static constexpr std::array<std::string_view, kTensorCount> kTensorNames = {
        "gamma_w1", "gamma_b1", "gamma_w2", "gamma_b2", "beta_w1", "beta_b1",  "beta_w2",
        "beta_b2",  "time_w",   "time_b",   "trunk_w1", "trunk_b1", "trunk_w2", "trunk_b2"};

    /// Tensors in checkpoint order (matches kTensorNames).
    std::array<Matrix*, kTensorCount> tensors() {
        return {&gamma_w1, &gamma_b1, &gamma_w2, &gamma_b2, &beta_w1,  &beta_b1,  &beta_w2,
                &beta_b2,  &time_w,   &time_b,   &trunk_w1, &trunk_b1, &trunk_w2, &trunk_b2};
    }
    std::array<const Matrix*, kTensorCount> tensors() const {
        return {&gamma_w1, &gamma_b1, &gamma_w2, &gamma_b2, &beta_w1,  &beta_b1,  &beta_w2,
                &beta_b2,  &time_w,   &time_b,   &trunk_w1, &trunk_b1, &trunk_w2, &trunk_b2};
    }

    std::size_t size() const;
    bool all_finite() const;

    template <typename U>
    DenoiserParams<U> cast() const;
};

/// Trunk and time projection: Xavier-uniform weights, zero biases. FiLM
/// hidden layers: uniform in [-1, 1]. FiLM output heads are zero, so the
/// fused input equals v_t at initialization.
template <typename T>
DenoiserParams<T> init_denoiser(const DenoiserShape& shape, std::uint64_t seed);

/// Sinusoidal embedding of each t (columns): sin(t w_j) rows then cos(t w_j),
/// w_j = 1000 * 10000^(-j / (d_t/2)).
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> time_embedding(std::size_t time_dim,
                                                                 const Eigen::Matrix<T, Eigen::Dynamic, 1>& t);

/// One column per example.
template <typename T>
struct DenoiserBatch {
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> noisy;      ///< v_t, K x B
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> condition;  ///< U^T c, K x B
    Eigen::Matrix<T, Eigen::Dynamic, 1> t;                       ///< B
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> target;     ///< v_0, K x B (loss only)
};

/// Batched estimate of v_0, K x B.
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> denoise(const DenoiserParams<T>& p,
                                                         const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& noisy,
                                                         const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& condition,
                                                         const Eigen::Matrix<T, Eigen::Dynamic, 1>& t);

/// Loss = (1/B) sum_b ||phi(...)_b - target_b||^2. Writes exact gradients
/// into `grad` (reshaped as needed) when non-null.
template <typename T>
T loss_and_grad(const DenoiserParams<T>& p, const DenoiserBatch<T>& batch, DenoiserParams<T>* grad);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    DenoiserParams<T> m;
    DenoiserParams<T> v;
    std::uint64_t step = 0;
    AdamConfig config;

    static AdamState fresh(const DenoiserShape& shape, AdamConfig config = {});
};

/// Bias-corrected Adam, no weight decay.
template <typename T>
void adam_step(DenoiserParams<T>& p, const DenoiserParams<T>& g, AdamState<T>& s);

struct Checkpoint {
    DenoiserParams<float> params;
    std::uint64_t basis_hash = 0;
    std::uint64_t train_steps = 0;
    std::optional<AdamState<float>> adam;
};

/// `SDIFFMDL` header (version, K, h, d_t, w_f, basis hash, step count),
/// tensors in tensors() order as float32, then an optional Adam block.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sdiff

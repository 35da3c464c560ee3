#pragma once

#include <random>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "sdiff/graphspec.hpp"
#include "sdiff/rng.hpp"

namespace sdiff {

/// Forward-process family.
///   VP  - frequency dependent: alpha = lambda + alpha_min (1 - lambda),
///         sigma = min(sqrt(1 - lambda^2), sigma_max), lambda = exp(-t d).
///   VE  - alpha = lambda, sigma = sigma_max * t / tau (same for every frequency).
///   ISO - frequency independent: sigma = iso_sigma_end * sqrt(t / tau),
///         alpha = sqrt(1 - sigma^2).
enum class Variant { VP, VE, ISO };

Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);

struct ScheduleParams {
    double tau = 1.0;
    int steps = 5;
    double alpha_min = 0.05;
    double sigma_max = 0.45;
    Variant variant = Variant::VP;
    double iso_sigma_end = 1.0;
};

struct Coefficients {
    Eigen::VectorXd alpha;
    Eigen::VectorXd sigma;
};

class NoiseSchedule {
public:
    NoiseSchedule(Eigen::VectorXd frequencies, const ScheduleParams& params);

    const ScheduleParams& params() const noexcept { return params_; }
    const Eigen::VectorXd& frequencies() const noexcept { return d_; }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(d_.size()); }

    /// Closed-form coefficients at continuous time t in [0, tau].
    Coefficients at(double t) const;

    /// Lower bound on alpha^2 / sigma^2 over t in [0, tau], assuming
    /// frequencies in [0, 2].
    double snr_lower_bound() const;

    /// t_j = tau * j / T for j = 0..T.
    std::vector<double> time_grid() const;
    /// Reverse-process instants {tau, tau (T-1)/T, ..., tau / T}.
    std::vector<double> sampling_times() const;

private:
    Eigen::VectorXd d_;
    ScheduleParams params_;
};

NoiseSchedule build_schedule(const SpectralBasis& basis, const ScheduleParams& params);

Coefficients alpha_sigma_at(const NoiseSchedule& s, double t);

/// alpha_t * v0 + sigma_t * eps, eps ~ N(0, I) drawn from `rng` in
/// coordinate order.
Eigen::VectorXd forward_sample(const NoiseSchedule& s, const Eigen::VectorXd& v0, double t, Rng& rng);

inline constexpr double kSigmaFloor = 1e-12;

struct SnrResult {
    Eigen::VectorXd values;  ///< alpha^2 / max(sigma, 1e-12)^2
    double lower_bound = 0.0;
};

SnrResult snr(const NoiseSchedule& s, double t);

}  // namespace sdiff

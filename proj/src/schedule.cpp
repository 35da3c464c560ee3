#include "sdiff/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace sdiff {

Variant parse_variant(std::string_view name) {
    if (name == "vp" || name == "VP") return Variant::VP;
    if (name == "ve" || name == "VE") return Variant::VE;
    if (name == "iso" || name == "ISO") return Variant::ISO;
    throw Error("invalid_argument", "unknown variant '" + std::string(name) + "' (expected vp, ve or iso)");
}

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::VP: return "vp";
        case Variant::VE: return "ve";
        case Variant::ISO: return "iso";
    }
    return "?";
}

NoiseSchedule::NoiseSchedule(Eigen::VectorXd frequencies, const ScheduleParams& params)
    : d_(std::move(frequencies)), params_(params) {
    require(params.tau > 0.0, "invalid_argument", "tau must be positive");
    require(params.steps >= 1, "invalid_argument", "step count must be at least 1");
    require(params.alpha_min >= 0.0 && params.alpha_min < 1.0, "invalid_argument", "alpha_min must lie in [0, 1)");
    require(params.sigma_max > 0.0 && params.sigma_max <= 1.0, "invalid_argument", "sigma_max must lie in (0, 1]");
    require(params.iso_sigma_end > 0.0 && params.iso_sigma_end <= 1.0, "invalid_argument",
            "iso_sigma_end must lie in (0, 1]");
    require(d_.size() > 0, "invalid_argument", "schedule needs at least one frequency");
    require(d_.allFinite() && d_.minCoeff() >= 0.0, "invalid_argument", "frequencies must be finite and non-negative");
}

Coefficients NoiseSchedule::at(double t) const {
    require(t >= 0.0 && t <= params_.tau, "out_of_range",
            "time " + std::to_string(t) + " outside [0, " + std::to_string(params_.tau) + "]");
    const auto k = d_.size();
    Coefficients c{Eigen::VectorXd(k), Eigen::VectorXd(k)};
    switch (params_.variant) {
        case Variant::VP: {
            for (Eigen::Index i = 0; i < k; ++i) {
                const double lambda = std::exp(-t * d_[i]);
                // lambda + a_min (1 - lambda) == (1 - a_min) lambda + a_min, exact 1 at lambda = 1
                c.alpha[i] = lambda + params_.alpha_min * (1.0 - lambda);
                c.sigma[i] = std::min(std::sqrt(std::max(0.0, 1.0 - lambda * lambda)), params_.sigma_max);
            }
            break;
        }
        case Variant::VE: {
            const double sigma = params_.sigma_max * (t / params_.tau);
            for (Eigen::Index i = 0; i < k; ++i) c.alpha[i] = std::exp(-t * d_[i]);
            c.sigma.setConstant(sigma);
            break;
        }
        case Variant::ISO: {
            const double sigma = params_.iso_sigma_end * std::sqrt(t / params_.tau);
            c.alpha.setConstant(std::sqrt(std::max(0.0, 1.0 - sigma * sigma)));
            c.sigma.setConstant(sigma);
            break;
        }
    }
    return c;
}

double NoiseSchedule::snr_lower_bound() const {
    const double tau = params_.tau;
    const double lambda_min_sq = std::exp(-4.0 * tau);
    switch (params_.variant) {
        case Variant::VP: {
            const double heat = lambda_min_sq / (1.0 - lambda_min_sq);
            const double floor = params_.alpha_min * params_.alpha_min / (params_.sigma_max * params_.sigma_max);
            return std::max(heat, floor);
        }
        case Variant::VE:
            return lambda_min_sq / (params_.sigma_max * params_.sigma_max);
        case Variant::ISO: {
            const double s2 = params_.iso_sigma_end * params_.iso_sigma_end;
            return (1.0 - s2) / s2;
        }
    }
    return 0.0;
}

std::vector<double> NoiseSchedule::time_grid() const {
    std::vector<double> grid(static_cast<std::size_t>(params_.steps) + 1);
    for (int j = 0; j <= params_.steps; ++j) grid[j] = params_.tau * j / params_.steps;
    return grid;
}

std::vector<double> NoiseSchedule::sampling_times() const {
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(params_.steps));
    for (int j = params_.steps; j >= 1; --j) times.push_back(params_.tau * j / params_.steps);
    return times;
}

NoiseSchedule build_schedule(const SpectralBasis& basis, const ScheduleParams& params) {
    return NoiseSchedule(basis.d, params);
}

Coefficients alpha_sigma_at(const NoiseSchedule& s, double t) { return s.at(t); }

Eigen::VectorXd forward_sample(const NoiseSchedule& s, const Eigen::VectorXd& v0, double t, Rng& rng) {
    require(static_cast<std::size_t>(v0.size()) == s.dim(), "dimension_mismatch",
            "forward_sample: spectrum size does not match the schedule");
    const auto c = s.at(t);
    Eigen::VectorXd out(v0.size());
    for (Eigen::Index i = 0; i < v0.size(); ++i) out[i] = c.alpha[i] * v0[i] + c.sigma[i] * rng.normal();
    return out;
}

SnrResult snr(const NoiseSchedule& s, double t) {
    const auto c = s.at(t);
    SnrResult r;
    r.values.resize(c.alpha.size());
    for (Eigen::Index i = 0; i < c.alpha.size(); ++i) {
        const double sigma = std::max(c.sigma[i], kSigmaFloor);
        r.values[i] = c.alpha[i] * c.alpha[i] / (sigma * sigma);
    }
    r.lower_bound = s.snr_lower_bound();
    return r;
}

}  // namespace sdiff

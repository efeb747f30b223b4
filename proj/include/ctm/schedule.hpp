#pragma once

#include <cstddef>
#include <random>
#include <vector>

namespace ctm {

using Rng = std::mt19937_64;

/// Noise-level bookkeeping shared by training and sampling.
struct ScheduleConfig {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    double sigma_data = 0.5;
    std::size_t n_grid = 18;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

/// Descending noise levels t_0 = sigma_max > ... > t_{N-1} = sigma_min.
struct TimeGrid {
    std::vector<double> times;

    std::size_t size() const { return times.size(); }
    double operator[](std::size_t i) const { return times[i]; }
};

/// Indices into a TimeGrid; larger index means lower noise.
struct TrainingTriplet {
    std::size_t t_index = 0;
    std::size_t s_index = 0;
    std::size_t u_index = 0;
};

/// (sigma_max^{1/rho} + xi (sigma_min^{1/rho} - sigma_max^{1/rho}))^rho.
/// xi = 0 and xi = 1 return sigma_max and sigma_min exactly.
double time_from_fraction(const ScheduleConfig& cfg, double xi);

TimeGrid build_time_grid(const ScheduleConfig& cfg);

/// Sampling grid for an n-step sampler: the rho-spaced levels at xi = i/nfe for
/// i < nfe followed by an exact 0. nfe = 2 gives {sigma_max, t_mid, 0}.
std::vector<double> sampling_grid(const ScheduleConfig& cfg, std::size_t nfe);

/// Rho-spaced interpolation between two noise levels (t > s >= 0), n_steps + 1 points,
/// endpoints exact.
std::vector<double> rho_subgrid(double t, double s, std::size_t n_steps, double rho);

/// Half lognormal(-1.2, 1.2^2) clamped to [sigma_min, sigma_max], half the
/// rho-transform of xi ~ U[0, 0.7].
double sample_dsm_time(const ScheduleConfig& cfg, Rng& rng);

/// Uniform over admissible (t, s, u) index combinations with
/// t < u <= s (grid order) and u - t <= max_ode_steps.
class TripletSampler {
public:
    TripletSampler(std::size_t grid_size, std::size_t max_ode_steps);

    TrainingTriplet sample(Rng& rng) const;
    const std::vector<TrainingTriplet>& admissible() const { return admissible_; }

private:
    std::vector<TrainingTriplet> admissible_;
};

/// Convenience wrapper returning noise levels (t, s, u).
struct TripletTimes {
    double t;
    double s;
    double u;
};
TripletTimes sample_training_triplet(const TimeGrid& grid, std::size_t max_ode_steps, Rng& rng);

}  // namespace ctm

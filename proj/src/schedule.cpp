#include "ctm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ctm {

void ScheduleConfig::validate() const {
    if (!(sigma_min > 0.0)) throw std::invalid_argument("schedule.sigma_min must be > 0");
    if (!(sigma_max > sigma_min)) throw std::invalid_argument("schedule.sigma_max must exceed sigma_min");
    if (!(rho >= 1.0)) throw std::invalid_argument("schedule.rho must be >= 1");
    if (!(sigma_data > 0.0)) throw std::invalid_argument("schedule.sigma_data must be > 0");
    if (n_grid < 2) throw std::invalid_argument("schedule.n_grid must be >= 2");
}

double time_from_fraction(const ScheduleConfig& cfg, double xi) {
    if (!(xi >= 0.0 && xi <= 1.0)) {
        throw std::domain_error("time_from_fraction: xi must lie in [0, 1], got " + std::to_string(xi));
    }
    if (xi == 0.0) return cfg.sigma_max;
    if (xi == 1.0) return cfg.sigma_min;
    const double hi = std::pow(cfg.sigma_max, 1.0 / cfg.rho);
    const double lo = std::pow(cfg.sigma_min, 1.0 / cfg.rho);
    return std::pow(hi + xi * (lo - hi), cfg.rho);
}

TimeGrid build_time_grid(const ScheduleConfig& cfg) {
    cfg.validate();
    TimeGrid grid;
    grid.times.reserve(cfg.n_grid);
    const double last = static_cast<double>(cfg.n_grid - 1);
    for (std::size_t i = 0; i < cfg.n_grid; ++i) {
        grid.times.push_back(time_from_fraction(cfg, static_cast<double>(i) / last));
    }
    return grid;
}

std::vector<double> sampling_grid(const ScheduleConfig& cfg, std::size_t nfe) {
    if (nfe < 1) throw std::invalid_argument("sampling_grid: nfe must be >= 1");
    std::vector<double> times;
    times.reserve(nfe + 1);
    for (std::size_t i = 0; i < nfe; ++i) {
        times.push_back(time_from_fraction(cfg, static_cast<double>(i) / static_cast<double>(nfe)));
    }
    times.push_back(0.0);
    return times;
}

std::vector<double> rho_subgrid(double t, double s, std::size_t n_steps, double rho) {
    if (!(t > s && s >= 0.0)) throw std::domain_error("rho_subgrid: requires t > s >= 0");
    if (n_steps < 1) throw std::invalid_argument("rho_subgrid: n_steps must be >= 1");
    const double hi = std::pow(t, 1.0 / rho);
    const double lo = std::pow(s, 1.0 / rho);
    std::vector<double> out(n_steps + 1);
    out.front() = t;
    out.back() = s;
    for (std::size_t i = 1; i < n_steps; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(n_steps);
        out[i] = std::pow(hi + frac * (lo - hi), rho);
    }
    return out;
}

double sample_dsm_time(const ScheduleConfig& cfg, Rng& rng) {
    std::bernoulli_distribution coin(0.5);
    if (coin(rng)) {
        std::normal_distribution<double> z(-1.2, 1.2);
        return std::clamp(std::exp(z(rng)), cfg.sigma_min, cfg.sigma_max);
    }
    std::uniform_real_distribution<double> xi(0.0, 0.7);
    return time_from_fraction(cfg, xi(rng));
}

TripletSampler::TripletSampler(std::size_t grid_size, std::size_t max_ode_steps) {
    if (grid_size < 2) throw std::invalid_argument("TripletSampler: grid needs at least 2 levels");
    if (max_ode_steps < 1) throw std::invalid_argument("training.max_ode_steps must be >= 1");
    for (std::size_t t = 0; t + 1 < grid_size; ++t) {
        const std::size_t u_end = std::min(grid_size - 1, t + max_ode_steps);
        for (std::size_t u = t + 1; u <= u_end; ++u) {
            for (std::size_t s = u; s < grid_size; ++s) {
                admissible_.push_back({t, s, u});
            }
        }
    }
}

TrainingTriplet TripletSampler::sample(Rng& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, admissible_.size() - 1);
    return admissible_[pick(rng)];
}

TripletTimes sample_training_triplet(const TimeGrid& grid, std::size_t max_ode_steps, Rng& rng) {
    const TripletSampler sampler(grid.size(), max_ode_steps);
    const TrainingTriplet tr = sampler.sample(rng);
    return {grid[tr.t_index], grid[tr.s_index], grid[tr.u_index]};
}

}  // namespace ctm

#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ctm/oracle.hpp"

namespace ctm {

/// Denoiser contract D(x, t) evaluated column-wise; column j uses noise level t[j].
using DenoiserFn = std::function<Batch(const Batch& x, const Eigen::VectorXd& t)>;
/// Score contract, same column convention as DenoiserFn.
using ScoreFn = std::function<Batch(const Batch& x, const Eigen::VectorXd& t)>;

DenoiserFn oracle_denoiser(const GaussianMixture& mix);
ScoreFn oracle_score(const GaussianMixture& mix);

enum class SolverMethod { euler, heun };

SolverMethod parse_solver_method(const std::string& name);

/// Visited times and states of one integration; step_count counts denoiser calls.
struct SolveTrace {
    std::vector<double> times;
    std::vector<Batch> states;
    std::size_t step_count = 0;
};

class IntegrationError : public std::runtime_error {
public:
    IntegrationError(const std::string& what, SolveTrace trace)
        : std::runtime_error(what), trace_(std::move(trace)) {}
    const SolveTrace& trace() const { return trace_; }

private:
    SolveTrace trace_;
};

/// One Euler or Heun step of the empirical PF ODE dx/dt = (x - D(x, t)) / t from
/// t to s, column-wise. Columns with s == t are returned unchanged.
/// Heun requires s > 0; `nfe` (optional) accumulates denoiser calls per column.
Batch solver_step(SolverMethod method, const DenoiserFn& den, const Batch& x, const Eigen::VectorXd& t,
                  const Eigen::VectorXd& s, std::size_t* nfe = nullptr);

Point solver_step(SolverMethod method, const DenoiserFn& den, const Point& x, double t, double s);

struct SolveResult {
    Batch x;
    SolveTrace trace;
};

/// Integrates t -> s over the rho-spaced restriction of [s, t] with n_steps steps.
/// A Heun step landing on s = 0 is replaced by an Euler step.
SolveResult solve_ode(SolverMethod method, const DenoiserFn& den, const Batch& x, double t, double s,
                      std::size_t n_steps, double rho = 7.0, bool record_trace = false);

/// Integrates each column from grid[from[j]] to grid[to[j]] along the grid itself
/// (one step per interval). Used as the teacher Solver during training.
Batch solve_on_grid(SolverMethod method, const DenoiserFn& den, const Batch& x, const std::vector<double>& grid,
                    const std::vector<std::size_t>& from, const std::vector<std::size_t>& to);

/// High-accuracy Heun solve standing in for the exact solution map.
/// Uses max(min_steps, steps) rho-spaced steps; steps = 0 selects 4096.
struct ReferenceOptions {
    std::size_t min_steps = 20;
    std::size_t steps = 0;
    double rho = 7.0;
};
Batch reference_solution(const DenoiserFn& den, const Batch& x, double t, double s,
                         const ReferenceOptions& opts = {});

/// x + 2 t dt score(x, t) + sqrt(2 t dt) z with z ~ N(0, I); advances t -> t - dt.
Batch sde_euler_maruyama_step(const ScoreFn& score, const Batch& x, double t, double dt, Rng& rng);

/// Exact map used as ground truth by the order probe.
using ExactMapFn = std::function<Batch(const Batch& x, double t, double s)>;

struct OrderProbeReport {
    std::vector<std::size_t> step_counts;
    std::vector<double> errors;
    double order = 0.0;
    bool saturated = false;  ///< errors at machine noise; the slope is meaningless
    std::string diagnostics;
};

/// Fits log(error) against log(steps) and returns -slope as the empirical order.
/// `method` may be empty to probe the exact map itself (saturation check).
OrderProbeReport convergence_order_probe(const std::function<Batch(const Batch&, double, double, std::size_t)>& method,
                                         const ExactMapFn& exact, const Batch& x, double t, double s,
                                         const std::vector<std::size_t>& step_counts);

/// Convenience: wraps solve_ode(method, den, ...) for the probe.
std::function<Batch(const Batch&, double, double, std::size_t)> solver_integrator(SolverMethod method,
                                                                                  const DenoiserFn& den,
                                                                                  double rho = 7.0);

}  // namespace ctm

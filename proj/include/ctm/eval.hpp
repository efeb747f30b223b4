#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctm/model.hpp"
#include "ctm/oracle.hpp"
#include "ctm/sampling.hpp"
#include "ctm/solvers.hpp"

namespace ctm {

/// Seed used when two samples of different sizes are brought to a common size.
inline constexpr unsigned long long kW1ResampleSeed = 0x5eedULL;

/// 1-D W1 through the order-statistics coupling. Unequal sizes: the larger sample
/// is subsampled without replacement (seeded) to the smaller size.
double wasserstein1(std::vector<double> a, std::vector<double> b, unsigned long long seed = kW1ResampleSeed);

/// Multi-D samples (dim x n): mean of the 1-D W1 over the coordinate axes and
/// n_projections random unit directions. Equals the 1-D distance when dim == 1.
double wasserstein1(const Batch& a, const Batch& b, std::size_t n_projections = 32,
                    unsigned long long seed = kW1ResampleSeed);

/// W1 between a 1-D sample and the data density, using the exact quantile
/// reference of the same size.
double w1_to_data(const Batch& samples, const GaussianMixture& mix);

class NumericIncident : public std::runtime_error {
public:
    NumericIncident(const std::string& what, double time) : std::runtime_error(what), time_(time) {}
    double time() const { return time_; }
private:
    double time_;
};

/// (g(x, t, t) - x) / t^2.
ScoreFn student_score(const CtmNetwork& net, const CtmParams& params);

/// -log p(x) at t_min from the augmented PF ODE integrated t_min -> t_max with Heun on a
/// rho-spaced grid, divergence by per-coordinate central differences and a
/// N(0, t_max^2 I) prior. One value per column.
Eigen::VectorXd nll_pf_ode(const ScoreFn& score, const Batch& x, double t_min, double t_max, std::size_t n_steps);

struct VarianceStep {
    std::size_t step = 0;
    double t = 0.0;
    double variance = 0.0;
    double expected = 0.0;  ///< sigma0^2 + t^2
    double stderr_ = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    bool within_bounds = true;
    bool matches_expected = true;
};

struct VarianceProbeReport {
    double gamma = 0.0;
    double lipschitz = 0.0;
    std::vector<VarianceStep> steps;
    bool bounds_ok = true;
    bool invariance_ok = true;
};

/// Runs n_chains gamma-samplers started on p_T and checks, per step,
///   zeta^-1 Var_n + g^2 t^2 <= Var_{n+1} <= zeta Var_n + g^2 t^2,  zeta = exp(2 L (t_n - sqrt(1-g^2) t_{n+1})),
/// and Var_{n+1} = sigma0^2 + t_{n+1}^2, both within `tolerance_se` standard errors.
VarianceProbeReport variance_probe(const GFn& g, const GaussianMixture& mix, const std::vector<double>& grid,
                                   double gamma, std::size_t n_chains, Rng& rng, double tolerance_se = 3.0);

/// Random smooth field phi(x) = sum_k a_k sin(w_k x + b_k) on 1-D inputs, normalized
/// so that sum_k a_k^2 / 2 = 1.
struct SmoothField {
    Eigen::VectorXd amplitude, frequency, phase;
    static SmoothField random(std::size_t n_terms, unsigned long long seed);
    Batch operator()(const Batch& x) const;
};

/// G(x, t, s) + eps (1 - s/t) phi(x): a g-level bias of size eps that leaves G(x, t, t) = x.
GFn perturbed_g(GFn base, SmoothField field, double eps);

struct AccumulationOptions {
    std::size_t replicates = 8;
    bool latin_hypercube = true;  ///< stratify prior and noise draws
    double margin_se = 3.0;
};

struct AccumulationRow {
    double gamma = 0.0;
    std::size_t nfe = 0;
    double w1 = 0.0;
    double stderr_ = 0.0;
};

struct AccumulationVerdict {
    std::size_t nfe = 0;
    bool increasing = true;  ///< every consecutive gap positive and above margin_se standard errors
    std::vector<double> gaps;
    std::vector<double> gap_stderr;  ///< paired: from per-replicate differences
};

struct AccumulationTable {
    std::vector<AccumulationRow> rows;
    std::vector<AccumulationVerdict> verdicts;
};

/// Model for replicate r; lets each replicate draw its own perturbation.
using GFactory = std::function<GFn(std::size_t replicate)>;

/// Terminal W1-to-data of gamma-sampling for every (gamma, NFE), averaged over independent
/// replicates. Within a replicate all gammas share the model, prior and noise draws. 1-D only.
AccumulationTable accumulation_study(const GFactory& model, const GaussianMixture& mix,
                                     const ScheduleConfig& schedule, const std::vector<double>& gammas,
                                     const std::vector<std::size_t>& nfes, std::size_t n_samples,
                                     unsigned long long seed, const AccumulationOptions& opts = {});
AccumulationTable accumulation_study(const GFn& g, const GaussianMixture& mix, const ScheduleConfig& schedule,
                                     const std::vector<double>& gammas, const std::vector<std::size_t>& nfes,
                                     std::size_t n_samples, unsigned long long seed,
                                     const AccumulationOptions& opts = {});

/// perturbed_g(base, SmoothField::random(n_terms, field_seed + r), eps) for replicate r.
GFactory perturbed_family(GFn base, std::size_t n_terms, unsigned long long field_seed, double eps);

struct EvalReport {
    double w1 = 0.0;
    Eigen::VectorXd mean_error;
    Eigen::VectorXd variance_error;
    std::optional<double> nll;  ///< mean nats per sample
    std::size_t nfe = 0;
    std::size_t n_samples = 0;
};

EvalReport evaluate_samples(const Batch& samples, const GaussianMixture& mix, std::size_t nfe);

/// sup over a lattice of |g(x, t, t) - E[x0 | x_t = x]| (1-D).
double denoiser_sup_error(const DenoiserFn& den, const GaussianMixture& mix, const std::vector<double>& ts,
                          const std::vector<double>& xs);

}  // namespace ctm

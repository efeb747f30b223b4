#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "ctm/model.hpp"
#include "ctm/oracle.hpp"
#include "ctm/solvers.hpp"

namespace ctm {

/// Trajectory map contract G(x, t, s) for 0 <= s <= t, column-wise at a shared (t, s).
using GFn = std::function<Batch(const Batch& x, double t, double s)>;

/// Exact G of the analytic teacher: closed form for one component, a fine
/// reference solve otherwise.
GFn oracle_g(const GaussianMixture& mix, const ReferenceOptions& opts = {});
GFn student_g(const CtmNetwork& net, const CtmParams& params);

enum class SamplerVariant { ctm_gamma, edm_stochastic };
SamplerVariant parse_sampler_variant(const std::string& name);
std::string to_string(SamplerVariant v);

struct SamplerSpec {
    double gamma = 0.0;
    std::vector<double> grid;  ///< descending, last entry exactly 0
    SamplerVariant variant = SamplerVariant::ctm_gamma;
    unsigned long long seed = 0;
    bool record_trace = false;
    /// gamma in [0, 1] for ctm_gamma, gamma >= 0 for edm_stochastic.
    void validate() const;
};

struct SampleTrace {
    std::vector<double> times;
    std::vector<Batch> states;
};

struct SampleResult {
    Batch x;
    std::size_t nfe = 0;  ///< model evaluations per chain
    std::size_t clamped_steps = 0;
    SampleTrace trace;
};

/// Draws n points from the prior N(0, T^2 I).
Batch prior_sample(double t_max, int dim, std::size_t n, Rng& rng);

/// Iterates x <- G(x, t_n, sqrt(1 - gamma^2) t_{n+1}) then adds N(0, gamma^2 t_{n+1}^2 I);
/// the last step lands on 0 without noise.
SampleResult gamma_sample(const GFn& g, const SamplerSpec& spec, const Batch& x_t, Rng& rng);

/// Churn to t_hat = (1 + gamma) t_n, then one Heun step to t_{n+1} (Euler into 0).
/// t_hat above the first grid level is clamped and counted in clamped_steps.
SampleResult edm_stochastic_sample(const DenoiserFn& den, const SamplerSpec& spec, const Batch& x_t, Rng& rng);

using PosteriorFn = std::function<Eigen::VectorXd(const Point& x, double t)>;

struct RejectionResult {
    Batch kept;
    Eigen::VectorXd kept_scores;
    Eigen::VectorXd candidate_scores;
    std::size_t candidates = 0;
    double average_nfe = 0.0;  ///< per kept sample
};

/// Generates ceil(n_keep / (1 - r)) gamma-samples, ranks them by posterior(x, 0)[k]
/// and keeps the n_keep best.
RejectionResult classifier_rejection_sample(const GFn& g, const SamplerSpec& spec, const PosteriorFn& posterior,
                                            int class_k, double rejection_ratio, std::size_t n_keep, int dim,
                                            Rng& rng);

/// grad_x L(x, y) for the guidance loss; default is the squared distance.
using LossGradFn = std::function<Batch(const Batch& x, const Batch& target)>;
LossGradFn squared_distance_grad();

struct GuidanceOptions {
    std::size_t corrector_steps = 0;  ///< M
    double step_size = 0.0;           ///< zeta
    double guidance_scale = 1.0;      ///< c_t, constant in t
    bool corrector_noise = true;
};

/// gamma-sampling with M Langevin corrector steps at each intermediate t~_{n+1} > 0:
/// x <- x + zeta/2 (score(x, t~) - c grad L(x, x_ref + t~ eps)) + sqrt(zeta) eps'.
SampleResult guided_trajectory_sample(const GFn& g, const ScoreFn& score, const SamplerSpec& spec, const Batch& x_t,
                                      const Batch& x_ref, const LossGradFn& loss_grad, const GuidanceOptions& opts,
                                      Rng& rng);

}  // namespace ctm

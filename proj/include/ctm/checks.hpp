#pragma once

#include <string>
#include <vector>

#include "ctm/config.hpp"
#include "ctm/eval.hpp"
#include "json.hpp"

namespace ctm {

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct Lemma1Report {
    std::vector<double> gaps;    ///< t - s
    std::vector<double> errors;  ///< sup_x |g(x, t, s) - D(x, t)|
    double slope = 0.0;
};

/// Oracle g(x, t, s) = (G(x, t, s) - (s/t) x) / (1 - s/t) against the denoiser as s -> t.
Lemma1Report lemma1_probe(const GaussianMixture& mix, double t, const std::vector<double>& gaps,
                          const std::vector<double>& xs);

struct BilipReport {
    double min_ratio = 0.0;
    double max_ratio = 0.0;
    double lower_bound = 0.0;  ///< exp(-L (t - s)); single Gaussian only, else 0
    double upper_bound = 0.0;  ///< exp(L (t - s)); single Gaussian only, else +inf
    bool order_preserved = true;
};

/// |G(x) - G(y)| / |x - y| over sorted random 1-D points pushed through the exact map.
BilipReport bilip_probe(const GaussianMixture& mix, double t, double s, std::size_t n_points, Rng& rng);

struct SolverOrderReport {
    OrderProbeReport euler;
    OrderProbeReport heun;
};

/// Euler and Heun against the closed-form single-Gaussian map.
SolverOrderReport solver_order_probe(const GaussianMixture& single, double t, double s,
                                     const std::vector<std::size_t>& step_counts);

struct NllLatticeReport {
    std::vector<double> xs;
    std::vector<double> estimated;
    std::vector<double> analytic;
    double max_error = 0.0;
    double self_convergence = 0.0;  ///< max |NLL(n) - NLL(2n)|
};

/// Oracle-score NLL at evenly spaced 1-D points against -log p_{t_min}.
NllLatticeReport nll_lattice(const ScoreFn& score, const GaussianMixture& mix, const std::vector<double>& xs,
                             double t_min, double t_max, std::size_t n_steps);

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string summary;
    nlohmann::json details;
};

const std::vector<std::string>& suite_names();

/// Runs one suite (or every suite for "all") against the analytic teacher.
/// Unknown names throw std::invalid_argument.
std::vector<SuiteResult> run_check(const std::string& suite, const RunConfig& cfg);

}  // namespace ctm

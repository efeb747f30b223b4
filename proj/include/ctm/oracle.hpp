#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "ctm/schedule.hpp"

namespace ctm {

using Point = Eigen::VectorXd;
/// A batch of points, one per column (dim x count).
using Batch = Eigen::MatrixXd;

/// Raised when a density, posterior or score is requested where the mixture
/// density underflows to zero.
class ZeroDensityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnsupportedMixtureError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Isotropic Gaussian mixture used as the analytic teacher. Every quantity of the
/// forward process dx = sqrt(2t) dw started from this mixture is closed form:
/// p_t = sum_k w_k N(mu_k, (sigma_k^2 + t^2) I).
class GaussianMixture {
public:
    GaussianMixture(std::vector<double> weights, std::vector<Point> means, std::vector<double> stds);

    static GaussianMixture standard_normal(int dim = 1);
    /// Equal-weight modes at -1 and +1 with the given std (1-D).
    static GaussianMixture two_mode(double std = 0.2);

    int dim() const { return dim_; }
    std::size_t components() const { return weights_.size(); }
    const std::vector<double>& weights() const { return weights_; }
    const std::vector<Point>& means() const { return means_; }
    const std::vector<double>& stds() const { return stds_; }

    double log_density_t(const Point& x, double t) const;
    Point score_t(const Point& x, double t) const;
    /// E[x_0 | x_t = x], defined for t > 0.
    Point denoiser_t(const Point& x, double t) const;
    /// p(k | x_t = x); sums to one.
    Eigen::VectorXd class_posterior(const Point& x, double t) const;

    Batch sample_marginal(double t, std::size_t n, Rng& rng) const;
    /// Same as sample_marginal, also reporting the component each draw came from.
    Batch sample_marginal(double t, std::size_t n, Rng& rng, std::vector<int>& labels) const;

    Batch denoise_batch(const Batch& x, const Eigen::VectorXd& t) const;

    /// Mean and per-coordinate variance of p_t.
    Point marginal_mean() const;
    double marginal_variance(int coord, double t) const;

    /// 1-D only: CDF and quantile of p_t.
    double cdf_t(double x, double t) const;
    double quantile_t(double p, double t) const;

    /// Sup over t of the Lipschitz constant of the PF ODE velocity for a single
    /// component: max(1 / sigma_0^2, 1 / (2 sigma_0)).
    double single_component_lipschitz() const;

private:
    /// log(w_k) + log N(x; mu_k, v_k I) for each component.
    Eigen::VectorXd component_log_terms(const Point& x, double t) const;

    int dim_;
    std::vector<double> weights_;
    std::vector<Point> means_;
    std::vector<double> stds_;
};

/// Closed-form PF ODE solution for a single Gaussian N(mu, sigma0^2 I):
/// mu + (x - mu) sqrt((sigma0^2 + s^2) / (sigma0^2 + t^2)).
Point exact_transition_single_gaussian(const Point& mu, double sigma0, const Point& x, double t, double s);

/// Dispatches to the closed form; throws UnsupportedMixtureError for more than one component.
Point exact_transition(const GaussianMixture& mix, const Point& x, double t, double s);

/// Sorted quantile reference sample F^{-1}((i + 1/2) / n) of the 1-D data density.
std::vector<double> quantile_reference(const GaussianMixture& mix, std::size_t n);

}  // namespace ctm

#include "ctm/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace ctm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double log_sum_exp(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

GaussianMixture::GaussianMixture(std::vector<double> weights, std::vector<Point> means, std::vector<double> stds)
    : weights_(std::move(weights)), means_(std::move(means)), stds_(std::move(stds)) {
    if (weights_.empty()) throw std::invalid_argument("mixture: at least one component required");
    if (means_.size() != weights_.size() || stds_.size() != weights_.size()) {
        throw std::invalid_argument("mixture: weights, means and stds must have equal length");
    }
    dim_ = static_cast<int>(means_.front().size());
    if (dim_ < 1) throw std::invalid_argument("mixture: dim must be >= 1");
    double total = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        if (!(weights_[k] >= 0.0)) throw std::invalid_argument("mixture: weights must be non-negative");
        if (!(stds_[k] >= 0.0)) throw std::invalid_argument("mixture: stds must be non-negative");
        if (means_[k].size() != dim_) {
            throw std::invalid_argument("mixture: mean " + std::to_string(k) + " has wrong dimension");
        }
        total += weights_[k];
    }
    if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture: weights must sum to 1");
}

GaussianMixture GaussianMixture::standard_normal(int dim) {
    return GaussianMixture({1.0}, {Point::Zero(dim)}, {1.0});
}

GaussianMixture GaussianMixture::two_mode(double std) {
    return GaussianMixture({0.5, 0.5}, {Point::Constant(1, -1.0), Point::Constant(1, 1.0)}, {std, std});
}

Eigen::VectorXd GaussianMixture::component_log_terms(const Point& x, double t) const {
    if (!(t >= 0.0)) throw std::domain_error("mixture: noise level must be >= 0");
    if (x.size() != dim_) throw std::invalid_argument("mixture: point has wrong dimension");
    const std::size_t k_count = weights_.size();
    Eigen::VectorXd out(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
        const double var = stds_[k] * stds_[k] + t * t;
        const double sq = (x - means_[k]).squaredNorm();
        if (weights_[k] == 0.0) {
            out[k] = -std::numeric_limits<double>::infinity();
        } else if (var == 0.0) {
            out[k] = sq == 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        } else {
            out[k] = std::log(weights_[k]) - 0.5 * dim_ * (kLog2Pi + std::log(var)) - 0.5 * sq / var;
        }
    }
    return out;
}

double GaussianMixture::log_density_t(const Point& x, double t) const {
    return log_sum_exp(component_log_terms(x, t));
}

Eigen::VectorXd GaussianMixture::class_posterior(const Point& x, double t) const {
    const Eigen::VectorXd logs = component_log_terms(x, t);
    const double m = logs.maxCoeff();
    Eigen::VectorXd post(logs.size());
    if (m == std::numeric_limits<double>::infinity()) {
        // Point masses sitting exactly at x absorb all posterior mass.
        for (Eigen::Index k = 0; k < logs.size(); ++k) post[k] = std::isinf(logs[k]) && logs[k] > 0 ? weights_[k] : 0.0;
    } else if (!std::isfinite(m)) {
        throw ZeroDensityError("mixture: density is zero at the query point");
    } else {
        post = (logs.array() - m).exp();
    }
    const double total = post.sum();
    if (!(total > 0.0)) throw ZeroDensityError("mixture: density is zero at the query point");
    return post / total;
}

Point GaussianMixture::score_t(const Point& x, double t) const {
    const Eigen::VectorXd post = class_posterior(x, t);
    Point score = Point::Zero(dim_);
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        if (post[k] == 0.0) continue;
        const double var = stds_[k] * stds_[k] + t * t;
        if (var == 0.0) throw ZeroDensityError("mixture: score undefined on a point mass at t = 0");
        score -= post[k] * (x - means_[k]) / var;
    }
    return score;
}

Point GaussianMixture::denoiser_t(const Point& x, double t) const {
    if (!(t > 0.0)) throw std::domain_error("denoiser_t: requires t > 0");
    const Eigen::VectorXd post = class_posterior(x, t);
    // Posterior mean of each component, weighted by responsibilities. Algebraically
    // identical to x + t^2 score but without the cancellation at small t.
    Point out = Point::Zero(dim_);
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        if (post[k] == 0.0) continue;
        const double s2 = stds_[k] * stds_[k];
        const double shrink = s2 / (s2 + t * t);
        out += post[k] * (means_[k] + shrink * (x - means_[k]));
    }
    return out;
}

Batch GaussianMixture::denoise_batch(const Batch& x, const Eigen::VectorXd& t) const {
    Batch out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = denoiser_t(x.col(j), t[j]);
    return out;
}

Batch GaussianMixture::sample_marginal(double t, std::size_t n, Rng& rng) const {
    std::vector<int> labels;
    return sample_marginal(t, n, rng, labels);
}

Batch GaussianMixture::sample_marginal(double t, std::size_t n, Rng& rng, std::vector<int>& labels) const {
    if (!(t >= 0.0)) throw std::domain_error("sample_marginal: requires t >= 0");
    std::discrete_distribution<int> pick(weights_.begin(), weights_.end());
    std::normal_distribution<double> normal(0.0, 1.0);
    Batch out(dim_, static_cast<Eigen::Index>(n));
    labels.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const int k = weights_.size() == 1 ? 0 : pick(rng);
        labels[j] = k;
        const double sd = std::sqrt(stds_[k] * stds_[k] + t * t);
        for (int d = 0; d < dim_; ++d) out(d, static_cast<Eigen::Index>(j)) = means_[k][d] + sd * normal(rng);
    }
    return out;
}

Point GaussianMixture::marginal_mean() const {
    Point m = Point::Zero(dim_);
    for (std::size_t k = 0; k < weights_.size(); ++k) m += weights_[k] * means_[k];
    return m;
}

double GaussianMixture::marginal_variance(int coord, double t) const {
    const double mean = marginal_mean()[coord];
    double second = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        const double mk = means_[k][coord];
        second += weights_[k] * (stds_[k] * stds_[k] + t * t + mk * mk);
    }
    return second - mean * mean;
}

double GaussianMixture::cdf_t(double x, double t) const {
    if (dim_ != 1) throw UnsupportedMixtureError("cdf_t: 1-D mixtures only");
    double c = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        const double sd = std::sqrt(stds_[k] * stds_[k] + t * t);
        if (sd == 0.0) {
            c += weights_[k] * (x >= means_[k][0] ? 1.0 : 0.0);
        } else {
            c += weights_[k] * normal_cdf((x - means_[k][0]) / sd);
        }
    }
    return c;
}

double GaussianMixture::quantile_t(double p, double t) const {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("quantile_t: p must lie in (0, 1)");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        const double sd = std::sqrt(stds_[k] * stds_[k] + t * t);
        lo = std::min(lo, means_[k][0] - 40.0 * sd - 1.0);
        hi = std::max(hi, means_[k][0] + 40.0 * sd + 1.0);
    }
    for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (cdf_t(mid, t) < p) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

double GaussianMixture::single_component_lipschitz() const {
    if (weights_.size() != 1) throw UnsupportedMixtureError("lipschitz bound: single component only");
    const double s0 = stds_.front();
    if (!(s0 > 0.0)) throw UnsupportedMixtureError("lipschitz bound: needs sigma_0 > 0");
    return std::max(1.0 / (s0 * s0), 1.0 / (2.0 * s0));
}

Point exact_transition_single_gaussian(const Point& mu, double sigma0, const Point& x, double t, double s) {
    if (!(t > 0.0 && s >= 0.0 && s <= t)) throw std::domain_error("exact transition: requires t > 0 and 0 <= s <= t");
    if (s == t) return x;
    const double s2 = sigma0 * sigma0;
    return mu + (x - mu) * std::sqrt((s2 + s * s) / (s2 + t * t));
}

Point exact_transition(const GaussianMixture& mix, const Point& x, double t, double s) {
    if (mix.components() != 1) {
        throw UnsupportedMixtureError("exact transition is closed form for a single Gaussian only; use reference_solution");
    }
    return exact_transition_single_gaussian(mix.means().front(), mix.stds().front(), x, t, s);
}

std::vector<double> quantile_reference(const GaussianMixture& mix, std::size_t n) {
    std::vector<double> q(n);
    for (std::size_t i = 0; i < n; ++i) {
        q[i] = mix.quantile_t((static_cast<double>(i) + 0.5) / static_cast<double>(n), 0.0);
    }
    return q;
}

}  // namespace ctm

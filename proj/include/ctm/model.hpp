#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>

#include "ctm/mlp.hpp"
#include "ctm/oracle.hpp"
#include "ctm/solvers.hpp"
#include "ctm/schedule.hpp"

namespace ctm {

struct CtmArchitecture {
    int dim = 1;
    int width = 128;
    int depth = 3;
    int n_frequencies = 16;

    void validate() const;
};

/// Trainable weights (flat) plus the fixed embedding frequency table.
struct CtmParams {
    Eigen::VectorXd values;
    Eigen::VectorXd frequencies;

    std::size_t count() const { return static_cast<std::size_t>(values.size()); }
};

struct EmaState {
    Eigen::VectorXd shadow;
    double decay = 0.999;
};

class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(const std::string& what, std::size_t index) : std::runtime_error(what), index_(index) {}
    std::size_t index() const { return index_; }

private:
    std::size_t index_;
};

/// The student g_theta(x, t, s) and its trajectory map
/// G_theta(x, t, s) = (s/t) x + (1 - s/t) g_theta(x, t, s).
///
/// g_theta uses EDM preconditioning:
///   g = sigma_d^2 / (t^2 + sigma_d^2) x + t sigma_d / sqrt(t^2 + sigma_d^2) NN(c_in x, emb),
/// with c_in = 1 / sqrt(t^2 + sigma_d^2). The NN input is [c_in x, f(t), f(t) + f(s)]
/// where f is a Fourier feature map of log(1 + t / sigma_min).
class CtmNetwork {
public:
    CtmNetwork(CtmArchitecture arch, ScheduleConfig schedule);

    const CtmArchitecture& architecture() const { return arch_; }
    const ScheduleConfig& schedule() const { return schedule_; }
    const Mlp& mlp() const { return mlp_; }
    std::size_t parameter_count() const { return mlp_.parameter_count(); }

    CtmParams init_params(Rng& rng) const;

    /// Fourier features (sin block, cos block) of one noise level; t = 0 is valid.
    Eigen::VectorXd time_features(const CtmParams& params, double t) const;
    /// f(t) + f(s).
    Eigen::VectorXd embed_times(const CtmParams& params, double t, double s) const;

    struct Cache {
        Mlp::Cache mlp;
        Eigen::VectorXd t;
        Eigen::VectorXd s;
        Eigen::VectorXd c_in;
        Eigen::VectorXd c_skip;
        Eigen::VectorXd c_out;
    };

    /// Column j is evaluated at (t[j], s[j]).
    Batch g_forward(const CtmParams& params, const Batch& x, const Eigen::VectorXd& t, const Eigen::VectorXd& s,
                    Cache* cache = nullptr) const;
    Batch big_g_forward(const CtmParams& params, const Batch& x, const Eigen::VectorXd& t, const Eigen::VectorXd& s,
                        Cache* cache = nullptr) const;

    /// Reverse passes: add dL/dtheta into grad (if non-null), return dL/dx.
    Batch g_backward(const CtmParams& params, const Cache& cache, const Batch& d_g, Eigen::VectorXd* grad) const;
    Batch big_g_backward(const CtmParams& params, const Cache& cache, const Batch& d_big_g,
                         Eigen::VectorXd* grad) const;

    /// Single-point conveniences.
    Point g_forward(const CtmParams& params, const Point& x, double t, double s) const;
    Point big_g_forward(const CtmParams& params, const Point& x, double t, double s) const;

    /// Denoiser view x -> g_theta(x, t, t).
    DenoiserFn denoiser(const CtmParams& params) const;

private:
    Eigen::MatrixXd build_input(const CtmParams& params, const Batch& x, const Eigen::VectorXd& t,
                                const Eigen::VectorXd& s, const Eigen::VectorXd& c_in) const;
    void check_params(const CtmParams& params) const;

    CtmArchitecture arch_;
    ScheduleConfig schedule_;
    Mlp mlp_;
    double log_norm_;
};

/// Scalar loss evaluated at params; writes dL/dparams (same size) into grad.
using LossClosure = std::function<double(const Eigen::VectorXd& params, Eigen::VectorXd& grad)>;

struct LossAndGradient {
    double loss = 0.0;
    Eigen::VectorXd gradient;
};

/// Runs the closure's reverse pass and rejects non-finite results, naming the
/// first offending parameter index.
LossAndGradient loss_gradient(const Eigen::VectorXd& params, const LossClosure& closure);

/// shadow <- decay * shadow + (1 - decay) * params.
void ema_update(EmaState& ema, const Eigen::VectorXd& params);

/// Checkpoint: one line of JSON metadata, then the flat parameter vector and the EMA
/// shadow as little-endian float64.
struct Checkpoint {
    CtmArchitecture architecture;
    ScheduleConfig schedule;
    CtmParams params;
    EmaState ema;
    std::size_t iteration = 0;
    std::string config_hash;
    unsigned long long seed = 0;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ctm

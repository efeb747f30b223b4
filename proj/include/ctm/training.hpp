#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ctm/mlp.hpp"
#include "ctm/model.hpp"
#include "ctm/oracle.hpp"
#include "ctm/schedule.hpp"
#include "ctm/solvers.hpp"

namespace ctm {

enum class TeacherMode { oracle, pretrained_free };

TeacherMode parse_teacher_mode(const std::string& name);
std::string to_string(TeacherMode mode);

struct TrainConfig {
    double lambda_dsm = 1.0;
    double lambda_gan = 1.0;
    std::optional<std::size_t> gan_warmup_iters;  ///< defaults to total_iters / 2
    double learning_rate = 4e-4;
    double disc_learning_rate = 2e-3;
    std::size_t batch_size = 256;
    std::size_t total_iters = 20000;
    TeacherMode teacher = TeacherMode::oracle;
    double ema_decay = 0.999;
    std::size_t max_ode_steps = 17;
    SolverMethod solver = SolverMethod::heun;
    int disc_width = 128;
    int disc_depth = 3;
    std::size_t checkpoint_every = 0;  ///< 0 disables periodic checkpoints
    /// Also let s and u take the terminal level 0, so G(., t, 0) (the generator) is
    /// trained directly and not only reached through the frozen outer map.
    bool terminal_zero = true;

    void validate() const;
    std::size_t warmup() const { return gan_warmup_iters.value_or(total_iters / 2); }
};

/// First/second-moment optimizer (beta = (0.9, 0.999), eps = 1e-8, no weight decay).
struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    std::size_t steps = 0;

    explicit AdamState(Eigen::Index n = 0) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
    /// Moves params along -grad (descent).
    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);
};

/// Discriminator d_eta: MLP on data space with a sigmoid head.
class Discriminator {
public:
    Discriminator(int dim, int width, int depth) : mlp_(dim, 1, width, depth) {}
    const Mlp& mlp() const { return mlp_; }
    Eigen::VectorXd init_params(Rng& rng) const;
    /// Pre-sigmoid logits, 1 x batch.
    Eigen::MatrixXd logits(const Eigen::VectorXd& eta, const Batch& x, Mlp::Cache* cache = nullptr) const;

private:
    Mlp mlp_;
};

struct TrainState {
    CtmParams params;
    EmaState ema;
    Eigen::VectorXd disc;
    AdamState opt_theta;
    AdamState opt_disc;
    std::size_t iteration = 0;
    std::size_t incidents = 0;
    Rng rng;
};

struct LossBreakdown {
    double ctm = 0.0;
    double dsm = 0.0;
    double gan_g = 0.0;  ///< E[log(1 - d(x_est))]
    double gan_d = 0.0;  ///< E[log d(x_0)] + E[log(1 - d(x_est))]
    double total = 0.0;  ///< ctm + lambda_dsm dsm + lambda_gan_effective gan_g
    double lambda_dsm = 0.0;
    double lambda_gan_effective = 0.0;
};

/// One minibatch of training inputs. Column j of x0/noise pairs
/// with triplets[j]; the DSM term uses its own times and noise on the same x0.
struct TrainBatch {
    Batch x0;
    Batch noise;
    std::vector<TrainingTriplet> triplets;
    Eigen::VectorXd dsm_times;
    Batch dsm_noise;
};

/// Forward record of x_est = G_sg(G_theta(x_t, t, s), s, 0).
struct EstimateForward {
    Batch inner;  ///< G_theta(x_t, t, s)
    Batch x_est;
    CtmNetwork::Cache inner_cache;
    CtmNetwork::Cache outer_cache;
};

EstimateForward forward_estimate(const CtmNetwork& net, const CtmParams& theta, const CtmParams& frozen,
                                 const Batch& x_t, const Eigen::VectorXd& t, const Eigen::VectorXd& s);

/// Reverse pass of x_est; only the inner G_theta contributes parameter gradients.
void backward_estimate(const CtmNetwork& net, const CtmParams& theta, const CtmParams& frozen,
                       const EstimateForward& fwd, const Batch& d_x_est, Eigen::VectorXd& grad_theta);

/// x_target = G_sg(G_sg(Solver(x_t, t, u), u, s), s, 0), with Solver stepping along
/// the training grid using `teacher` as the denoiser. No gradients.
Batch ctm_target(const CtmNetwork& net, const CtmParams& frozen, const DenoiserFn& teacher, SolverMethod solver,
                 const TimeGrid& grid, const Batch& x_t, const std::vector<TrainingTriplet>& triplets);

/// Target built with the frozen copy's own denoiser g_sg(x, t, t) as teacher.
Batch pretrained_free_target(const CtmNetwork& net, const CtmParams& frozen, SolverMethod solver,
                             const TimeGrid& grid, const Batch& x_t, const std::vector<TrainingTriplet>& triplets);

struct CtmLossResult {
    double loss = 0.0;
    EstimateForward estimate;
    Batch x_target;
    Batch d_x_est;  ///< dL_CTM / dx_est
};

/// Mean squared data-space distance between x_target and x_est.
CtmLossResult ctm_loss(const CtmNetwork& net, const CtmParams& theta, const CtmParams& frozen,
                       const DenoiserFn& teacher, SolverMethod solver, const TimeGrid& grid, const Batch& x_t,
                       const std::vector<TrainingTriplet>& triplets);

/// Mean ||x0 - g_theta(x0 + t eps, t, t)||^2; adds weight * dL/dtheta into grad when given.
double dsm_loss(const CtmNetwork& net, const CtmParams& theta, const Batch& x0, const Eigen::VectorXd& t,
                const Batch& noise, Eigen::VectorXd* grad = nullptr, double weight = 1.0);

struct GanResult {
    double generator = 0.0;      ///< E[log(1 - d(generated))]
    double discriminator = 0.0;  ///< E[log d(real)] + generator
    Batch d_generated;           ///< d generator / d generated
    Eigen::VectorXd grad_eta;    ///< d discriminator / d eta
};

/// Logs are clamped below at log(1e-7); clamped entries pass no gradient.
GanResult gan_losses(const Discriminator& disc, const Eigen::VectorXd& eta, const Batch& real,
                     const Batch& generated, bool want_gradients = true);

struct TotalLossResult {
    LossBreakdown breakdown;
    Eigen::VectorXd grad_theta;
    Eigen::VectorXd grad_eta;  ///< ascent direction for the discriminator
};

class Trainer {
public:
    Trainer(CtmNetwork net, GaussianMixture mix, TrainConfig cfg);

    const CtmNetwork& network() const { return net_; }
    const GaussianMixture& mixture() const { return mix_; }
    const TrainConfig& config() const { return cfg_; }
    /// Training levels: the schedule grid, plus a trailing 0 when terminal_zero is set.
    const TimeGrid& grid() const { return grid_; }
    const Discriminator& discriminator() const { return disc_; }

    TrainState init_state(unsigned long long seed) const;

    TrainBatch draw_batch(Rng& rng) const;

    /// Teacher denoiser for the current state (oracle or the frozen student).
    DenoiserFn teacher(const TrainState& state) const;

    /// L = L_CTM + lambda_DSM L_DSM + lambda_GAN L_GAN at the given iteration; lambda_GAN
    /// is zero before the warm-up ends. Gradients with respect to theta (descent) and eta.
    TotalLossResult total_loss(const TrainState& state, const TrainBatch& batch) const;

    /// One optimizer step on theta and (after warm-up) eta, then EMA. A non-finite
    /// loss or gradient leaves parameters, optimizer moments, EMA and iteration untouched
    /// and increments state.incidents.
    LossBreakdown train_step(TrainState& state) const;

private:
    CtmNetwork net_;
    GaussianMixture mix_;
    TrainConfig cfg_;
    TimeGrid grid_;
    TripletSampler triplets_;
    Discriminator disc_;
};

/// Runs total_iters steps; `on_step` sees every breakdown (e.g. for CSV output).
void run_training(const Trainer& trainer, TrainState& state,
                  const std::function<void(const TrainState&, const LossBreakdown&)>& on_step = {});

}  // namespace ctm

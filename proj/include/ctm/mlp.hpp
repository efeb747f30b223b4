#pragma once

#include <Eigen/Dense>
#include <vector>

#include "ctm/schedule.hpp"

namespace ctm {

/// Fully connected network with SiLU hidden activations and a linear head.
/// Parameters live in a caller-owned flat vector; the Mlp only knows the layout.
class Mlp {
public:
    Mlp() = default;
    Mlp(int in_dim, int out_dim, int width, int depth);

    int in_dim() const { return in_dim_; }
    int out_dim() const { return out_dim_; }
    int width() const { return width_; }
    int depth() const { return depth_; }
    std::size_t parameter_count() const { return count_; }

    /// Activations recorded by forward() for the matching backward().
    struct Cache {
        std::vector<Eigen::MatrixXd> inputs;  ///< input to each layer
        std::vector<Eigen::MatrixXd> pre;     ///< pre-activations of hidden layers
    };

    /// He-style uniform init; the output layer is zeroed when zero_head is set.
    void initialize(Eigen::Ref<Eigen::VectorXd> params, Rng& rng, bool zero_head) const;

    /// in: in_dim x batch. Returns out_dim x batch.
    Eigen::MatrixXd forward(const Eigen::Ref<const Eigen::VectorXd>& params, const Eigen::MatrixXd& in,
                            Cache* cache = nullptr) const;

    /// Vector-Jacobian product. Adds dL/dparams into grad (when non-null) and
    /// returns dL/din.
    Eigen::MatrixXd backward(const Eigen::Ref<const Eigen::VectorXd>& params, const Cache& cache,
                             const Eigen::MatrixXd& d_out, Eigen::VectorXd* grad, std::size_t grad_offset = 0) const;

private:
    struct Layer {
        int rows;
        int cols;
        std::size_t weight_offset;
        std::size_t bias_offset;
    };

    int in_dim_ = 0;
    int out_dim_ = 0;
    int width_ = 0;
    int depth_ = 0;
    std::size_t count_ = 0;
    std::vector<Layer> layers_;
};

}  // namespace ctm

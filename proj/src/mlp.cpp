#include "ctm/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace ctm {

namespace {

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return 1.0 / (1.0 + (-z).exp()); }

}  // namespace

Mlp::Mlp(int in_dim, int out_dim, int width, int depth)
    : in_dim_(in_dim), out_dim_(out_dim), width_(width), depth_(depth) {
    if (in_dim < 1 || out_dim < 1 || width < 1 || depth < 1) {
        throw std::invalid_argument("mlp: dimensions, width and depth must be >= 1");
    }
    int prev = in_dim;
    for (int l = 0; l <= depth; ++l) {
        const int rows = (l == depth) ? out_dim : width;
        Layer layer{rows, prev, count_, 0};
        count_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(prev);
        layer.bias_offset = count_;
        count_ += static_cast<std::size_t>(rows);
        layers_.push_back(layer);
        prev = rows;
    }
}

void Mlp::initialize(Eigen::Ref<Eigen::VectorXd> params, Rng& rng, bool zero_head) const {
    if (static_cast<std::size_t>(params.size()) != count_) throw std::invalid_argument("mlp: parameter size mismatch");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        const bool head = (l + 1 == layers_.size());
        const double bound = (head && zero_head) ? 0.0 : std::sqrt(6.0 / static_cast<double>(layer.cols));
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const std::size_t n = static_cast<std::size_t>(layer.rows) * static_cast<std::size_t>(layer.cols);
        for (std::size_t i = 0; i < n; ++i) params[layer.weight_offset + i] = bound * u(rng);
        for (int i = 0; i < layer.rows; ++i) params[layer.bias_offset + i] = 0.0;
    }
}

Eigen::MatrixXd Mlp::forward(const Eigen::Ref<const Eigen::VectorXd>& params, const Eigen::MatrixXd& in,
                             Cache* cache) const {
    if (static_cast<std::size_t>(params.size()) != count_) throw std::invalid_argument("mlp: parameter size mismatch");
    if (in.rows() != in_dim_) throw std::invalid_argument("mlp: input has wrong dimension");
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    Eigen::MatrixXd h = in;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        Eigen::Map<const Eigen::MatrixXd> w(params.data() + layer.weight_offset, layer.rows, layer.cols);
        Eigen::Map<const Eigen::VectorXd> b(params.data() + layer.bias_offset, layer.rows);
        Eigen::MatrixXd z = w * h;
        z.colwise() += b;
        if (cache) cache->inputs.push_back(std::move(h));
        if (l + 1 == layers_.size()) return z;
        Eigen::MatrixXd a = (z.array() * sigmoid(z.array())).matrix();
        if (cache) cache->pre.push_back(std::move(z));
        h = std::move(a);
    }
    return h;
}

Eigen::MatrixXd Mlp::backward(const Eigen::Ref<const Eigen::VectorXd>& params, const Cache& cache,
                              const Eigen::MatrixXd& d_out, Eigen::VectorXd* grad, std::size_t grad_offset) const {
    if (cache.inputs.size() != layers_.size()) throw std::invalid_argument("mlp: cache does not match network");
    Eigen::MatrixXd delta = d_out;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const Layer& layer = layers_[li];
        if (li + 1 < layers_.size()) {
            const Eigen::ArrayXXd& z = cache.pre[li].array();
            const Eigen::ArrayXXd sig = sigmoid(z);
            delta = (delta.array() * (sig * (1.0 + z * (1.0 - sig)))).matrix();
        }
        if (grad) {
            Eigen::Map<Eigen::MatrixXd> gw(grad->data() + grad_offset + layer.weight_offset, layer.rows, layer.cols);
            Eigen::Map<Eigen::VectorXd> gb(grad->data() + grad_offset + layer.bias_offset, layer.rows);
            gw.noalias() += delta * cache.inputs[li].transpose();
            gb += delta.rowwise().sum();
        }
        Eigen::Map<const Eigen::MatrixXd> w(params.data() + layer.weight_offset, layer.rows, layer.cols);
        delta = w.transpose() * delta;
    }
    return delta;
}

}  // namespace ctm

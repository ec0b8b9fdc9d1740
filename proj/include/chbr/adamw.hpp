#pragma once

#include <cmath>
#include <cstddef>

#include <Eigen/Core>

namespace chbr {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

/// Adaptive-moment optimizer with decoupled weight decay. The update follows
/// the operation order of the common PyTorch implementation so trajectories
/// can be compared against it.
template <typename Scalar>
class AdamW {
   public:
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    AdamW(AdamWConfig config, Eigen::Index size)
        : config_(config), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

    void step(Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grad) {
        ++t_;
        const Scalar lr = config_.learning_rate;
        params *= Scalar(1) - lr * Scalar(config_.weight_decay);
        m_ += (grad - m_) * Scalar(1 - config_.beta1);
        v_ = v_ * Scalar(config_.beta2) + grad.cwiseProduct(grad) * Scalar(1 - config_.beta2);
        const Scalar bias1 = Scalar(1) - std::pow(Scalar(config_.beta1), Scalar(t_));
        const Scalar bias2 = Scalar(1) - std::pow(Scalar(config_.beta2), Scalar(t_));
        const Scalar step_size = lr / bias1;
        const Vector denom = (v_.array().sqrt() / std::sqrt(bias2)) + Scalar(config_.epsilon);
        params.array() -= step_size * (m_.array() / denom.array());
    }

    std::size_t steps() const { return t_; }

   private:
    AdamWConfig config_;
    Vector m_;
    Vector v_;
    std::size_t t_ = 0;
};

}  // namespace chbr

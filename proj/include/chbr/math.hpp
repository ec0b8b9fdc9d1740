#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "chbr/error.hpp"

namespace chbr {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    if (x.size() == 0) return -std::numeric_limits<Scalar>::infinity();
    const Scalar m = x.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((x.array() - m).exp().sum());
}

/// Softmax with max subtraction.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(const Eigen::MatrixBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = (x.array() - x.maxCoeff()).exp();
    return e / e.sum();
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax(const Eigen::MatrixBase<Derived>& x) {
    return x.array() - log_sum_exp(x);
}

/// -sum p log p in nats, with 0 log 0 = 0. Requires a distribution.
template <typename Derived>
typename Derived::Scalar shannon_entropy(const Eigen::MatrixBase<Derived>& p) {
    using Scalar = typename Derived::Scalar;
    require(p.size() > 0, "entropy of an empty vector");
    Scalar total = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        require(p(i) >= 0 && std::isfinite(p(i)), "entropy: entries must be finite and non-negative");
        total += p(i);
    }
    require(std::abs(total - Scalar(1)) <= Scalar(1e-6), "entropy: probabilities sum to " + std::to_string(total));
    Scalar h = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (p(i) > 0) h -= p(i) * std::log(p(i));
    return h;
}

/// Entropy of softmax(logits) computed from log-probabilities, so entries
/// that underflow to zero probability stay finite.
template <typename Derived>
typename Derived::Scalar softmax_entropy(const Eigen::MatrixBase<Derived>& logits) {
    const auto logp = log_softmax(logits);
    return -(logp.array().exp() * logp.array()).sum();
}

}  // namespace chbr

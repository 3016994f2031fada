#pragma once

#include <cmath>
#include <random>

#include "ct/model/params.hpp"

namespace ct::model::ops {

template <typename Real>
Real gelu(Real x) {
    return Real(0.5) * x * (Real(1) + std::erf(x / std::sqrt(Real(2))));
}

template <typename Real>
Real gelu_grad(Real x) {
    const Real cdf = Real(0.5) * (Real(1) + std::erf(x / std::sqrt(Real(2))));
    const Real pdf = std::exp(Real(-0.5) * x * x) / std::sqrt(Real(2) * Real(M_PI));
    return cdf + x * pdf;
}

// Row-wise layer norm. Fills xhat and rstd for the backward pass.
template <typename Real>
Matrix<Real> layer_norm(const Matrix<Real>& x, const Matrix<Real>& gamma, const Matrix<Real>& beta, double eps,
                        Matrix<Real>& xhat, RowVector<Real>& rstd) {
    const auto n = x.rows();
    const auto h = x.cols();
    xhat.resize(n, h);
    rstd.resize(n);
    Matrix<Real> y(n, h);
    for (Eigen::Index r = 0; r < n; ++r) {
        Real mean = x.row(r).mean();
        Real var = (x.row(r).array() - mean).square().mean();
        Real inv = Real(1) / std::sqrt(var + static_cast<Real>(eps));
        rstd(r) = inv;
        xhat.row(r) = (x.row(r).array() - mean) * inv;
        y.row(r) = xhat.row(r).cwiseProduct(gamma.row(0)) + beta.row(0);
    }
    return y;
}

template <typename Real>
Matrix<Real> layer_norm_backward(const Matrix<Real>& dy, const Matrix<Real>& xhat, const RowVector<Real>& rstd,
                                 const Matrix<Real>& gamma, Matrix<Real>& dgamma, Matrix<Real>& dbeta) {
    dgamma.row(0) += (dy.cwiseProduct(xhat)).colwise().sum();
    dbeta.row(0) += dy.colwise().sum();
    const auto h = static_cast<Real>(dy.cols());
    Matrix<Real> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        RowVector<Real> dxhat = dy.row(r).cwiseProduct(gamma.row(0));
        Real mean_d = dxhat.sum() / h;
        Real mean_dx = dxhat.dot(xhat.row(r)) / h;
        dx.row(r) = rstd(r) * (dxhat.array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
    }
    return dx;
}

// Dropout scale matrix: 0 with probability p, else 1/(1-p).
template <typename Real>
Matrix<Real> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64& rng) {
    std::bernoulli_distribution drop(p);
    const Real keep = Real(1) / static_cast<Real>(1.0 - p);
    Matrix<Real> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = drop(rng) ? Real(0) : keep;
    return m;
}

}  // namespace ct::model::ops

#include "ct/contrastive/losses.hpp"

#include <cmath>

#include "ct/common/errors.hpp"

namespace ct::contrastive {

namespace {

using MatD = model::Matrix<double>;

// Row-normalizes m; throws ZeroVector if a row has no direction.
MatD unit_rows(const MatD& m, Eigen::VectorXd& norms) {
    norms = m.rowwise().norm();
    MatD u(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (!(norms(i) > 0.0) || !std::isfinite(norms(i))) throw ZeroVector("embedding row with zero or non-finite norm");
        u.row(i) = m.row(i) / norms(i);
    }
    return u;
}

// Backprop through x -> x/|x| for every row.
MatD through_normalization(const MatD& du, const MatD& u, const Eigen::VectorXd& norms) {
    MatD dx(du.rows(), du.cols());
    for (Eigen::Index i = 0; i < du.rows(); ++i) dx.row(i) = (du.row(i) - du.row(i).dot(u.row(i)) * u.row(i)) / norms(i);
    return dx;
}

template <typename Real>
double ranking_loss(const model::Matrix<Real>& anchors, const model::Matrix<Real>& positives,
                    const model::Matrix<Real>* negatives, double tau, LossGrad<Real>* grad) {
    const Eigen::Index n = anchors.rows();
    if (n < 1) throw EmptyInput("contrastive loss needs at least one example");
    if (!(tau > 0.0)) throw InvalidConfig("temperature must be positive");
    if (positives.rows() != n || positives.cols() != anchors.cols() ||
        (negatives && (negatives->rows() != n || negatives->cols() != anchors.cols())))
        throw ShapeMismatch("anchor/positive/negative matrices must have equal shapes");

    Eigen::VectorXd na, nc;
    const MatD ua = unit_rows(anchors.template cast<double>(), na);
    MatD cand(negatives ? 2 * n : n, anchors.cols());
    cand.topRows(n) = positives.template cast<double>();
    if (negatives) cand.bottomRows(n) = negatives->template cast<double>();
    const MatD uc = unit_rows(cand, nc);

    const MatD scores = (ua * uc.transpose()) / tau;  // [n x m]
    MatD d_scores(scores.rows(), scores.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = scores.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (scores.row(i).array() - mx).exp();
        const double sum = e.sum();
        total += mx + std::log(sum) - scores(i, i);
        d_scores.row(i) = e / sum;
        d_scores(i, i) -= 1.0;
    }
    if (grad) {
        const MatD d_cos = d_scores / (tau * static_cast<double>(n));
        const MatD dx_a = through_normalization(d_cos * uc, ua, na);
        const MatD dx_c = through_normalization(d_cos.transpose() * ua, uc, nc);
        grad->anchor = dx_a.cast<Real>();
        grad->positive = dx_c.topRows(n).template cast<Real>();
        if (negatives)
            grad->negative = dx_c.bottomRows(n).template cast<Real>();
        else
            grad->negative.resize(0, anchors.cols());
    }
    return total / static_cast<double>(n);
}

}  // namespace

template <typename Real>
double mnr_loss(const model::Matrix<Real>& anchors, const model::Matrix<Real>& positives, double tau,
                LossGrad<Real>* grad) {
    return ranking_loss<Real>(anchors, positives, nullptr, tau, grad);
}

template <typename Real>
double mnr_hard_loss(const model::Matrix<Real>& anchors, const model::Matrix<Real>& positives,
                     const model::Matrix<Real>& negatives, double tau, LossGrad<Real>* grad) {
    return ranking_loss<Real>(anchors, positives, &negatives, tau, grad);
}

template double mnr_loss<float>(const model::Matrix<float>&, const model::Matrix<float>&, double, LossGrad<float>*);
template double mnr_loss<double>(const model::Matrix<double>&, const model::Matrix<double>&, double,
                                 LossGrad<double>*);
template double mnr_hard_loss<float>(const model::Matrix<float>&, const model::Matrix<float>&,
                                     const model::Matrix<float>&, double, LossGrad<float>*);
template double mnr_hard_loss<double>(const model::Matrix<double>&, const model::Matrix<double>&,
                                      const model::Matrix<double>&, double, LossGrad<double>*);

}  // namespace ct::contrastive

#include "ct/eval/davg.hpp"

#include <cmath>

#include "ct/common/errors.hpp"

namespace ct::eval {

namespace {

void check_labels(const model::Matrix<double>& e, const std::vector<int>& labels, int k) {
    if (static_cast<std::size_t>(e.rows()) != labels.size()) throw LengthMismatch("embedding rows != label count");
    if (k < 1) throw InvalidConfig("class count must be >= 1");
    for (int y : labels)
        if (y < 0 || y >= k) throw UnknownClass("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
}

void check_unit_rows(const model::Matrix<double>& e, double tol) {
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
        const double n = e.row(i).norm();
        if (!(std::abs(n - 1.0) <= tol))
            throw InvalidConfig("embedding row " + std::to_string(i) + " has norm " + std::to_string(n) +
                                ", expected unit length");
    }
}

// Sum over members i of (sum over j != i of e_i . e_j) / (n - 1), divided by n,
// computed from the class vector sum: sum_i e_i . (s - e_i) = |s|^2 - sum_i |e_i|^2.
double class_similarity(const model::Matrix<double>& e, const std::vector<int>& labels, int k, bool include_self) {
    Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(e.cols());
    double self = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == k) {
            s += e.row(static_cast<Eigen::Index>(i));
            self += e.row(static_cast<Eigen::Index>(i)).squaredNorm();
            ++n;
        }
    if (n == 0) throw UnknownClass("class " + std::to_string(k) + " has no members");
    const double nn = static_cast<double>(n);
    if (include_self) return s.squaredNorm() / (nn * nn);
    if (n == 1) return 1.0;
    return (s.squaredNorm() - self) / (nn * (nn - 1.0));
}

}  // namespace

std::vector<ClassWeight> class_weights(const std::vector<int>& labels, int k) {
    if (k < 1) throw InvalidConfig("class count must be >= 1");
    std::vector<ClassWeight> out(static_cast<std::size_t>(k));
    for (int y : labels) {
        if (y < 0 || y >= k) throw UnknownClass("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
        ++out[static_cast<std::size_t>(y)].count;
    }
    double total = 0.0;
    for (std::size_t c = 0; c < out.size(); ++c) {
        if (out[c].count == 0) throw EmptyClass("class " + std::to_string(c) + " has no members");
        out[c].w = 1.0 / static_cast<double>(out[c].count);
        total += out[c].w;
    }
    for (auto& c : out) c.w_hat = c.w / total;
    return out;
}

double intra_class_similarity(const model::Matrix<double>& embeddings, const std::vector<int>& labels, int k,
                              const DavgOptions& opts) {
    if (static_cast<std::size_t>(embeddings.rows()) != labels.size())
        throw LengthMismatch("embedding rows != label count");
    check_unit_rows(embeddings, opts.norm_tolerance);
    return class_similarity(embeddings, labels, k, opts.include_self);
}

DavgReport d_avg_report(const model::Matrix<double>& embeddings, const std::vector<int>& labels, int k,
                        const DavgOptions& opts) {
    check_labels(embeddings, labels, k);
    check_unit_rows(embeddings, opts.norm_tolerance);
    const auto weights = class_weights(labels, k);
    DavgReport r;
    r.include_self = opts.include_self;
    for (int c = 0; c < k; ++c) {
        const auto& w = weights[static_cast<std::size_t>(c)];
        const double d = class_similarity(embeddings, labels, c, opts.include_self);
        r.per_class.push_back({c, w.count, w.w, w.w_hat, d});
        r.d_avg += w.w_hat * d;
    }
    return r;
}

double d_avg(const model::Matrix<double>& embeddings, const std::vector<int>& labels, int k, const DavgOptions& opts) {
    return d_avg_report(embeddings, labels, k, opts).d_avg;
}

nlohmann::json DavgReport::to_json() const {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : per_class)
        classes.push_back({{"class", c.label}, {"count", c.count}, {"w", c.w}, {"w_hat", c.w_hat}, {"d", c.d}});
    return {{"per_class", classes},
            {"d_avg", d_avg},
            {"self_pairs", include_self ? "included" : "excluded"},
            {"singleton_d", 1.0}};
}

}  // namespace ct::eval

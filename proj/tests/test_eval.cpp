#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <Eigen/QR>

#include "ct/common/errors.hpp"
#include "ct/eval/davg.hpp"
#include "ct/eval/timing.hpp"

using namespace ct;
using namespace ct::eval;
using model::Matrix;

namespace {

Matrix<double> unit(std::initializer_list<std::initializer_list<double>> r) {
    Matrix<double> m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& row : r) {
        Eigen::Index j = 0;
        for (double v : row) m(i, j++) = v;
        m.row(i).normalize();
        ++i;
    }
    return m;
}

// All ordered pairs (i, j), i != j, of the same class.
double brute_d(const Matrix<double>& e, const std::vector<int>& y, int k) {
    std::vector<Eigen::Index> members;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] == k) members.push_back(static_cast<Eigen::Index>(i));
    if (members.size() == 1) return 1.0;
    double outer = 0;
    for (auto i : members) {
        double inner = 0;
        for (auto j : members)
            if (i != j) inner += e.row(i).dot(e.row(j));
        outer += inner / static_cast<double>(members.size() - 1);
    }
    return outer / static_cast<double>(members.size());
}

double brute_davg(const Matrix<double>& e, const std::vector<int>& y, int k) {
    std::vector<double> count(static_cast<std::size_t>(k));
    for (int c : y) ++count[static_cast<std::size_t>(c)];
    double z = 0;
    for (double c : count) z += 1.0 / c;
    double total = 0;
    for (int c = 0; c < k; ++c) total += (1.0 / count[static_cast<std::size_t>(c)]) / z * brute_d(e, y, c);
    return total;
}

Matrix<double> random_unit(int n, int h, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0, 1);
    Matrix<double> m(n, h);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
    for (int i = 0; i < n; ++i) m.row(i).normalize();
    return m;
}

std::vector<int> random_labels(int n, int k, std::mt19937_64& rng) {
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = i < k ? i : static_cast<int>(rng() % k);
    std::shuffle(y.begin(), y.end(), rng);
    return y;
}

}  // namespace

TEST_CASE("class weights") {
    auto w = class_weights({0, 0, 1}, 2);
    CHECK(w[0].w_hat == doctest::Approx(1.0 / 3));
    CHECK(w[1].w_hat == doctest::Approx(2.0 / 3));
    CHECK(w[0].w == 0.5);
    auto eq = class_weights({0, 1, 2, 3, 0, 1, 2, 3}, 4);
    for (const auto& c : eq) CHECK(c.w_hat == doctest::Approx(0.25));
    CHECK(class_weights({0, 0, 0}, 1)[0].w_hat == 1.0);
    CHECK_THROWS_AS(class_weights({0, 0}, 2), EmptyClass);
    CHECK_THROWS_AS(class_weights({0, 2}, 2), UnknownClass);
}

TEST_CASE("intra-class similarity examples") {
    CHECK(intra_class_similarity(unit({{1, 0}, {1, 0}}), {0, 0}, 0) == doctest::Approx(1.0));
    CHECK(intra_class_similarity(unit({{1, 0}, {0, 1}}), {0, 0}, 0) == doctest::Approx(0.0));
    auto three = unit({{1, 0}, {0, 1}, {1, 1}});
    CHECK(std::abs(intra_class_similarity(three, {0, 0, 0}, 0) - brute_d(three, {0, 0, 0}, 0)) < 1e-12);
    CHECK(std::abs(intra_class_similarity(three, {0, 0, 0}, 0) - 2 * std::sqrt(0.5) / 3) < 1e-12);
    CHECK(intra_class_similarity(unit({{1, 0}, {0, 1}}), {0, 1}, 1) == 1.0);
    CHECK_THROWS_AS(intra_class_similarity(three, {0, 0, 0}, 1), UnknownClass);

    DavgOptions with_self;
    with_self.include_self = true;
    CHECK(intra_class_similarity(unit({{1, 0}, {0, 1}}), {0, 0}, 0, with_self) == doctest::Approx(0.5));
}

TEST_CASE("d_avg worked examples") {
    auto e = unit({{1, 0}, {0, 1}, {0, 1}});
    CHECK(d_avg(e, {0, 0, 1}, 2) == 2.0 / 3.0);
    auto same = unit({{0.3, 0.4}, {0.3, 0.4}, {0.3, 0.4}, {0.3, 0.4}});
    CHECK(d_avg(same, {0, 1, 1, 2}, 3) == doctest::Approx(1.0).epsilon(1e-15));

    auto report = d_avg_report(e, {0, 0, 1}, 2);
    auto j = report.to_json();
    CHECK(j["per_class"].size() == 2);
    CHECK(j["per_class"][0]["count"] == 2);
    CHECK(j["per_class"][1]["w_hat"].get<double>() == doctest::Approx(2.0 / 3));
    CHECK(j["d_avg"].get<double>() == 2.0 / 3.0);
    for (const char* key : {"class", "count", "w", "w_hat", "d"}) CHECK(j["per_class"][0].contains(key));

    Matrix<double> not_unit = e * 2.0;
    CHECK_THROWS_AS(d_avg(not_unit, {0, 0, 1}, 2), InvalidConfig);
    CHECK_THROWS_AS(d_avg(e, {0, 0}, 2), LengthMismatch);
}

TEST_CASE("d_avg equals the all-pairs oracle") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 1 + static_cast<int>(rng() % 8);
        const int n = k + static_cast<int>(rng() % (200 - k + 1));
        auto e = random_unit(n, 2 + trial % 7, rng);
        auto y = random_labels(n, k, rng);
        CHECK(std::abs(d_avg(e, y, k) - brute_davg(e, y, k)) < 1e-9);
        for (int c = 0; c < k; ++c) CHECK(std::abs(intra_class_similarity(e, y, c) - brute_d(e, y, c)) < 1e-12);
    }
}

TEST_CASE("d_avg invariances") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 40, k = 4, h = 6;
        auto e = random_unit(n, h, rng);
        auto y = random_labels(n, k, rng);
        const double base = d_avg(e, y, k);

        Eigen::MatrixXd a = random_unit(h, h, rng);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
        Matrix<double> rot = qr.householderQ() * Eigen::MatrixXd::Identity(h, h);
        Matrix<double> rotated = e * rot;
        CHECK(std::abs(d_avg(rotated, y, k) - base) < 1e-12);

        Matrix<double> scaled = e;
        std::uniform_real_distribution<double> s(0.1, 10);
        for (int i = 0; i < n; ++i) scaled.row(i) *= s(rng);
        for (int i = 0; i < n; ++i) scaled.row(i).normalize();
        CHECK(std::abs(d_avg(scaled, y, k) - base) < 1e-12);

        // doubling every member keeps d_k only when self pairs are excluded
        // and duplicates count as other members, so compare weights and means
        Matrix<double> twice(2 * n, h);
        twice << e, e;
        auto y2 = y;
        y2.insert(y2.end(), y.begin(), y.end());
        auto w1 = class_weights(y, k), w2 = class_weights(y2, k);
        for (int c = 0; c < k; ++c) CHECK(w1[c].w_hat == doctest::Approx(w2[c].w_hat));
        DavgOptions with_self;
        with_self.include_self = true;
        CHECK(std::abs(d_avg(twice, y2, k, with_self) - d_avg(e, y, k, with_self)) < 1e-12);
    }
}

TEST_CASE("merging separated classes lowers d_avg") {
    auto e = unit({{1, 0.05}, {1, -0.05}, {1, 0}, {-1, 0.05}, {-1, -0.05}, {-1, 0}});
    const double split = d_avg(e, {0, 0, 0, 1, 1, 1}, 2);
    const double merged = d_avg(e, {0, 0, 0, 0, 0, 0}, 1);
    CHECK(merged < split);
}

TEST_CASE("linear-interpolation quartiles") {
    std::vector<double> s{4, 1, 3, 2};
    CHECK(quantile_linear(s, 0.25) == 1.75);
    CHECK(quantile_linear(s, 0.5) == 2.5);
    CHECK(quantile_linear(s, 0.75) == 3.25);
    CHECK(quantile_linear(s, 0.0) == 1.0);
    CHECK(quantile_linear(s, 1.0) == 4.0);
    CHECK(quantile_linear({7}, 0.25) == 7.0);
    CHECK_THROWS_AS(quantile_linear({}, 0.5), EmptyInput);

    auto c = summarize({2, 2, 2, 2});
    CHECK(c.std == 0.0);
    CHECK(c.min == c.mean);
    auto t = summarize({1, 2, 3, 4});
    CHECK(t.mean == 2.5);
    CHECK(t.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
    CHECK(t.q1 == 1.75);

    auto j = t.to_json();
    std::set<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
    CHECK(keys == std::set<std::string>{"mean", "std", "min", "q1", "q2", "q3"});
}

#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "ct/common/errors.hpp"

namespace ct::model {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using RowVector = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

// A named tensor. Rank-1 tensors are stored as a 1xN matrix.
template <typename Real>
struct Tensor {
    std::string name;
    int rank = 2;
    Matrix<Real> value;
};

// Ordered collection of named tensors. The version counter lets tapes
// detect that the parameters changed after they were recorded.
template <typename Real>
class ParamSet {
public:
    Matrix<Real>& add(std::string name, Eigen::Index rows, Eigen::Index cols, int rank = 2) {
        if (index_.count(name)) throw ShapeMismatch("duplicate tensor " + name);
        index_.emplace(name, tensors_.size());
        tensors_.push_back({std::move(name), rank, Matrix<Real>::Zero(rows, cols)});
        return tensors_.back().value;
    }

    bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

    Matrix<Real>& operator[](std::string_view name) { return tensors_[index_of(name)].value; }
    const Matrix<Real>& operator[](std::string_view name) const { return tensors_[index_of(name)].value; }

    std::vector<Tensor<Real>>& tensors() { return tensors_; }
    const std::vector<Tensor<Real>>& tensors() const { return tensors_; }
    std::size_t size() const { return tensors_.size(); }

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
        return n;
    }

    std::uint64_t version() const { return version_; }
    void bump_version() { ++version_; }

    ParamSet zeros_like() const {
        ParamSet out;
        for (const auto& t : tensors_) out.add(t.name, t.value.rows(), t.value.cols(), t.rank);
        return out;
    }

    void set_zero() {
        for (auto& t : tensors_) t.value.setZero();
    }

    template <typename To>
    ParamSet<To> cast() const {
        ParamSet<To> out;
        for (const auto& t : tensors_) out.add(t.name, t.value.rows(), t.value.cols(), t.rank) = t.value.template cast<To>();
        return out;
    }

    // Same names in the same order with the same shapes.
    bool same_layout(const ParamSet& other) const {
        if (tensors_.size() != other.tensors_.size()) return false;
        for (std::size_t i = 0; i < tensors_.size(); ++i) {
            const auto& a = tensors_[i];
            const auto& b = other.tensors_[i];
            if (a.name != b.name || a.rank != b.rank || a.value.rows() != b.value.rows() ||
                a.value.cols() != b.value.cols())
                return false;
        }
        return true;
    }

    // Bitwise equality of names, shapes and values.
    bool identical(const ParamSet& other) const {
        if (!same_layout(other)) return false;
        for (std::size_t i = 0; i < tensors_.size(); ++i) {
            const auto& a = tensors_[i].value;
            const auto& b = other.tensors_[i].value;
            if (std::memcmp(a.data(), b.data(), sizeof(Real) * static_cast<std::size_t>(a.size())) != 0)
                return false;
        }
        return true;
    }

    void add_in_place(const ParamSet& other, Real scale = Real(1)) {
        if (!same_layout(other)) throw ShapeMismatch("parameter layouts differ");
        for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].value += scale * other.tensors_[i].value;
    }

    bool all_finite() const {
        for (const auto& t : tensors_)
            if (!t.value.allFinite()) return false;
        return true;
    }

private:
    std::size_t index_of(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw ShapeMismatch("no tensor named " + std::string(name));
        return it->second;
    }

    std::vector<Tensor<Real>> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
    std::uint64_t version_ = 0;
};

}  // namespace ct::model

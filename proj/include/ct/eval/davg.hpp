#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "ct/model/params.hpp"

namespace ct::eval {

struct ClassWeight {
    std::size_t count = 0;
    double w = 0.0;      // 1 / count
    double w_hat = 0.0;  // w normalized over all classes
};

// Inverse-frequency class weights, normalized to sum to 1.
// Throws EmptyClass if a class in [0, k) has no member, UnknownClass for labels >= k.
std::vector<ClassWeight> class_weights(const std::vector<int>& labels, int k);

struct DavgOptions {
    bool include_self = false;  // count (i, i) pairs in the within-class mean
    double norm_tolerance = 1e-6;
};

// Mean cosine similarity between members of class k and the other members of
// the same class; a singleton class scores 1. Rows must be unit length.
// Throws UnknownClass when no row carries label k.
double intra_class_similarity(const model::Matrix<double>& embeddings, const std::vector<int>& labels, int k,
                              const DavgOptions& opts = {});

struct DavgReport {
    struct PerClass {
        int label = 0;
        std::size_t count = 0;
        double w = 0.0, w_hat = 0.0, d = 0.0;
    };
    std::vector<PerClass> per_class;
    double d_avg = 0.0;
    bool include_self = false;

    nlohmann::json to_json() const;
};

// Weighted average of the per-class similarities. Throws LengthMismatch,
// InvalidConfig for non-unit rows, EmptyClass / UnknownClass per class_weights.
DavgReport d_avg_report(const model::Matrix<double>& embeddings, const std::vector<int>& labels, int k,
                        const DavgOptions& opts = {});
double d_avg(const model::Matrix<double>& embeddings, const std::vector<int>& labels, int k,
             const DavgOptions& opts = {});

}  // namespace ct::eval

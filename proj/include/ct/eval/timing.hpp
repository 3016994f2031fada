#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ct/contrastive/sentence_encoder.hpp"

namespace ct::eval {

// Quantile by linear interpolation between order statistics at p * (n - 1).
// Throws EmptyInput for no samples.
double quantile_linear(std::vector<double> samples, double p);

// Summary of per-text timings in milliseconds; std is the sample standard
// deviation (n - 1), 0 for a single sample.
struct TimingStats {
    double mean = 0, std = 0, min = 0, q1 = 0, q2 = 0, q3 = 0;
    nlohmann::json to_json() const;  // exactly {mean, std, min, q1, q2, q3}
};

TimingStats summarize(const std::vector<double>& samples_ms);

struct TimingReport {
    TimingStats tokenization;          // text -> ids and attention mask
    TimingStats embedding_generation;  // encoder forward + pooling
    nlohmann::json to_json() const;
};

// Times each text on its own, repetitions times, after one untimed warmup pass.
TimingReport timing_bench(const contrastive::SentenceEncoder& enc, const std::vector<std::string>& texts,
                          int repetitions);

}  // namespace ct::eval

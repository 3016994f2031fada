#include "ct/eval/timing.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ct/common/errors.hpp"

namespace ct::eval {

double quantile_linear(std::vector<double> samples, double p) {
    if (samples.empty()) throw EmptyInput("no timing samples");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidConfig("quantile must lie in [0, 1]");
    std::sort(samples.begin(), samples.end());
    const double pos = p * static_cast<double>(samples.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, samples.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return samples[lo] + frac * (samples[hi] - samples[lo]);
}

TimingStats summarize(const std::vector<double>& samples) {
    if (samples.empty()) throw EmptyInput("no timing samples");
    TimingStats s;
    const double n = static_cast<double>(samples.size());
    s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : samples) ss += (x - s.mean) * (x - s.mean);
    s.std = samples.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    s.min = *std::min_element(samples.begin(), samples.end());
    s.q1 = quantile_linear(samples, 0.25);
    s.q2 = quantile_linear(samples, 0.50);
    s.q3 = quantile_linear(samples, 0.75);
    return s;
}

nlohmann::json TimingStats::to_json() const {
    return {{"mean", mean}, {"std", std}, {"min", min}, {"q1", q1}, {"q2", q2}, {"q3", q3}};
}

nlohmann::json TimingReport::to_json() const {
    return {{"tokenization", tokenization.to_json()}, {"embedding_generation", embedding_generation.to_json()}};
}

TimingReport timing_bench(const contrastive::SentenceEncoder& enc, const std::vector<std::string>& texts,
                          int repetitions) {
    if (texts.empty()) throw EmptyInput("no texts to time");
    if (repetitions < 1) throw InvalidConfig("repetitions must be >= 1");
    if (!enc.tokenizer) throw InvalidConfig("sentence encoder has no tokenizer");
    using clock = std::chrono::steady_clock;
    std::vector<double> tok_ms, emb_ms;
    double sink = 0.0;  // keeps the work observable
    for (int rep = 0; rep <= repetitions; ++rep) {
        for (const auto& text : texts) {
            const auto t0 = clock::now();
            auto batch = contrastive::tokenize_batch(*enc.tokenizer, {text}, enc.max_length(), enc.preprocess);
            const auto t1 = clock::now();
            auto pooled = contrastive::embed_batch(enc, batch);
            const auto t2 = clock::now();
            sink += pooled(0, 0);
            if (rep == 0) continue;  // warmup
            tok_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            emb_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
        }
    }
    if (!std::isfinite(sink)) throw DivergedLoss("non-finite embedding during timing");
    return {summarize(tok_ms), summarize(emb_ms)};
}

}  // namespace ct::eval

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ct/contrastive/sentence_encoder.hpp"
#include "ct/train/optim.hpp"

namespace ct::classify {

inline constexpr const char* kHeadWeight = "classifier.weight";  // [hidden x classes]
inline constexpr const char* kHeadBias = "classifier.bias";      // [classes]

struct LabeledDataset {
    std::vector<std::string> texts;
    std::vector<int> labels;               // ids into class_names
    std::vector<std::string> class_names;  // sorted

    std::size_t size() const { return texts.size(); }
    int class_count() const { return static_cast<int>(class_names.size()); }
    LabeledDataset subset(const std::vector<std::size_t>& rows) const;
    void validate() const;  // LengthMismatch, UnknownClass, EmptyClass
};

// TSV "text\tlabel_name" with a header row. Class ids follow sorted label names.
LabeledDataset load_labeled_tsv(const std::filesystem::path& path);

struct Split {
    std::vector<std::size_t> train, val, test;  // row indices, each sorted
};

// Per class: test = max(1, round(test_ratio * n)), val = max(1, round(val_ratio * n)),
// the rest to train. Members are shuffled with a generator seeded once by seed.
// Throws ClassTooSmall when a class has fewer than 3 rows.
Split stratified_split(const LabeledDataset& d, std::array<double, 3> ratios = {0.7, 0.1, 0.2},
                       std::uint64_t seed = 42);

struct EarlyStopConfig {
    int patience = 5;
    double threshold = 1e-4;
    int max_epochs = 30;
    void validate() const;
};

// Tracks a higher-is-better validation score. update() returns true once the
// score has failed to beat the best by more than threshold for patience
// consecutive epochs, or max_epochs is reached.
class EarlyStopper {
public:
    explicit EarlyStopper(EarlyStopConfig cfg);
    bool update(double score);
    int epochs() const { return epochs_; }
    double best() const { return best_; }
    int stale_epochs() const { return stale_; }

private:
    EarlyStopConfig cfg_;
    int epochs_ = 0;
    int stale_ = 0;
    double best_ = 0.0;
};

// Macro-averaged F1 over classes 0..c-1; a class with precision + recall = 0
// scores 0. Throws LengthMismatch, EmptyInput or UnknownClass.
double f1_macro(const std::vector<int>& y_true, const std::vector<int>& y_pred, int c);

struct FinetuneConfig {
    int batch_size = 32;
    double lr = 1e-5;
    std::uint64_t seed = 42;
    bool dropout = true;
    train::AdamWConfig adamw;
    EarlyStopConfig early_stop;

    void validate() const;
    static FinetuneConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct Classifier {
    contrastive::SentenceEncoder encoder;  // params also hold the linear head
    std::vector<std::string> class_names;
};

struct FinetuneResult {
    Classifier classifier;        // state after the last epoch run
    std::vector<double> val_f1;   // one per epoch
    bool stopped_early = false;
};

using FinetuneCallback = std::function<void(int epoch, double train_loss, double val_f1)>;

// Adds a linear head over mean-with-attention pooled outputs and trains head
// and encoder with cross-entropy at a constant learning rate.
// Throws InvalidConfig for fewer than 2 classes and DivergedLoss on NaN.
FinetuneResult finetune(const contrastive::SentenceEncoder& base, const LabeledDataset& data, const Split& split,
                        const FinetuneConfig& cfg, const FinetuneCallback& on_epoch = {});

// Head logits [texts x classes] (dropout off).
model::Matrix<double> logits(const Classifier& clf, const std::vector<std::string>& texts, int batch_size = 64);

// Row-wise argmax with ties to the lowest class id.
std::vector<int> argmax_rows(const model::Matrix<double>& scores);

// Throws EmptyInput for no texts.
std::vector<int> predict(const Classifier& clf, const std::vector<std::string>& texts);

void save_classifier(const std::filesystem::path& path, const Classifier& clf);
Classifier load_classifier(const std::filesystem::path& path, std::shared_ptr<const bpe::Tokenizer> tokenizer);

struct SeedRuns {
    std::string dataset;
    std::vector<std::uint64_t> seeds;
    std::vector<double> f1_per_seed;  // test F1-macro
    double mean = 0.0;
    double ci95 = 0.0;  // 1.96 * sample std / sqrt(runs)

    nlohmann::json to_json() const;
};

// mean and 1.96 * s / sqrt(n) half-width.
std::pair<double, double> mean_ci95(const std::vector<double>& values);

// One fine-tuning run per seed on the same split; scores the test rows.
SeedRuns finetune_seeds(const contrastive::SentenceEncoder& base, const LabeledDataset& data, const Split& split,
                        FinetuneConfig cfg, const std::vector<std::uint64_t>& seeds, std::string dataset_name);

}  // namespace ct::classify

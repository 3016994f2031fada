#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ct/bpe/tokenizer.hpp"
#include "ct/model/checkpoint.hpp"
#include "ct/model/encoder.hpp"
#include "ct/pooling/pooling.hpp"
#include "ct/train/optim.hpp"

namespace ct::contrastive {

// Encoder weights plus everything needed to turn raw text into a vector.
struct SentenceEncoder {
    model::EncoderParams params;
    model::EncoderConfig config;
    std::shared_ptr<const bpe::Tokenizer> tokenizer;
    pooling::Strategy pooling = pooling::Strategy::mean_with_attention;
    bool preprocess = true;  // run the tweet normalizer before tokenizing

    // Longest sequence fed to the encoder, including <s> and </s>.
    int max_length() const { return config.max_position_embeddings; }
};

// Builds an encoder from a checkpoint; the pooling strategy is read from the
// "pooling" metadata field when present.
SentenceEncoder from_checkpoint(const model::Checkpoint& ck, std::shared_ptr<const bpe::Tokenizer> tokenizer);
// Checkpoint whose metadata records the pooling strategy.
void save_sentence_encoder(const std::filesystem::path& path, const SentenceEncoder& enc,
                           nlohmann::json metadata = nlohmann::json::object());

// <s> ids </s> per text (ids truncated to max_length - 2), right-padded with
// <pad> to the longest sequence; padding has attention mask 0.
model::EncodedBatch tokenize_batch(const bpe::Tokenizer& tok, const std::vector<std::string>& texts, int max_length,
                                   bool preprocess);

// Pooled vectors [texts x hidden] for an already tokenized batch (dropout off).
model::Matrix<double> embed_batch(const SentenceEncoder& enc, const model::EncodedBatch& batch);

// Unit-normalized embeddings, one row per text in input order.
// Throws EmptyInput for an empty list and ZeroVector for a degenerate row.
model::Matrix<double> encode_sentences(const SentenceEncoder& enc, const std::vector<std::string>& texts,
                                       int batch_size = 64);

struct ContrastiveDataset {
    std::vector<std::string> anchors;
    std::vector<std::string> positives;
    std::vector<std::string> negatives;  // empty for pair datasets

    std::size_t size() const { return anchors.size(); }
    bool has_negatives() const { return !negatives.empty(); }
    // The same rows without their hard negatives.
    ContrastiveDataset pairs_only() const { return {anchors, positives, {}}; }
};

// TSV with "anchor\tpositive" or "anchor\tpositive\tnegative" on every line.
// Throws ParseError for mixed or malformed rows and EmptyInput for no rows.
ContrastiveDataset load_contrastive_tsv(const std::filesystem::path& path);

enum class Objective { mnr, mnr_hard };
Objective parse_objective(const std::string& name);  // "mnr" or "mnr-hard"
std::string to_string(Objective o);

struct ContrastiveConfig {
    Objective objective = Objective::mnr_hard;
    int epochs = 20;
    int batch_size = 512;
    double lr = 2e-5;
    double warmup_frac = 0.01;
    double temperature = 0.05;
    std::uint64_t seed = 42;
    bool dropout = true;
    train::AdamWConfig adamw;

    void validate() const;  // throws InvalidConfig
    static ContrastiveConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

using ContrastiveEpochCallback = std::function<void(int epoch, double mean_loss)>;

// Fine-tunes every encoder weight with the chosen ranking loss over
// mean-with-attention pooled outputs. Pair data requires Objective::mnr and
// triplet data Objective::mnr_hard, otherwise ObjectiveDatasetMismatch.
SentenceEncoder train_encoder(const SentenceEncoder& initial, const ContrastiveDataset& data,
                              const ContrastiveConfig& cfg, const ContrastiveEpochCallback& on_epoch = {});

}  // namespace ct::contrastive

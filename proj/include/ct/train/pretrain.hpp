#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ct/bpe/packing.hpp"
#include "ct/model/checkpoint.hpp"
#include "ct/train/masking.hpp"
#include "ct/train/optim.hpp"

namespace ct::train {

struct PretrainConfig {
    int epochs = 10;
    int micro_batch = 16;
    int accumulation_steps = 2;
    double peak_lr = 4e-4;
    double warmup_frac = 0.05;
    MaskingPolicy masking;
    std::uint64_t seed = 42;
    std::string checkpoint_dir;  // empty: keep checkpoints in memory only
    AdamWConfig adamw;

    void validate() const;  // throws InvalidConfig

    // Accepts {epochs, micro_batch, accumulation_steps, peak_lr, warmup_frac,
    // mask_prob, seed, checkpoint_dir}; missing keys keep their defaults.
    static PretrainConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct EpochLoss {
    int epoch = 0;
    double val_loss = 0.0;
};

struct CheckpointSet {
    model::Checkpoint one_look;   // after epoch 1
    model::Checkpoint best_loss;  // lowest validation loss
    model::Checkpoint complete;   // after the last epoch
    double initial_loss = 0.0;    // validation loss at step 0
    double best_val_loss = 0.0;
    int best_epoch = 0;
    std::vector<EpochLoss> loss_history;  // epochs 1..E
};

// Validation MLM loss with masks drawn from a fixed seed, averaged over all
// selected positions. Dropout off.
double validation_loss(const model::EncoderParams& params, const model::EncoderConfig& cfg,
                       std::span<const bpe::TokenBlock> blocks, const MaskingPolicy& policy, std::uint64_t seed,
                       int micro_batch);

using EpochCallback = std::function<void(const EpochLoss&)>;

// Throws EmptyInput for empty train/val sets and DivergedLoss on a non-finite loss.
CheckpointSet pretrain(std::span<const bpe::TokenBlock> train_blocks, std::span<const bpe::TokenBlock> val_blocks,
                       const model::EncoderConfig& cfg, const PretrainConfig& hyper,
                       std::optional<model::EncoderParams> initial = std::nullopt,
                       const EpochCallback& on_epoch = {});

// CSV with header "epoch,val_loss"; row 0 holds the step-0 loss.
std::string loss_history_csv(const CheckpointSet& set);

// Writes one_look.ctxf, best_loss.ctxf, complete.ctxf and loss_history.csv.
void save_checkpoint_set(const std::filesystem::path& dir, const CheckpointSet& set);

}  // namespace ct::train

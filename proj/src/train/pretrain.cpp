#include "ct/train/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ct/common/errors.hpp"
#include "ct/common/io.hpp"
#include "ct/train/mlm.hpp"

namespace ct::train {

void PretrainConfig::validate() const {
    if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
    if (micro_batch < 1) throw InvalidConfig("micro_batch must be >= 1");
    if (accumulation_steps < 1) throw InvalidConfig("accumulation_steps must be >= 1");
    if (!(peak_lr >= 0.0)) throw InvalidConfig("peak_lr must be >= 0");
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) throw InvalidConfig("warmup_frac must lie in (0, 1)");
    if (!(masking.mask_prob > 0.0 && masking.mask_prob < 1.0)) throw InvalidConfig("mask_prob must lie in (0, 1)");
    masking.validate();
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
    PretrainConfig c;
    if (!j.is_object()) throw InvalidConfig("training config must be a JSON object");
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.micro_batch = j.value("micro_batch", c.micro_batch);
        c.accumulation_steps = j.value("accumulation_steps", c.accumulation_steps);
        c.peak_lr = j.value("peak_lr", c.peak_lr);
        c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
        c.masking.mask_prob = j.value("mask_prob", c.masking.mask_prob);
        c.seed = j.value("seed", c.seed);
        c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
        c.adamw.weight_decay = j.value("weight_decay", c.adamw.weight_decay);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("training config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json PretrainConfig::to_json() const {
    return {{"epochs", epochs},         {"micro_batch", micro_batch}, {"accumulation_steps", accumulation_steps},
            {"peak_lr", peak_lr},       {"warmup_frac", warmup_frac}, {"mask_prob", masking.mask_prob},
            {"seed", seed},             {"checkpoint_dir", checkpoint_dir},
            {"weight_decay", adamw.weight_decay}};
}

double validation_loss(const model::EncoderParams& params, const model::EncoderConfig& cfg,
                       std::span<const bpe::TokenBlock> blocks, const MaskingPolicy& policy, std::uint64_t seed,
                       int micro_batch) {
    if (blocks.empty()) throw EmptyInput("no validation blocks");
    std::mt19937_64 rng(seed);
    std::vector<MaskedBlock> masked;
    masked.reserve(blocks.size());
    for (const auto& b : blocks) masked.push_back(apply_masking(b, policy, cfg.vocab_size, rng));

    double weighted = 0.0;
    std::size_t positions = 0;
    for (std::size_t start = 0; start < masked.size(); start += static_cast<std::size_t>(micro_batch)) {
        const auto n = std::min<std::size_t>(static_cast<std::size_t>(micro_batch), masked.size() - start);
        auto batch = make_mlm_batch(std::span<const MaskedBlock>(masked).subspan(start, n));
        if (std::none_of(batch.labels.begin(), batch.labels.end(), [](auto l) { return l != kIgnoreLabel; }))
            continue;
        auto r = mlm_forward_backward<float>(params, cfg, batch, false, nullptr, nullptr);
        weighted += r.loss * static_cast<double>(r.positions);
        positions += r.positions;
    }
    if (positions == 0) throw NoMaskedPositions("validation masking selected no positions");
    return weighted / static_cast<double>(positions);
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(salt)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

void check_finite(double loss, const std::string& where) {
    if (!std::isfinite(loss)) throw DivergedLoss("non-finite loss " + where);
}

}  // namespace

CheckpointSet pretrain(std::span<const bpe::TokenBlock> train_blocks, std::span<const bpe::TokenBlock> val_blocks,
                       const model::EncoderConfig& cfg, const PretrainConfig& hyper,
                       std::optional<model::EncoderParams> initial, const EpochCallback& on_epoch) {
    hyper.validate();
    cfg.validate();
    if (train_blocks.empty()) throw EmptyInput("no training blocks");
    if (val_blocks.empty()) throw EmptyInput("no validation blocks");

    auto params = initial ? std::move(*initial) : model::init_params(cfg, hyper.seed);
    auto grads = params.zeros_like();
    AdamW<float> opt(params, hyper.adamw);
    std::mt19937_64 rng(mix_seed(hyper.seed, 1));
    const std::uint64_t val_seed = mix_seed(hyper.seed, 2);

    const auto mb = static_cast<std::size_t>(hyper.micro_batch);
    const auto accum = static_cast<std::size_t>(hyper.accumulation_steps);
    const std::size_t micro_per_epoch = (train_blocks.size() + mb - 1) / mb;
    const std::size_t steps_per_epoch = (micro_per_epoch + accum - 1) / accum;
    const auto total_steps = static_cast<std::int64_t>(steps_per_epoch) * hyper.epochs;

    CheckpointSet out;
    out.initial_loss = validation_loss(params, cfg, val_blocks, hyper.masking, val_seed, hyper.micro_batch);
    check_finite(out.initial_loss, "at step 0");

    const auto snapshot = [&](int epoch, double loss) {
        return model::Checkpoint{params, cfg, {{"epoch", epoch}, {"val_loss", loss}}};
    };

    std::vector<std::size_t> order(train_blocks.size());
    std::int64_t step = 0;
    for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);

        for (std::size_t group = 0; group < steps_per_epoch; ++group) {
            const std::size_t first = group * accum;
            const std::size_t last = std::min(first + accum, micro_per_epoch);
            grads.set_zero();
            bool any = false;
            for (std::size_t m = first; m < last; ++m) {
                std::vector<MaskedBlock> masked;
                for (std::size_t i = m * mb; i < std::min((m + 1) * mb, order.size()); ++i)
                    masked.push_back(apply_masking(train_blocks[order[i]], hyper.masking, cfg.vocab_size, rng));
                auto batch = make_mlm_batch(masked);
                if (std::none_of(batch.labels.begin(), batch.labels.end(), [](auto l) { return l != kIgnoreLabel; }))
                    continue;
                auto r = mlm_forward_backward<float>(params, cfg, batch, true, &rng, &grads,
                                                     1.0 / static_cast<double>(last - first));
                check_finite(r.loss, "in epoch " + std::to_string(epoch));
                any = true;
            }
            if (any) {
                if (!grads.all_finite()) throw DivergedLoss("non-finite gradient in epoch " + std::to_string(epoch));
                opt.step(params, grads, lr_schedule(step, total_steps, hyper.peak_lr, hyper.warmup_frac));
            }
            ++step;
        }

        const double loss = validation_loss(params, cfg, val_blocks, hyper.masking, val_seed, hyper.micro_batch);
        check_finite(loss, "at end of epoch " + std::to_string(epoch));
        out.loss_history.push_back({epoch, loss});
        if (on_epoch) on_epoch(out.loss_history.back());
        if (epoch == 1) out.one_look = snapshot(epoch, loss);
        if (epoch == 1 || loss < out.best_val_loss) {
            out.best_val_loss = loss;
            out.best_epoch = epoch;
            out.best_loss = snapshot(epoch, loss);
        }
    }
    out.complete = snapshot(hyper.epochs, out.loss_history.back().val_loss);
    if (!hyper.checkpoint_dir.empty()) save_checkpoint_set(hyper.checkpoint_dir, out);
    return out;
}

std::string loss_history_csv(const CheckpointSet& set) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,val_loss\n0," << set.initial_loss << '\n';
    for (const auto& e : set.loss_history) os << e.epoch << ',' << e.val_loss << '\n';
    return os.str();
}

void save_checkpoint_set(const std::filesystem::path& dir, const CheckpointSet& set) {
    std::filesystem::create_directories(dir);
    model::save_checkpoint(dir / "one_look.ctxf", set.one_look.params, set.one_look.config, set.one_look.metadata);
    model::save_checkpoint(dir / "best_loss.ctxf", set.best_loss.params, set.best_loss.config,
                           set.best_loss.metadata);
    model::save_checkpoint(dir / "complete.ctxf", set.complete.params, set.complete.config, set.complete.metadata);
    io::write_file_atomic(dir / "loss_history.csv", loss_history_csv(set));
}

}  // namespace ct::train

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "ct/common/errors.hpp"
#include "ct/common/io.hpp"
#include "ct/model/checkpoint.hpp"
#include "ct/train/masking.hpp"
#include "ct/train/mlm.hpp"
#include "ct/train/optim.hpp"
#include "ct/train/pretrain.hpp"

using namespace ct;
using namespace ct::train;
using model::Matrix;

namespace {

bpe::TokenBlock make_block(std::vector<bpe::TokenId> ids) {
    bpe::TokenBlock b;
    b.attention_mask.assign(ids.size(), 1);
    b.ids = std::move(ids);
    return b;
}

std::vector<bpe::TokenBlock> random_blocks(int count, int len, int vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> id(5, vocab - 1);
    std::vector<bpe::TokenBlock> out;
    for (int i = 0; i < count; ++i) {
        std::vector<bpe::TokenId> ids{bpe::Special::cls};
        for (int j = 1; j < len - 1; ++j) ids.push_back(id(rng));
        ids.push_back(bpe::Special::sep);
        out.push_back(make_block(ids));
    }
    return out;
}

model::EncoderConfig tiny_config(int vocab = 40) {
    model::EncoderConfig c;
    c.hidden_size = 16;
    c.num_hidden_layers = 1;
    c.num_attention_heads = 2;
    c.intermediate_size = 32;
    c.max_position_embeddings = 16;
    c.vocab_size = vocab;
    return c;
}

// Reference AdamW on one scalar, written independently of the Eigen version.
struct ScalarAdamW {
    double m = 0, v = 0;
    int t = 0;
    double step(double theta, double g, double lr, double b1, double b2, double eps, double wd) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double m_hat = m / (1 - std::pow(b1, t));
        double v_hat = v / (1 - std::pow(b2, t));
        theta -= lr * wd * theta;
        return theta - lr * m_hat / (std::sqrt(v_hat) + eps);
    }
};

model::ParamSet<double> scalar_params(double value) {
    model::ParamSet<double> p;
    p.add("w", 1, 1)(0, 0) = value;
    return p;
}

}  // namespace

TEST_CASE("masking degenerate policies") {
    auto block = make_block({2, 10, 11, 12, 13, 3, 1, 0});
    block.attention_mask[7] = 0;
    std::mt19937_64 rng(1);
    MaskingPolicy all{1.0, 1.0, 0.0, 0.0};
    auto m = apply_masking(block, all, 100, rng);
    CHECK(m.block.ids == std::vector<bpe::TokenId>{2, 4, 4, 4, 4, 3, 1, 0});
    CHECK(m.labels == std::vector<std::int32_t>{-100, 10, 11, 12, 13, -100, -100, -100});
    CHECK(m.block.attention_mask == block.attention_mask);

    MaskingPolicy none{0.0, 0.8, 0.1, 0.1};
    auto n = apply_masking(block, none, 100, rng);
    CHECK(n.block == block);
    for (auto l : n.labels) CHECK(l == kIgnoreLabel);

    MaskingPolicy keep{1.0, 0.0, 0.0, 1.0};
    auto k = apply_masking(block, keep, 100, rng);
    CHECK(k.block == block);
    CHECK(k.labels[1] == 10);

    MaskingPolicy random{1.0, 0.0, 1.0, 0.0};
    for (int i = 0; i < 50; ++i) {
        auto r = apply_masking(block, random, 9, rng);
        for (int j = 1; j <= 4; ++j) CHECK((r.block.ids[j] >= 5 && r.block.ids[j] < 9));
    }

    MaskingPolicy bad{0.15, 0.5, 0.1, 0.1};
    CHECK_THROWS_AS(apply_masking(block, bad, 100, rng), InvalidConfig);
}

TEST_CASE("masking selection rate and split") {
    auto blocks = random_blocks(100, 102, 1000, 5);  // 100 regular positions per block
    std::mt19937_64 rng(2);
    MaskingPolicy policy;
    std::size_t eligible = 0, selected = 0, as_mask = 0, as_same = 0;
    for (const auto& b : blocks) {
        auto m = apply_masking(b, policy, 1000, rng);
        for (std::size_t i = 0; i < b.ids.size(); ++i) {
            if (bpe::Tokenizer::is_special(b.ids[i])) {
                CHECK(m.labels[i] == kIgnoreLabel);
                continue;
            }
            ++eligible;
            if (m.labels[i] == kIgnoreLabel) {
                CHECK(m.block.ids[i] == b.ids[i]);
                continue;
            }
            ++selected;
            CHECK(m.labels[i] == b.ids[i]);
            if (m.block.ids[i] == bpe::Special::mask) ++as_mask;
            if (m.block.ids[i] == b.ids[i]) ++as_same;
        }
    }
    REQUIRE(eligible == 10000);
    const double rate = static_cast<double>(selected) / static_cast<double>(eligible);
    CHECK(std::abs(rate - 0.15) < 0.02);
    CHECK(std::abs(static_cast<double>(as_mask) / static_cast<double>(selected) - 0.8) < 0.05);
    // keep share plus the ~1/995 chance that a random replacement repeats the original
    CHECK(std::abs(static_cast<double>(as_same) / static_cast<double>(selected) - 0.1) < 0.04);
}

TEST_CASE("mlm loss analytic values") {
    Matrix<double> uniform = Matrix<double>::Zero(3, 64000);
    std::vector<std::int32_t> labels{0, 17, 63999};
    CHECK(mlm_loss<double>(uniform, labels) == doctest::Approx(std::log(64000.0)).epsilon(1e-12));
    CHECK(std::log(64000.0) == doctest::Approx(11.067).epsilon(1e-4));

    Matrix<double> two = Matrix<double>::Zero(1, 2);
    std::vector<std::int32_t> zero{0};
    CHECK(mlm_loss<double>(two, zero) == doctest::Approx(0.693147).epsilon(1e-6));

    Matrix<float> sharp = Matrix<float>::Zero(1, 50);
    sharp(0, 7) = 20.0f;
    std::vector<std::int32_t> seven{7};
    CHECK(mlm_loss<float>(sharp, seven) < 1e-3);

    Matrix<double> empty(0, 5);
    CHECK_THROWS_AS(mlm_loss<double>(empty, {}), NoMaskedPositions);
    CHECK_THROWS_AS(mlm_loss<double>(two, std::vector<std::int32_t>{2}), IdOutOfRange);
}

TEST_CASE("mlm loss gradient is softmax minus one-hot over n") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 2);
    Matrix<double> logits(4, 6);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = n(rng);
    std::vector<std::int32_t> labels{1, 5, 0, 1};
    Matrix<double> grad;
    mlm_loss_grad<double>(logits, labels, grad);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        auto up = logits, down = logits;
        up.data()[i] += h;
        down.data()[i] -= h;
        const double fd = (mlm_loss<double>(up, labels) - mlm_loss<double>(down, labels)) / (2 * h);
        CHECK(std::abs(fd - grad.data()[i]) < 1e-8);
    }
    for (Eigen::Index r = 0; r < 4; ++r) CHECK(std::abs(grad.row(r).sum()) < 1e-12);
}

TEST_CASE("masked-LM head gradients match finite differences") {
    auto cfg = tiny_config(23);
    cfg.num_hidden_layers = 2;
    auto p = model::init_params(cfg, 8).cast<double>();
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0, 0.05);
    for (auto& t : p.tensors())
        for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] += n(rng);

    MaskedBlock a{make_block({2, 7, 8, 9, 10, 3}), {-100, 7, -100, 9, -100, -100}};
    MaskedBlock b{make_block({2, 11, 12, 3, 0, 0}), {-100, -100, 12, -100, -100, -100}};
    b.block.attention_mask = {1, 1, 1, 1, 0, 0};
    std::vector<MaskedBlock> blocks{a, b};
    auto batch = make_mlm_batch(blocks);

    auto grads = p.zeros_like();
    auto r = mlm_forward_backward<double>(p, cfg, batch, false, nullptr, &grads);
    CHECK(r.positions == 3);

    const double h = 1e-3;
    double worst = 0.0;
    std::string worst_name;
    for (std::size_t ti = 0; ti < p.tensors().size(); ++ti) {
        auto& t = p.tensors()[ti];
        const auto& g = grads.tensors()[ti].value;
        const double scale = std::max(g.cwiseAbs().maxCoeff(), 1e-6);
        for (Eigen::Index i = 0; i < t.value.size(); ++i) {
            const double orig = t.value.data()[i];
            t.value.data()[i] = orig + h;
            const double up = mlm_forward_backward<double>(p, cfg, batch, false, nullptr, nullptr).loss;
            t.value.data()[i] = orig - h;
            const double down = mlm_forward_backward<double>(p, cfg, batch, false, nullptr, nullptr).loss;
            t.value.data()[i] = orig;
            const double fd = (up - down) / (2 * h);
            const double err = std::abs(fd - g.data()[i]) / std::max({std::abs(fd), std::abs(g.data()[i]), scale});
            if (err > worst) {
                worst = err;
                worst_name = t.name;
            }
        }
    }
    MESSAGE("max relative gradient error " << worst << " in " << worst_name);
    CHECK(worst < 1e-4);

    // grad_scale multiplies every gradient
    auto half = p.zeros_like();
    mlm_forward_backward<double>(p, cfg, batch, false, nullptr, &half, 0.5);
    for (std::size_t ti = 0; ti < p.tensors().size(); ++ti)
        CHECK((half.tensors()[ti].value * 2.0 - grads.tensors()[ti].value).cwiseAbs().maxCoeff() < 1e-12);

    MaskedBlock none{make_block({2, 7, 3}), {-100, -100, -100}};
    std::vector<MaskedBlock> empty{none};
    CHECK_THROWS_AS(mlm_forward_backward<double>(p, cfg, make_mlm_batch(empty), false, nullptr, nullptr),
                    NoMaskedPositions);
}

TEST_CASE("adamw examples") {
    AdamWConfig no_decay{0.9, 0.999, 1e-8, 0.0};
    auto p = scalar_params(1.0);
    auto g = scalar_params(1.0);
    AdamW<double> opt(p, no_decay);
    opt.step(p, g, 0.1);
    CHECK(p["w"](0, 0) == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(opt.steps() == 1);

    auto q = scalar_params(3.0);
    auto zero = scalar_params(0.0);
    AdamW<double> still(q, no_decay);
    for (int i = 0; i < 5; ++i) still.step(q, zero, 0.1);
    CHECK(q["w"](0, 0) == 3.0);

    AdamWConfig decay{0.9, 0.999, 1e-8, 0.01};
    auto d = scalar_params(2.0);
    AdamW<double> dec(d, decay);
    dec.step(d, zero, 0.5);
    CHECK(d["w"](0, 0) == doctest::Approx(2.0 * (1 - 0.5 * 0.01)).epsilon(1e-15));

    model::ParamSet<double> other;
    other.add("x", 1, 1);
    CHECK_THROWS_AS(opt.step(p, other, 0.1), ShapeMismatch);

    const auto v0 = p.version();
    opt.step(p, g, 0.1);
    CHECK(p.version() == v0 + 1);
}

TEST_CASE("adamw matches a scalar reference") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> u(0, 0.1);
    for (int trial = 0; trial < 50; ++trial) {
        AdamWConfig cfg{0.8 + 0.19 * u(rng) * 10, 0.99 + 0.0099 * u(rng) * 10, 1e-8, u(rng)};
        double theta = n(rng);
        auto p = scalar_params(theta);
        AdamW<double> opt(p, cfg);
        ScalarAdamW ref;
        for (int s = 0; s < 20; ++s) {
            const double grad = n(rng), lr = u(rng);
            opt.step(p, scalar_params(grad), lr);
            theta = ref.step(theta, grad, lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
            CHECK(std::abs(p["w"](0, 0) - theta) < 1e-10);
        }
    }
}

TEST_CASE("learning-rate schedule") {
    const std::int64_t total = 1000;
    CHECK(lr_schedule(50, total, 4e-4, 0.05) == doctest::Approx(4e-4).epsilon(1e-12));
    CHECK(lr_schedule(0, total, 4e-4, 0.05) == 0.0);
    CHECK(lr_schedule(total, total, 4e-4, 0.05) == 0.0);
    CHECK(lr_schedule(25, total, 4e-4, 0.05) == doctest::Approx(2e-4));
    CHECK(lr_schedule(525, total, 4e-4, 0.05) == doctest::Approx(2e-4));

    // piecewise linear, continuous, single peak at the warmup boundary
    double prev = 0.0, best = -1.0;
    std::int64_t argmax = -1;
    for (std::int64_t s = 0; s <= total; ++s) {
        const double lr = lr_schedule(s, total, 4e-4, 0.05);
        CHECK(std::abs(lr - prev) <= 4e-4 / 50 + 1e-15);
        if (lr > best) {
            best = lr;
            argmax = s;
        }
        prev = lr;
    }
    CHECK(argmax == 50);
}

TEST_CASE("training config JSON") {
    auto c = PretrainConfig::from_json(nlohmann::json{{"epochs", 3}, {"micro_batch", 4}, {"peak_lr", 1e-3},
                                                      {"mask_prob", 0.2}, {"checkpoint_dir", "x"}});
    CHECK(c.epochs == 3);
    CHECK(c.micro_batch == 4);
    CHECK(c.accumulation_steps == 2);
    CHECK(c.masking.mask_prob == 0.2);
    CHECK(c.checkpoint_dir == "x");
    CHECK(PretrainConfig::from_json(c.to_json()).to_json() == c.to_json());
    CHECK_THROWS_AS(PretrainConfig::from_json(nlohmann::json{{"epochs", 0}}), InvalidConfig);
    CHECK_THROWS_AS(PretrainConfig::from_json(nlohmann::json{{"mask_prob", 1.0}}), InvalidConfig);
    CHECK_THROWS_AS(PretrainConfig::from_json(nlohmann::json{{"epochs", "two"}}), InvalidConfig);
}

TEST_CASE("pretrain loop bookkeeping") {
    auto cfg = tiny_config();
    auto train = random_blocks(24, 12, cfg.vocab_size, 10);
    auto val = random_blocks(8, 12, cfg.vocab_size, 11);
    PretrainConfig hyper;
    hyper.epochs = 3;
    hyper.micro_batch = 4;
    hyper.accumulation_steps = 2;
    hyper.peak_lr = 1e-3;
    hyper.seed = 5;
    std::vector<int> seen;
    auto set = pretrain(train, val, cfg, hyper, std::nullopt, [&](const EpochLoss& e) { seen.push_back(e.epoch); });

    CHECK(seen == std::vector<int>{1, 2, 3});
    REQUIRE(set.loss_history.size() == 3);
    double lowest = set.loss_history[0].val_loss;
    for (const auto& e : set.loss_history) {
        CHECK(std::isfinite(e.val_loss));
        lowest = std::min(lowest, e.val_loss);
    }
    CHECK(set.best_val_loss == lowest);
    CHECK(set.best_loss.metadata["val_loss"].get<double>() == lowest);
    CHECK(set.one_look.metadata["epoch"] == 1);
    CHECK(set.complete.metadata["epoch"] == 3);
    CHECK(set.initial_loss > 0.95 * std::log(cfg.vocab_size));
    CHECK(set.initial_loss < 1.05 * std::log(cfg.vocab_size));
    CHECK_FALSE(set.one_look.params.identical(set.complete.params));

    auto again = pretrain(train, val, cfg, hyper);
    CHECK(again.complete.params.identical(set.complete.params));
    CHECK(again.loss_history.back().val_loss == set.loss_history.back().val_loss);

    auto csv = loss_history_csv(set);
    auto lines = io::split(csv, '\n');
    CHECK(lines[0] == "epoch,val_loss");
    CHECK(lines[1].rfind("0,", 0) == 0);
    CHECK(lines[4].rfind("3,", 0) == 0);

    auto dir = std::filesystem::temp_directory_path() / "ct_test_pretrain";
    std::filesystem::remove_all(dir);
    save_checkpoint_set(dir, set);
    for (const char* f : {"one_look.ctxf", "best_loss.ctxf", "complete.ctxf", "loss_history.csv"})
        CHECK(std::filesystem::exists(dir / f));
    auto loaded = model::load_checkpoint(dir / "complete.ctxf");
    CHECK(loaded.params.identical(set.complete.params));
    std::filesystem::remove_all(dir);

    CHECK_THROWS_AS(pretrain({}, val, cfg, hyper), EmptyInput);
    CHECK_THROWS_AS(pretrain(train, {}, cfg, hyper), EmptyInput);

    auto diverging = hyper;
    diverging.peak_lr = 1e30;
    diverging.epochs = 2;
    CHECK_THROWS_AS(pretrain(train, val, cfg, diverging), DivergedLoss);
}

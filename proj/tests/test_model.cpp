#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "ct/common/errors.hpp"
#include "ct/model/checkpoint.hpp"
#include "ct/model/encoder.hpp"

using namespace ct::model;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.hidden_size = 16;
    c.num_hidden_layers = 2;
    c.num_attention_heads = 2;
    c.intermediate_size = 32;
    c.max_position_embeddings = 8;
    c.vocab_size = 23;
    return c;
}

EncodedBatch random_batch(const EncoderConfig& cfg, int b, int l, std::mt19937_64& rng, bool with_padding) {
    EncodedBatch batch{b, l, {}, {}};
    std::uniform_int_distribution<int> id(0, cfg.vocab_size - 1);
    std::uniform_int_distribution<int> keep(1, l);
    for (int i = 0; i < b; ++i) {
        int n = with_padding ? keep(rng) : l;
        for (int j = 0; j < l; ++j) {
            batch.ids.push_back(id(rng));
            batch.attention_mask.push_back(j < n ? 1 : 0);
        }
    }
    return batch;
}

// Moves every parameter away from its init so that layer-norm and bias
// gradients are not trivially structured.
template <typename Real>
void jitter(ParamSet<Real>& p, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& t : p.tensors())
        for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] += static_cast<Real>(n(rng));
}

// Loss = sum over attended rows of <hidden_row, weight_row>.
double projection_loss(const Matrix<double>& hidden, const Matrix<double>& weights, const EncodedBatch& batch) {
    double s = 0.0;
    for (int b = 0; b < batch.batch; ++b)
        for (int l = 0; l < batch.length; ++l)
            if (batch.attended(b, l)) s += hidden.row(b * batch.length + l).dot(weights.row(b * batch.length + l));
    return s;
}

Matrix<double> masked_weights(const Matrix<double>& w, const EncodedBatch& batch) {
    Matrix<double> out = w;
    for (int b = 0; b < batch.batch; ++b)
        for (int l = 0; l < batch.length; ++l)
            if (!batch.attended(b, l)) out.row(b * batch.length + l).setZero();
    return out;
}

}  // namespace

TEST_CASE("config validation") {
    EncoderConfig c;
    CHECK_NOTHROW(c.validate());
    c.num_attention_heads = 5;
    CHECK_THROWS_AS(c.validate(), ct::InvalidConfig);
    c = EncoderConfig{};
    c.hidden_dropout_prob = 1.0;
    CHECK_THROWS_AS(c.validate(), ct::InvalidConfig);
    c = EncoderConfig{};
    c.layer_norm_eps = 0.0;
    CHECK_THROWS_AS(c.validate(), ct::InvalidConfig);
    c = EncoderConfig{};
    c.vocab_size = 0;
    CHECK_THROWS_AS(c.validate(), ct::InvalidConfig);
    c = EncoderConfig{};
    CHECK(EncoderConfig::from_json(c.to_json()) == c);

    EncoderConfig base;
    base.hidden_size = 768;
    base.num_hidden_layers = 12;
    base.num_attention_heads = 12;
    base.intermediate_size = 3072;
    base.max_position_embeddings = 514;
    base.vocab_size = 50265;
    CHECK_NOTHROW(base.validate());
}

TEST_CASE("init is deterministic with the documented statistics") {
    EncoderConfig cfg;
    auto a = init_params(cfg, 7);
    auto b = init_params(cfg, 7);
    auto c = init_params(cfg, 8);
    CHECK(a.identical(b));
    CHECK_FALSE(a.identical(c));
    CHECK((a[names::embeddings_ln_weight].array() == 1.0f).all());
    CHECK((a[names::layer(1, "output.LayerNorm.weight")].array() == 1.0f).all());
    CHECK((a[names::embeddings_ln_bias].array() == 0.0f).all());
    CHECK((a[names::layer(0, "attention.self.query.bias")].array() == 0.0f).all());

    const auto& emb = a[names::word_embeddings];
    const double n = static_cast<double>(emb.size());
    const double mean = emb.cast<double>().mean();
    CHECK(std::abs(mean) < 3.0 * 0.02 / std::sqrt(n));
    const double var = (emb.cast<double>().array() - mean).square().sum() / (n - 1);
    CHECK(std::sqrt(var) == doctest::Approx(0.02).epsilon(0.02));
    CHECK(a.all_finite());
}

TEST_CASE("forward output shape and errors") {
    auto cfg = tiny_config();
    auto p = init_params(cfg, 1);
    std::mt19937_64 rng(3);
    for (int b : {1, 3})
        for (int l : {1, 5, 8}) {
            auto batch = random_batch(cfg, b, l, rng, true);
            auto r = forward(p, cfg, batch, false);
            CHECK(r.hidden.rows() == b * l);
            CHECK(r.hidden.cols() == cfg.hidden_size);
        }
    auto too_long = random_batch(cfg, 1, 9, rng, false);
    CHECK_THROWS_AS(forward(p, cfg, too_long, false), ct::SequenceTooLong);
    auto bad_id = random_batch(cfg, 1, 4, rng, false);
    bad_id.ids[2] = cfg.vocab_size;
    CHECK_THROWS_AS(forward(p, cfg, bad_id, false), ct::IdOutOfRange);
    bad_id.ids[2] = -1;
    CHECK_THROWS_AS(forward(p, cfg, bad_id, false), ct::IdOutOfRange);
}

TEST_CASE("masked positions do not influence attended outputs") {
    auto cfg = tiny_config();
    auto p = init_params(cfg, 2);
    jitter(p, 9, 0.1);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto batch = random_batch(cfg, 2, 8, rng, true);
        batch.attention_mask[3] = 0;  // an interior hole too
        batch.attention_mask[0] = 1;
        auto base = forward(p, cfg, batch, false);
        auto changed = batch;
        std::uniform_int_distribution<int> id(0, cfg.vocab_size - 1);
        for (std::size_t i = 0; i < changed.ids.size(); ++i)
            if (!changed.attention_mask[i]) changed.ids[i] = id(rng);
        auto other = forward(p, cfg, changed, false);
        for (int b = 0; b < batch.batch; ++b)
            for (int l = 0; l < batch.length; ++l)
                if (batch.attended(b, l)) {
                    const auto r = b * batch.length + l;
                    CHECK(std::memcmp(base.hidden.row(r).data(), other.hidden.row(r).data(),
                                      sizeof(float) * cfg.hidden_size) == 0);
                }
    }
}

TEST_CASE("attention rows are distributions over attended keys") {
    auto cfg = tiny_config();
    auto p = init_params(cfg, 5);
    jitter(p, 5, 0.3);
    std::mt19937_64 rng(6);
    auto batch = random_batch(cfg, 3, 7, rng, true);
    auto r = forward(p, cfg, batch, false);
    const int heads = cfg.num_attention_heads;
    for (const auto& layer : r.tape.layers)
        for (int b = 0; b < batch.batch; ++b)
            for (int h = 0; h < heads; ++h) {
                const auto& probs = layer.probs[static_cast<std::size_t>(b * heads + h)];
                for (int q = 0; q < batch.length; ++q) {
                    double s = 0.0;
                    for (int k = 0; k < batch.length; ++k) {
                        if (!batch.attended(b, k)) CHECK(probs(q, k) == 0.0f);
                        CHECK(probs(q, k) >= 0.0f);
                        s += probs(q, k);
                    }
                    CHECK(std::abs(s - 1.0) < 1e-6);
                }
            }
}

TEST_CASE("permuting tokens permutes outputs when positions are zeroed") {
    auto cfg = tiny_config();
    auto p = init_params(cfg, 11).cast<double>();
    jitter(p, 11, 0.1);
    p[names::position_embeddings].setZero();
    std::mt19937_64 rng(12);
    auto batch = random_batch(cfg, 1, 6, rng, false);
    std::vector<int> perm{3, 0, 5, 1, 4, 2};
    auto permuted = batch;
    for (int i = 0; i < 6; ++i) permuted.ids[i] = batch.ids[perm[i]];
    auto a = forward(p, cfg, batch, false);
    auto b = forward(p, cfg, permuted, false);
    for (int i = 0; i < 6; ++i) CHECK((b.hidden.row(i) - a.hidden.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dropout only in train mode and seeded") {
    auto cfg = tiny_config();
    auto p = init_params(cfg, 13);
    std::mt19937_64 rng(1);
    auto batch = random_batch(cfg, 2, 6, rng, false);
    auto eval1 = forward(p, cfg, batch, false, &rng);
    auto eval2 = forward(p, cfg, batch, false, &rng);
    CHECK(eval1.hidden == eval2.hidden);
    std::mt19937_64 r1(99), r2(99);
    auto t1 = forward(p, cfg, batch, true, &r1);
    auto t2 = forward(p, cfg, batch, true, &r2);
    CHECK(t1.hidden == t2.hidden);
    CHECK(t1.hidden != eval1.hidden);
}

TEST_CASE("no NaN or Inf over random batches") {
    auto cfg = tiny_config();
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        auto p = init_params(cfg, static_cast<std::uint64_t>(trial));
        jitter(p, static_cast<std::uint64_t>(trial), 0.5);
        auto batch = random_batch(cfg, 2, 8, rng, true);
        std::mt19937_64 drop(trial);
        auto r = forward(p, cfg, batch, trial % 2 == 0, &drop);
        REQUIRE(r.hidden.allFinite());
        Matrix<float> up = Matrix<float>::Random(r.hidden.rows(), r.hidden.cols());
        auto g = backward(r.tape, up);
        CHECK(g.all_finite());
    }
}

TEST_CASE("backward linearity, pad isolation and stale tapes") {
    auto cfg = tiny_config();
    auto p = init_params(cfg, 31);
    std::mt19937_64 rng(31);
    auto batch = random_batch(cfg, 2, 8, rng, false);
    // Give each padded slot its own id so its embedding row is touched only there.
    batch.ids = {1, 2, 3, 4, 5, 20, 21, 22, 6, 7, 8, 9, 10, 11, 12, 19};
    batch.attention_mask = {1, 1, 1, 1, 1, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 0};
    auto r = forward(p, cfg, batch, false);

    auto zero = backward(r.tape, Matrix<float>(Matrix<float>::Zero(r.hidden.rows(), r.hidden.cols())));
    for (const auto& t : zero.tensors()) CHECK_MESSAGE((t.value.array() == 0.0f).all(), t.name);

    Matrix<double> w = Matrix<double>::Random(r.hidden.rows(), r.hidden.cols());
    Matrix<float> up = masked_weights(w, batch).cast<float>();
    auto g = backward(r.tape, up);
    const auto& dw = g[names::word_embeddings];
    for (int id : {19, 20, 21, 22}) CHECK((dw.row(id).array() == 0.0f).all());
    for (int id : {1, 6, 12}) CHECK((dw.row(id).array() != 0.0f).any());

    p.bump_version();
    CHECK_THROWS_AS(backward(r.tape, up), ct::StaleTape);
}

TEST_CASE("gradients match central finite differences") {
    auto cfg = tiny_config();
    auto p = init_params(cfg, 41).cast<double>();
    jitter(p, 41, 0.05);
    std::mt19937_64 rng(41);
    auto batch = random_batch(cfg, 2, 6, rng, false);
    batch.attention_mask = {1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1};
    auto r = forward(p, cfg, batch, false);
    Matrix<double> w = masked_weights(Matrix<double>::Random(r.hidden.rows(), r.hidden.cols()), batch);
    auto g = backward(r.tape, w);

    // Scale-aware relative error: entries whose true gradient is tiny are
    // compared against the largest gradient of the same tensor (floor 1e-6,
    // which only matters for the key bias whose true gradient is exactly 0).
    const double h = 1e-3;
    double worst = 0.0;
    std::string worst_name;
    int checked_tensors = 0;
    for (std::size_t ti = 0; ti < p.tensors().size(); ++ti) {
        auto& t = p.tensors()[ti];
        if (t.name.rfind("lm_head", 0) == 0) continue;  // not on the encoder path
        const auto& grad = g.tensors()[ti].value;
        const double scale = std::max(grad.cwiseAbs().maxCoeff(), 1e-6);
        for (Eigen::Index i = 0; i < t.value.size(); ++i) {
            const double orig = t.value.data()[i];
            t.value.data()[i] = orig + h;
            const double up = projection_loss(forward(p, cfg, batch, false).hidden, w, batch);
            t.value.data()[i] = orig - h;
            const double down = projection_loss(forward(p, cfg, batch, false).hidden, w, batch);
            t.value.data()[i] = orig;
            const double numeric = (up - down) / (2 * h);
            const double analytic = grad.data()[i];
            const double err = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), scale});
            if (err > worst) {
                worst = err;
                worst_name = t.name;
            }
        }
        ++checked_tensors;
    }
    MESSAGE("max relative gradient error " << worst << " in " << worst_name);
    CHECK(checked_tensors == 4 + 16 * cfg.num_hidden_layers);
    CHECK(worst < 1e-4);
}

TEST_CASE("checkpoint round trip and corruption") {
    auto cfg = tiny_config();
    auto p = init_params(cfg, 51);
    jitter(p, 51, 1.0);
    nlohmann::json meta = {{"epoch", 3}, {"note", "x"}};
    auto bytes = serialize_checkpoint(p, cfg, meta);
    REQUIRE(bytes.substr(0, 4) == "CTXF");
    auto ck = deserialize_checkpoint(bytes);
    CHECK(ck.params.identical(p));
    CHECK(ck.config == cfg);
    CHECK(ck.metadata == meta);

    auto dir = std::filesystem::temp_directory_path() / "ct_test_model_ckpt";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "a.ctxf", p, cfg, meta);
    auto loaded = load_checkpoint(dir / "a.ctxf");
    CHECK(loaded.params.identical(p));
    CHECK(serialize_checkpoint(loaded.params, loaded.config, loaded.metadata) == bytes);

    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1})
        CHECK_THROWS_AS(deserialize_checkpoint(std::string_view(bytes).substr(0, cut)), ct::CorruptCheckpoint);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), ct::CorruptCheckpoint);
    auto bad_version = bytes;
    bad_version[4] = 2;
    CHECK_THROWS_AS(deserialize_checkpoint(bad_version), ct::VersionMismatch);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes + "z"), ct::CorruptCheckpoint);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ctxf"), ct::Error);
    std::filesystem::remove_all(dir);
}

#include "ct/contrastive/sentence_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ct/common/errors.hpp"
#include "ct/common/io.hpp"
#include "ct/contrastive/losses.hpp"
#include "ct/textprep/normalize.hpp"

namespace ct::contrastive {

namespace {

std::vector<bpe::TokenId> frame(const bpe::Tokenizer& tok, const std::string& text, int max_length, bool preprocess) {
    auto ids = tok.encode(preprocess ? textprep::preprocess_tweet(text) : text);
    const auto keep = static_cast<std::size_t>(std::max(0, max_length - 2));
    if (ids.size() > keep) ids.resize(keep);
    std::vector<bpe::TokenId> out;
    out.reserve(ids.size() + 2);
    out.push_back(bpe::Special::cls);
    out.insert(out.end(), ids.begin(), ids.end());
    out.push_back(bpe::Special::sep);
    return out;
}

model::EncodedBatch padded_batch(const std::vector<const std::vector<bpe::TokenId>*>& seqs) {
    model::EncodedBatch b;
    b.batch = static_cast<int>(seqs.size());
    for (const auto* s : seqs) b.length = std::max(b.length, static_cast<int>(s->size()));
    b.ids.assign(static_cast<std::size_t>(b.batch) * b.length, bpe::Special::pad);
    b.attention_mask.assign(b.ids.size(), 0);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        std::copy(seqs[i]->begin(), seqs[i]->end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i * b.length));
        std::fill_n(b.attention_mask.begin() + static_cast<std::ptrdiff_t>(i * b.length), seqs[i]->size(), 1);
    }
    return b;
}

}  // namespace

SentenceEncoder from_checkpoint(const model::Checkpoint& ck, std::shared_ptr<const bpe::Tokenizer> tokenizer) {
    if (!tokenizer) throw InvalidConfig("sentence encoder needs a tokenizer");
    if (tokenizer->vocab_size() > static_cast<std::size_t>(ck.config.vocab_size))
        throw InvalidConfig("tokenizer vocabulary is larger than the model's");
    SentenceEncoder enc{ck.params, ck.config, std::move(tokenizer), pooling::Strategy::mean_with_attention, true};
    if (ck.metadata.contains("pooling")) enc.pooling = pooling::parse_strategy(ck.metadata["pooling"].get<std::string>());
    if (ck.metadata.contains("preprocess")) enc.preprocess = ck.metadata["preprocess"].get<bool>();
    return enc;
}

void save_sentence_encoder(const std::filesystem::path& path, const SentenceEncoder& enc, nlohmann::json metadata) {
    metadata["pooling"] = pooling::to_string(enc.pooling);
    metadata["preprocess"] = enc.preprocess;
    model::save_checkpoint(path, enc.params, enc.config, metadata);
}

model::EncodedBatch tokenize_batch(const bpe::Tokenizer& tok, const std::vector<std::string>& texts, int max_length,
                                   bool preprocess) {
    if (texts.empty()) throw EmptyInput("no texts to tokenize");
    std::vector<std::vector<bpe::TokenId>> seqs;
    seqs.reserve(texts.size());
    for (const auto& t : texts) seqs.push_back(frame(tok, t, max_length, preprocess));
    std::vector<const std::vector<bpe::TokenId>*> ptrs;
    for (const auto& s : seqs) ptrs.push_back(&s);
    return padded_batch(ptrs);
}

model::Matrix<double> embed_batch(const SentenceEncoder& enc, const model::EncodedBatch& batch) {
    auto fwd = model::forward(enc.params, enc.config, batch, false);
    return pooling::pool_batch<float>(fwd.hidden, batch, enc.pooling).cast<double>();
}

model::Matrix<double> encode_sentences(const SentenceEncoder& enc, const std::vector<std::string>& texts,
                                       int batch_size) {
    if (texts.empty()) throw EmptyInput("no texts to encode");
    if (!enc.tokenizer) throw InvalidConfig("sentence encoder has no tokenizer");
    batch_size = std::max(1, batch_size);
    model::Matrix<double> out(static_cast<Eigen::Index>(texts.size()), enc.config.hidden_size);
    for (std::size_t start = 0; start < texts.size(); start += static_cast<std::size_t>(batch_size)) {
        const auto end = std::min(texts.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                       texts.begin() + static_cast<std::ptrdiff_t>(end));
        auto pooled = embed_batch(enc, tokenize_batch(*enc.tokenizer, chunk, enc.max_length(), enc.preprocess));
        for (Eigen::Index i = 0; i < pooled.rows(); ++i) {
            const double norm = pooled.row(i).norm();
            if (!(norm > 0.0) || !std::isfinite(norm)) throw ZeroVector("sentence embedding with zero norm");
            out.row(static_cast<Eigen::Index>(start) + i) = pooled.row(i) / norm;
        }
    }
    return out;
}

ContrastiveDataset load_contrastive_tsv(const std::filesystem::path& path) {
    ContrastiveDataset d;
    std::size_t columns = 0, line_no = 0;
    for (const auto& line : io::read_lines(path)) {
        ++line_no;
        if (line.empty()) continue;
        auto cols = io::split(line, '\t');
        if (cols.size() != 2 && cols.size() != 3)
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 2 or 3 tab-separated columns");
        if (columns == 0) columns = cols.size();
        if (cols.size() != columns)
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": mixed pair and triplet rows");
        d.anchors.push_back(cols[0]);
        d.positives.push_back(cols[1]);
        if (columns == 3) d.negatives.push_back(cols[2]);
    }
    if (d.anchors.empty()) throw EmptyInput(path.string() + ": no examples");
    return d;
}

Objective parse_objective(const std::string& name) {
    if (name == "mnr") return Objective::mnr;
    if (name == "mnr-hard") return Objective::mnr_hard;
    throw InvalidConfig("unknown objective '" + name + "' (mnr, mnr-hard)");
}

std::string to_string(Objective o) { return o == Objective::mnr ? "mnr" : "mnr-hard"; }

void ContrastiveConfig::validate() const {
    if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
    if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
    if (!(lr >= 0.0)) throw InvalidConfig("lr must be >= 0");
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) throw InvalidConfig("warmup_frac must lie in (0, 1)");
    if (!(temperature > 0.0)) throw InvalidConfig("temperature must be positive");
}

ContrastiveConfig ContrastiveConfig::from_json(const nlohmann::json& j) {
    ContrastiveConfig c;
    if (!j.is_object()) throw InvalidConfig("contrastive config must be a JSON object");
    try {
        if (j.contains("objective")) c.objective = parse_objective(j["objective"].get<std::string>());
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr = j.value("lr", c.lr);
        c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
        c.temperature = j.value("temperature", c.temperature);
        c.seed = j.value("seed", c.seed);
        c.dropout = j.value("dropout", c.dropout);
        c.adamw.weight_decay = j.value("weight_decay", c.adamw.weight_decay);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("contrastive config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json ContrastiveConfig::to_json() const {
    return {{"objective", to_string(objective)}, {"epochs", epochs},           {"batch_size", batch_size},
            {"lr", lr},                          {"warmup_frac", warmup_frac}, {"temperature", temperature},
            {"seed", seed},                      {"dropout", dropout},         {"weight_decay", adamw.weight_decay}};
}

SentenceEncoder train_encoder(const SentenceEncoder& initial, const ContrastiveDataset& data,
                              const ContrastiveConfig& cfg, const ContrastiveEpochCallback& on_epoch) {
    cfg.validate();
    if (!initial.tokenizer) throw InvalidConfig("sentence encoder has no tokenizer");
    if (data.size() == 0) throw EmptyInput("empty contrastive dataset");
    if (data.positives.size() != data.size() || (data.has_negatives() && data.negatives.size() != data.size()))
        throw LengthMismatch("anchor/positive/negative columns differ in length");
    const bool hard = cfg.objective == Objective::mnr_hard;
    if (hard != data.has_negatives())
        throw ObjectiveDatasetMismatch(hard ? "hard-negative objective needs triplets"
                                            : "plain ranking objective expects pairs, got triplets");

    SentenceEncoder enc = initial;
    enc.pooling = pooling::Strategy::mean_with_attention;
    const auto& tok = *enc.tokenizer;
    const int max_len = enc.max_length();
    auto frame_all = [&](const std::vector<std::string>& texts) {
        std::vector<std::vector<bpe::TokenId>> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(frame(tok, t, max_len, enc.preprocess));
        return out;
    };
    const auto anchors = frame_all(data.anchors);
    const auto positives = frame_all(data.positives);
    const auto negatives = frame_all(data.negatives);

    auto grads = enc.params.zeros_like();
    train::AdamW<float> opt(enc.params, cfg.adamw);
    std::mt19937_64 rng(cfg.seed);
    const std::size_t n = data.size(), bs = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t steps_per_epoch = (n + bs - 1) / bs;
    const auto total_steps = static_cast<std::int64_t>(steps_per_epoch) * cfg.epochs;
    std::vector<std::size_t> order(n);
    std::int64_t step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            const std::size_t first = s * bs, last = std::min(n, first + bs);
            const auto m = static_cast<Eigen::Index>(last - first);
            std::vector<const std::vector<bpe::TokenId>*> seqs;
            for (std::size_t i = first; i < last; ++i) seqs.push_back(&anchors[order[i]]);
            for (std::size_t i = first; i < last; ++i) seqs.push_back(&positives[order[i]]);
            if (hard)
                for (std::size_t i = first; i < last; ++i) seqs.push_back(&negatives[order[i]]);
            const auto batch = padded_batch(seqs);

            auto fwd = model::forward(enc.params, enc.config, batch, cfg.dropout, &rng);
            pooling::PoolTape pool_tape;
            const auto pooled = pooling::pool_batch<float>(fwd.hidden, batch, enc.pooling, &pool_tape);
            LossGrad<float> g;
            const model::Matrix<float> a = pooled.topRows(m), p = pooled.middleRows(m, m);
            const double loss = hard ? mnr_hard_loss<float>(a, p, model::Matrix<float>(pooled.bottomRows(m)),
                                                            cfg.temperature, &g)
                                     : mnr_loss<float>(a, p, cfg.temperature, &g);
            if (!std::isfinite(loss)) throw DivergedLoss("non-finite contrastive loss in epoch " + std::to_string(epoch));
            loss_sum += loss;

            model::Matrix<float> d_pooled(pooled.rows(), pooled.cols());
            d_pooled.topRows(m) = g.anchor;
            d_pooled.middleRows(m, m) = g.positive;
            if (hard) d_pooled.bottomRows(m) = g.negative;
            grads.set_zero();
            model::backward_into(fwd.tape, pooling::pool_backward<float>(pool_tape, d_pooled), grads);
            opt.step(enc.params, grads, train::lr_schedule(step, total_steps, cfg.lr, cfg.warmup_frac));
            ++step;
        }
        if (on_epoch) on_epoch(epoch, loss_sum / static_cast<double>(steps_per_epoch));
    }
    return enc;
}

}  // namespace ct::contrastive

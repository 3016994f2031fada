#include "ct/classify/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "ct/common/errors.hpp"
#include "ct/common/io.hpp"
#include "ct/model/checkpoint.hpp"
#include "ct/pooling/pooling.hpp"
#include "ct/textprep/normalize.hpp"

namespace ct::classify {

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& rows) const {
    LabeledDataset out;
    out.class_names = class_names;
    for (auto r : rows) {
        out.texts.push_back(texts.at(r));
        out.labels.push_back(labels.at(r));
    }
    return out;
}

void LabeledDataset::validate() const {
    if (texts.size() != labels.size()) throw LengthMismatch("texts and labels differ in length");
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (int y : labels) {
        if (y < 0 || y >= class_count()) throw UnknownClass("label id " + std::to_string(y));
        ++counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] == 0) throw EmptyClass("class '" + class_names[c] + "' has no rows");
}

LabeledDataset load_labeled_tsv(const std::filesystem::path& path) {
    auto lines = io::read_lines(path);
    if (lines.empty()) throw EmptyInput(path.string() + ": empty file");
    std::vector<std::pair<std::string, std::string>> rows;
    std::set<std::string> names;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto tab = lines[i].rfind('\t');
        if (tab == std::string::npos)
            throw ParseError(path.string() + ":" + std::to_string(i + 1) + ": expected text<TAB>label");
        rows.emplace_back(lines[i].substr(0, tab), lines[i].substr(tab + 1));
        names.insert(rows.back().second);
    }
    if (rows.empty()) throw EmptyInput(path.string() + ": no rows after the header");
    LabeledDataset d;
    d.class_names.assign(names.begin(), names.end());
    std::map<std::string, int> id;
    for (std::size_t c = 0; c < d.class_names.size(); ++c) id[d.class_names[c]] = static_cast<int>(c);
    for (auto& [text, label] : rows) {
        d.texts.push_back(std::move(text));
        d.labels.push_back(id[label]);
    }
    return d;
}

Split stratified_split(const LabeledDataset& d, std::array<double, 3> ratios, std::uint64_t seed) {
    d.validate();
    for (double r : ratios)
        if (!(r > 0.0 && r < 1.0)) throw InvalidConfig("split ratios must lie in (0, 1)");
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw InvalidConfig("split ratios must sum to 1");
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(d.class_count()));
    for (std::size_t i = 0; i < d.size(); ++i) members[static_cast<std::size_t>(d.labels[i])].push_back(i);

    std::mt19937_64 rng(seed);
    Split s;
    for (std::size_t c = 0; c < members.size(); ++c) {
        auto& m = members[c];
        const auto n = m.size();
        if (n < 3)
            throw ClassTooSmall("class '" + d.class_names[c] + "' has " + std::to_string(n) + " rows; need at least 3");
        std::shuffle(m.begin(), m.end(), rng);
        const auto test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratios[2] * n)));
        const auto val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratios[1] * n)));
        const auto train = n - std::min(n - 1, test + val);
        s.train.insert(s.train.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(train));
        s.val.insert(s.val.end(), m.begin() + static_cast<std::ptrdiff_t>(train),
                     m.begin() + static_cast<std::ptrdiff_t>(train + val));
        s.test.insert(s.test.end(), m.begin() + static_cast<std::ptrdiff_t>(train + val), m.end());
    }
    for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

void EarlyStopConfig::validate() const {
    if (patience < 1) throw InvalidConfig("patience must be >= 1");
    if (!(threshold >= 0.0)) throw InvalidConfig("threshold must be >= 0");
    if (max_epochs < 1) throw InvalidConfig("max_epochs must be >= 1");
}

EarlyStopper::EarlyStopper(EarlyStopConfig cfg) : cfg_(cfg) { cfg_.validate(); }

bool EarlyStopper::update(double score) {
    ++epochs_;
    if (epochs_ == 1 || score > best_ + cfg_.threshold) {
        best_ = score;
        stale_ = 0;
    } else {
        ++stale_;
    }
    return stale_ >= cfg_.patience || epochs_ >= cfg_.max_epochs;
}

double f1_macro(const std::vector<int>& y_true, const std::vector<int>& y_pred, int c) {
    if (y_true.size() != y_pred.size()) throw LengthMismatch("y_true and y_pred differ in length");
    if (y_true.empty()) throw EmptyInput("no predictions to score");
    if (c < 1) throw InvalidConfig("class count must be >= 1");
    std::vector<double> tp(static_cast<std::size_t>(c)), fp(tp.size()), fn(tp.size());
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const int t = y_true[i], p = y_pred[i];
        if (t < 0 || t >= c || p < 0 || p >= c) throw UnknownClass("class id outside [0, " + std::to_string(c) + ")");
        if (t == p) {
            ++tp[static_cast<std::size_t>(t)];
        } else {
            ++fp[static_cast<std::size_t>(p)];
            ++fn[static_cast<std::size_t>(t)];
        }
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < tp.size(); ++k) {
        const double precision = tp[k] + fp[k] > 0 ? tp[k] / (tp[k] + fp[k]) : 0.0;
        const double recall = tp[k] + fn[k] > 0 ? tp[k] / (tp[k] + fn[k]) : 0.0;
        sum += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    return sum / static_cast<double>(c);
}

void FinetuneConfig::validate() const {
    if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
    if (!(lr >= 0.0)) throw InvalidConfig("lr must be >= 0");
    early_stop.validate();
}

FinetuneConfig FinetuneConfig::from_json(const nlohmann::json& j) {
    FinetuneConfig c;
    if (!j.is_object()) throw InvalidConfig("fine-tuning config must be a JSON object");
    try {
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr = j.value("lr", c.lr);
        c.seed = j.value("seed", c.seed);
        c.dropout = j.value("dropout", c.dropout);
        c.adamw.weight_decay = j.value("weight_decay", c.adamw.weight_decay);
        c.early_stop.patience = j.value("patience", c.early_stop.patience);
        c.early_stop.threshold = j.value("threshold", c.early_stop.threshold);
        c.early_stop.max_epochs = j.value("max_epochs", c.early_stop.max_epochs);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("fine-tuning config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json FinetuneConfig::to_json() const {
    return {{"batch_size", batch_size},
            {"lr", lr},
            {"seed", seed},
            {"dropout", dropout},
            {"weight_decay", adamw.weight_decay},
            {"patience", early_stop.patience},
            {"threshold", early_stop.threshold},
            {"max_epochs", early_stop.max_epochs}};
}

namespace {

model::Matrix<double> head_logits(const model::EncoderParams& p, const model::Matrix<float>& pooled) {
    model::Matrix<float> z = (pooled * p[kHeadWeight]).rowwise() + p[kHeadBias].row(0);
    return z.cast<double>();
}

}  // namespace

model::Matrix<double> logits(const Classifier& clf, const std::vector<std::string>& texts, int batch_size) {
    if (texts.empty()) throw EmptyInput("no texts to classify");
    const auto& enc = clf.encoder;
    const auto classes = static_cast<Eigen::Index>(clf.class_names.size());
    model::Matrix<double> out(static_cast<Eigen::Index>(texts.size()), classes);
    batch_size = std::max(1, batch_size);
    for (std::size_t start = 0; start < texts.size(); start += static_cast<std::size_t>(batch_size)) {
        const auto end = std::min(texts.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                       texts.begin() + static_cast<std::ptrdiff_t>(end));
        auto batch = contrastive::tokenize_batch(*enc.tokenizer, chunk, enc.max_length(), enc.preprocess);
        auto fwd = model::forward(enc.params, enc.config, batch, false);
        auto pooled = pooling::pool_batch<float>(fwd.hidden, batch, enc.pooling);
        out.middleRows(static_cast<Eigen::Index>(start), pooled.rows()) = head_logits(enc.params, pooled);
    }
    return out;
}

std::vector<int> argmax_rows(const model::Matrix<double>& scores) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < scores.cols(); ++c)
            if (scores(r, c) > scores(r, best)) best = c;
        out.push_back(static_cast<int>(best));
    }
    return out;
}

std::vector<int> predict(const Classifier& clf, const std::vector<std::string>& texts) {
    return argmax_rows(logits(clf, texts));
}

FinetuneResult finetune(const contrastive::SentenceEncoder& base, const LabeledDataset& data, const Split& split,
                        const FinetuneConfig& cfg, const FinetuneCallback& on_epoch) {
    cfg.validate();
    data.validate();
    if (data.class_count() < 2) throw InvalidConfig("classification needs at least 2 classes");
    if (split.train.empty() || split.val.empty()) throw EmptyInput("train and validation splits must be non-empty");
    if (!base.tokenizer) throw InvalidConfig("sentence encoder has no tokenizer");

    FinetuneResult result;
    Classifier& clf = result.classifier;
    clf.encoder = base;
    clf.encoder.pooling = pooling::Strategy::mean_with_attention;
    clf.class_names = data.class_names;
    auto& params = clf.encoder.params;
    const auto H = clf.encoder.config.hidden_size;
    const auto C = data.class_count();
    std::mt19937_64 rng(cfg.seed);
    {
        if (!params.contains(kHeadWeight)) params.add(kHeadWeight, H, C);
        if (!params.contains(kHeadBias)) params.add(kHeadBias, 1, C, 1);
        auto& w = params[kHeadWeight];
        auto& b = params[kHeadBias];
        if (w.rows() != H || w.cols() != C || b.cols() != C) throw ShapeMismatch("existing head has the wrong shape");
        std::normal_distribution<float> normal(0.0f, 0.02f);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
        b.setZero();
    }

    const auto& enc = clf.encoder;
    std::vector<std::vector<bpe::TokenId>> seqs;  // framed ids for train rows
    for (auto r : split.train) {
        auto b = contrastive::tokenize_batch(*enc.tokenizer, {data.texts[r]}, enc.max_length(), enc.preprocess);
        seqs.emplace_back(b.ids.begin(), b.ids.end());
    }
    const auto val = data.subset(split.val);

    auto grads = params.zeros_like();
    train::AdamW<float> opt(params, cfg.adamw);
    EarlyStopper stopper(cfg.early_stop);
    std::vector<std::size_t> order(seqs.size());
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 1;; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t first = 0; first < order.size(); first += bs) {
            const auto last = std::min(order.size(), first + bs);
            model::EncodedBatch batch;
            batch.batch = static_cast<int>(last - first);
            for (std::size_t i = first; i < last; ++i)
                batch.length = std::max(batch.length, static_cast<int>(seqs[order[i]].size()));
            batch.ids.assign(static_cast<std::size_t>(batch.batch) * batch.length, bpe::Special::pad);
            batch.attention_mask.assign(batch.ids.size(), 0);
            std::vector<int> y;
            for (std::size_t i = first; i < last; ++i) {
                const auto& s = seqs[order[i]];
                const auto off = static_cast<std::ptrdiff_t>((i - first) * batch.length);
                std::copy(s.begin(), s.end(), batch.ids.begin() + off);
                std::fill_n(batch.attention_mask.begin() + off, s.size(), 1);
                y.push_back(data.labels[split.train[order[i]]]);
            }

            auto fwd = model::forward(params, enc.config, batch, cfg.dropout, &rng);
            pooling::PoolTape tape;
            auto pooled = pooling::pool_batch<float>(fwd.hidden, batch, enc.pooling, &tape);
            auto z = head_logits(params, pooled);
            const auto n = static_cast<double>(z.rows());
            model::Matrix<double> dz(z.rows(), z.cols());
            double loss = 0.0;
            for (Eigen::Index r = 0; r < z.rows(); ++r) {
                const double mx = z.row(r).maxCoeff();
                const Eigen::RowVectorXd e = (z.row(r).array() - mx).exp();
                const double sum = e.sum();
                loss += mx + std::log(sum) - z(r, y[static_cast<std::size_t>(r)]);
                dz.row(r) = e / (sum * n);
                dz(r, y[static_cast<std::size_t>(r)]) -= 1.0 / n;
            }
            loss /= n;
            if (!std::isfinite(loss)) throw DivergedLoss("non-finite classification loss in epoch " + std::to_string(epoch));
            loss_sum += loss;
            ++batches;

            grads.set_zero();
            const model::Matrix<float> dzf = dz.cast<float>();
            grads[kHeadWeight] = pooled.transpose() * dzf;
            grads[kHeadBias] = dzf.colwise().sum();
            model::Matrix<float> d_pooled = dzf * params[kHeadWeight].transpose();
            model::backward_into(fwd.tape, pooling::pool_backward<float>(tape, d_pooled), grads);
            opt.step(params, grads, cfg.lr);
        }
        const double f1 = f1_macro(val.labels, predict(clf, val.texts), C);
        result.val_f1.push_back(f1);
        if (on_epoch) on_epoch(epoch, loss_sum / static_cast<double>(std::max<std::size_t>(1, batches)), f1);
        if (stopper.update(f1)) {
            result.stopped_early = stopper.stale_epochs() >= cfg.early_stop.patience;
            break;
        }
    }
    return result;
}

void save_classifier(const std::filesystem::path& path, const Classifier& clf) {
    nlohmann::json meta = {{"kind", "classifier"}, {"class_names", clf.class_names}};
    contrastive::save_sentence_encoder(path, clf.encoder, meta);
}

Classifier load_classifier(const std::filesystem::path& path, std::shared_ptr<const bpe::Tokenizer> tokenizer) {
    auto ck = model::load_checkpoint(path);
    if (!ck.metadata.contains("class_names") || !ck.params.contains(kHeadWeight) || !ck.params.contains(kHeadBias))
        throw CorruptCheckpoint(path.string() + " is not a classifier checkpoint");
    Classifier clf{contrastive::from_checkpoint(ck, std::move(tokenizer)),
                   ck.metadata["class_names"].get<std::vector<std::string>>()};
    if (clf.encoder.params[kHeadWeight].cols() != static_cast<Eigen::Index>(clf.class_names.size()))
        throw CorruptCheckpoint("classifier head does not match its class list");
    return clf;
}

std::pair<double, double> mean_ci95(const std::vector<double>& values) {
    if (values.empty()) throw EmptyInput("no values");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

nlohmann::json SeedRuns::to_json() const {
    return {{"dataset", dataset}, {"seeds", seeds}, {"f1_per_seed", f1_per_seed}, {"mean", mean}, {"ci95", ci95}};
}

SeedRuns finetune_seeds(const contrastive::SentenceEncoder& base, const LabeledDataset& data, const Split& split,
                        FinetuneConfig cfg, const std::vector<std::uint64_t>& seeds, std::string dataset_name) {
    if (seeds.empty()) throw EmptyInput("no seeds");
    if (split.test.empty()) throw EmptyInput("empty test split");
    SeedRuns out{std::move(dataset_name), seeds, {}, 0.0, 0.0};
    const auto test = data.subset(split.test);
    for (auto seed : seeds) {
        cfg.seed = seed;
        auto r = finetune(base, data, split, cfg);
        out.f1_per_seed.push_back(f1_macro(test.labels, predict(r.classifier, test.texts), data.class_count()));
    }
    std::tie(out.mean, out.ci95) = mean_ci95(out.f1_per_seed);
    return out;
}

}  // namespace ct::classify

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "ct/classify/classifier.hpp"
#include "ct/common/errors.hpp"
#include "ct/common/io.hpp"

using namespace ct;
using namespace ct::classify;

namespace {

LabeledDataset make_dataset(const std::vector<int>& per_class) {
    LabeledDataset d;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        d.class_names.push_back("c" + std::to_string(c));
        for (int i = 0; i < per_class[c]; ++i) {
            d.texts.push_back("text " + std::to_string(c) + " " + std::to_string(i));
            d.labels.push_back(static_cast<int>(c));
        }
    }
    return d;
}

// Per-class precision/recall/F1 straight from the confusion matrix.
double brute_f1(const std::vector<int>& t, const std::vector<int>& p, int c) {
    std::vector<std::vector<int>> cm(static_cast<std::size_t>(c), std::vector<int>(static_cast<std::size_t>(c)));
    for (std::size_t i = 0; i < t.size(); ++i) ++cm[static_cast<std::size_t>(t[i])][static_cast<std::size_t>(p[i])];
    double sum = 0;
    for (int k = 0; k < c; ++k) {
        double tp = cm[k][k], col = 0, row = 0;
        for (int j = 0; j < c; ++j) {
            col += cm[j][k];
            row += cm[k][j];
        }
        double prec = col ? tp / col : 0, rec = row ? tp / row : 0;
        sum += (prec + rec) ? 2 * prec * rec / (prec + rec) : 0;
    }
    return sum / c;
}

}  // namespace

TEST_CASE("stratified split sizes") {
    auto one = make_dataset({10, 3});
    auto s = stratified_split(one);
    std::vector<int> tr(2), va(2), te(2);
    for (auto i : s.train) ++tr[static_cast<std::size_t>(one.labels[i])];
    for (auto i : s.val) ++va[static_cast<std::size_t>(one.labels[i])];
    for (auto i : s.test) ++te[static_cast<std::size_t>(one.labels[i])];
    CHECK(tr[0] == 7);
    CHECK(va[0] == 1);
    CHECK(te[0] == 2);
    CHECK(tr[1] == 1);
    CHECK(va[1] == 1);
    CHECK(te[1] == 1);

    auto two = make_dataset({100, 50});
    auto s2 = stratified_split(two);
    int a = 0, b = 0;
    for (auto i : s2.train) (two.labels[i] == 0 ? a : b)++;
    CHECK(std::abs(a - 70) <= 1);
    CHECK(std::abs(b - 35) <= 1);

    CHECK_THROWS_AS(stratified_split(make_dataset({10, 2})), ClassTooSmall);
}

TEST_CASE("stratified split partitions exactly and reproducibly") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<int> sizes;
        for (int c = 0; c < 2 + trial % 4; ++c) sizes.push_back(3 + static_cast<int>(rng() % 60));
        auto d = make_dataset(sizes);
        auto s = stratified_split(d);
        std::vector<std::size_t> all;
        for (auto* v : {&s.train, &s.val, &s.test}) all.insert(all.end(), v->begin(), v->end());
        std::sort(all.begin(), all.end());
        REQUIRE(all.size() == d.size());
        for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
        for (std::size_t c = 0; c < sizes.size(); ++c) {
            int n = sizes[c], tr = 0, va = 0, te = 0;
            for (auto i : s.train) tr += d.labels[i] == static_cast<int>(c);
            for (auto i : s.val) va += d.labels[i] == static_cast<int>(c);
            for (auto i : s.test) te += d.labels[i] == static_cast<int>(c);
            // with 3 rows the one-per-split minimum forces (1, 1, 1)
            if (n >= 4) CHECK(std::abs(tr - 0.7 * n) <= 1.0 + 1e-9);
            CHECK(std::abs(va - 0.1 * n) <= 1.0 + 1e-9);
            CHECK(std::abs(te - 0.2 * n) <= 1.0 + 1e-9);
        }
        auto again = stratified_split(d);
        CHECK(again.train == s.train);
        CHECK(again.test == s.test);
        auto other = stratified_split(d, {0.7, 0.1, 0.2}, 7);
        CHECK(other.train.size() == s.train.size());
    }
}

TEST_CASE("early stopping traces") {
    EarlyStopConfig cfg{5, 1e-4, 30};
    EarlyStopper flat(cfg);
    int stop_at = 0;
    for (int e = 1; e <= 30; ++e)
        if (flat.update(0.5)) {
            stop_at = e;
            break;
        }
    CHECK(stop_at == 6);

    // gains below the threshold do not reset patience
    EarlyStopper tiny(cfg);
    std::vector<double> scores{0.5, 0.50005, 0.50009, 0.50002, 0.50008, 0.50001, 0.9};
    stop_at = 0;
    for (std::size_t e = 0; e < scores.size(); ++e)
        if (tiny.update(scores[e])) {
            stop_at = static_cast<int>(e) + 1;
            break;
        }
    CHECK(stop_at == 6);

    EarlyStopper improving(cfg);
    stop_at = 0;
    for (int e = 1; e <= 100; ++e)
        if (improving.update(0.01 * e)) {
            stop_at = e;
            break;
        }
    CHECK(stop_at == 30);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        EarlyStopConfig c{1 + trial % 6, 1e-4, 5 + trial % 20};
        EarlyStopper s(c);
        int e = 0;
        while (!s.update(u(rng))) ++e;
        ++e;
        CHECK(e <= c.max_epochs);
        CHECK(e >= std::min(c.patience + 1, c.max_epochs));
    }
    CHECK_THROWS_AS(EarlyStopper(EarlyStopConfig{0, 1e-4, 30}), InvalidConfig);
}

TEST_CASE("f1 macro") {
    CHECK(f1_macro({0, 0, 1, 1}, {0, 1, 1, 1}, 2) == doctest::Approx((2.0 / 3 + 4.0 / 5) / 2).epsilon(1e-15));
    CHECK(f1_macro({0, 1, 2, 1}, {0, 1, 2, 1}, 3) == 1.0);
    CHECK(f1_macro({0, 0, 1, 1}, {1, 1, 1, 1}, 2) == doctest::Approx(1.0 / 3).epsilon(1e-15));
    CHECK_THROWS_AS(f1_macro({0, 1}, {0}, 2), LengthMismatch);
    CHECK_THROWS_AS(f1_macro({0, 3}, {0, 1}, 2), UnknownClass);

    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        const int c = 2 + trial % 6, n = 1 + static_cast<int>(rng() % 50);
        std::vector<int> t(static_cast<std::size_t>(n)), p(t.size());
        for (int i = 0; i < n; ++i) {
            t[static_cast<std::size_t>(i)] = static_cast<int>(rng() % c);
            p[static_cast<std::size_t>(i)] = static_cast<int>(rng() % c);
        }
        const double f = f1_macro(t, p, c);
        CHECK(std::abs(f - brute_f1(t, p, c)) < 1e-12);
        CHECK((f >= 0.0 && f <= 1.0));
        std::vector<int> relabel(static_cast<std::size_t>(c));
        std::iota(relabel.begin(), relabel.end(), 0);
        std::shuffle(relabel.begin(), relabel.end(), rng);
        auto t2 = t, p2 = p;
        for (auto& v : t2) v = relabel[static_cast<std::size_t>(v)];
        for (auto& v : p2) v = relabel[static_cast<std::size_t>(v)];
        CHECK(std::abs(f1_macro(t2, p2, c) - f) < 1e-12);
    }
}

TEST_CASE("argmax ties and confidence interval") {
    model::Matrix<double> z(3, 2);
    z << 2.0, 1.0, 1.0, 1.0, 0.0, 3.0;
    CHECK(argmax_rows(z) == std::vector<int>{0, 0, 1});

    auto [mean, ci] = mean_ci95({0.8, 0.82, 0.78, 0.81, 0.79});
    CHECK(mean == doctest::Approx(0.8));
    CHECK(ci == doctest::Approx(1.96 * std::sqrt(0.001 / 4) / std::sqrt(5.0)));
}

TEST_CASE("labeled TSV loading") {
    auto dir = std::filesystem::temp_directory_path() / "ct_test_classify";
    std::filesystem::create_directories(dir);
    io::write_file_atomic(dir / "d.tsv", "text\tlabel\nflood here\tflood\nfire there\tfire\nwater\tflood\n");
    auto d = load_labeled_tsv(dir / "d.tsv");
    CHECK(d.class_names == std::vector<std::string>{"fire", "flood"});
    CHECK(d.labels == std::vector<int>{1, 0, 1});
    CHECK(d.texts[1] == "fire there");
    io::write_file_atomic(dir / "bad.tsv", "text\tlabel\nno tab here\n");
    CHECK_THROWS_AS(load_labeled_tsv(dir / "bad.tsv"), ParseError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("fine-tuning defaults and config") {
    FinetuneConfig c;
    CHECK(c.batch_size == 32);
    CHECK(c.lr == 1e-5);
    CHECK(c.early_stop.max_epochs == 30);
    CHECK(c.early_stop.patience == 5);
    CHECK(c.early_stop.threshold == 1e-4);
    CHECK(FinetuneConfig::from_json(c.to_json()).to_json() == c.to_json());
    CHECK_THROWS_AS(FinetuneConfig::from_json(nlohmann::json{{"patience", 0}}), InvalidConfig);
}

TEST_CASE("fine-tuning separates a toy task and round-trips") {
    std::vector<std::string> corpus{"fire burning smoke flames", "water flood river rain"};
    auto tok = std::make_shared<const bpe::Tokenizer>(bpe::Tokenizer::train(corpus, 300));
    model::EncoderConfig cfg;
    cfg.hidden_size = 16;
    cfg.num_hidden_layers = 1;
    cfg.num_attention_heads = 2;
    cfg.intermediate_size = 32;
    cfg.max_position_embeddings = 16;
    cfg.vocab_size = 300;
    auto base = contrastive::from_checkpoint({model::init_params(cfg, 1), cfg, {}}, tok);

    LabeledDataset d;
    d.class_names = {"fire", "flood"};
    const std::vector<std::string> fire{"fire", "smoke", "flames", "burning"}, water{"water", "flood", "river", "rain"};
    std::mt19937_64 rng(2);
    for (int i = 0; i < 60; ++i) {
        const int y = i % 2;
        const auto& words = y ? water : fire;
        std::string t;
        for (int w = 0; w < 3; ++w) t += (w ? " " : "") + words[rng() % 4];
        d.texts.push_back(t);
        d.labels.push_back(y);
    }
    auto split = stratified_split(d);
    FinetuneConfig fc;
    fc.lr = 3e-3;
    fc.batch_size = 8;
    fc.early_stop.max_epochs = 8;
    auto r = finetune(base, d, split, fc);
    CHECK(r.val_f1.size() <= 8);
    auto test = d.subset(split.test);
    CHECK(f1_macro(test.labels, predict(r.classifier, test.texts), 2) > 0.95);

    auto again = finetune(base, d, split, fc);
    CHECK(again.classifier.encoder.params.identical(r.classifier.encoder.params));

    auto path = std::filesystem::temp_directory_path() / "ct_test_classifier.ctxf";
    save_classifier(path, r.classifier);
    auto loaded = load_classifier(path, tok);
    CHECK(loaded.class_names == r.classifier.class_names);
    CHECK(predict(loaded, test.texts) == predict(r.classifier, test.texts));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(predict(loaded, {}), EmptyInput);

    auto runs = finetune_seeds(base, d, split, fc, {1, 2}, "toy");
    CHECK(runs.f1_per_seed.size() == 2);
    auto j = runs.to_json();
    for (const char* k : {"dataset", "seeds", "f1_per_seed", "mean", "ci95"}) CHECK(j.contains(k));
}

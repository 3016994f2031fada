#include "ct/cli/cli.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ct/bpe/tokenizer.hpp"
#include "ct/classify/classifier.hpp"
#include "ct/common/errors.hpp"
#include "ct/common/io.hpp"
#include "ct/contrastive/sentence_encoder.hpp"
#include "ct/eval/davg.hpp"
#include "ct/eval/timing.hpp"
#include "ct/model/checkpoint.hpp"
#include "ct/textprep/corpus_stats.hpp"
#include "ct/textprep/normalize.hpp"
#include "ct/train/pretrain.hpp"

namespace ct::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void save_blocks(const fs::path& path, const std::vector<bpe::TokenBlock>& blocks) {
    std::string text;
    for (const auto& b : blocks) {
        for (std::size_t i = 0; i < b.ids.size(); ++i) {
            if (i) text += ' ';
            text += std::to_string(b.ids[i]);
        }
        text += '\n';
    }
    io::write_file_atomic(path, text);
}

std::vector<bpe::TokenBlock> load_blocks(const fs::path& path) {
    std::vector<bpe::TokenBlock> out;
    std::size_t line_no = 0;
    for (const auto& line : io::read_lines(path)) {
        ++line_no;
        if (line.empty()) continue;
        bpe::TokenBlock b;
        for (const auto& field : io::split(line, ' ')) {
            bpe::TokenId id = 0;
            auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), id);
            if (ec != std::errc() || p != field.data() + field.size() || id < 0)
                throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad token id '" + field + "'");
            b.ids.push_back(id);
            b.attention_mask.push_back(id == bpe::Special::pad ? 0 : 1);
        }
        if (!out.empty() && b.ids.size() != out.front().ids.size())
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": block length differs");
        out.push_back(std::move(b));
    }
    if (out.empty()) throw EmptyInput("no blocks in " + path.string());
    return out;
}

namespace {

void emit(std::ostream& out, const json& j) { out << j.dump(2) << '\n'; }

json read_json_file(const std::string& path) {
    if (path.empty()) return json::object();
    try {
        return json::parse(io::read_file(path));
    } catch (const json::exception& e) {
        throw InvalidConfig(path + ": " + e.what());
    }
}

std::vector<std::string> read_texts(const fs::path& path) {
    std::vector<std::string> out;
    for (const auto& line : io::read_lines(path)) out.push_back(io::unescape_line(line));
    return out;
}

std::shared_ptr<const bpe::Tokenizer> load_tokenizer(const std::string& dir) {
    return std::make_shared<bpe::Tokenizer>(bpe::Tokenizer::load(dir));
}

contrastive::SentenceEncoder load_encoder(const std::string& checkpoint, const std::string& tokenizer,
                                          const std::string& pooling) {
    auto enc = contrastive::from_checkpoint(model::load_checkpoint(checkpoint), load_tokenizer(tokenizer));
    if (!pooling.empty()) enc.pooling = pooling::parse_strategy(pooling);
    return enc;
}

model::Matrix<double> load_embeddings(const fs::path& path) {
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 0;
    for (const auto& line : io::read_lines(path)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> row;
        for (const auto& field : io::split(line, '\t')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(field, &used));
                if (used != field.size()) throw std::invalid_argument(field);
            } catch (const std::exception&) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + field + "'");
            }
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": row width differs");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw EmptyInput("no embeddings in " + path.string());
    model::Matrix<double> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return m;
}

std::string embeddings_tsv(const model::Matrix<double>& e) {
    std::ostringstream os;
    os.precision(17);
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
        for (Eigen::Index j = 0; j < e.cols(); ++j) os << (j ? "\t" : "") << e(i, j);
        os << '\n';
    }
    return os.str();
}

// Integer labels 0..K-1 are used as given; any other label set maps to ids
// in sorted name order.
std::pair<std::vector<int>, int> read_labels(const fs::path& path) {
    std::vector<std::string> names;
    for (const auto& line : io::read_lines(path))
        if (!line.empty()) names.push_back(line);
    if (names.empty()) throw EmptyInput("no labels in " + path.string());
    bool numeric = true;
    std::vector<int> ids;
    for (const auto& n : names) {
        int v = 0;
        auto [p, ec] = std::from_chars(n.data(), n.data() + n.size(), v);
        if (ec != std::errc() || p != n.data() + n.size() || v < 0) {
            numeric = false;
            break;
        }
        ids.push_back(v);
    }
    if (numeric) return {ids, *std::max_element(ids.begin(), ids.end()) + 1};
    std::vector<std::string> sorted = names;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    ids.clear();
    for (const auto& n : names)
        ids.push_back(static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), n) - sorted.begin()));
    return {ids, static_cast<int>(sorted.size())};
}

const std::vector<std::string> kPoolingNames = {"mean", "cls", "max", "mean-noattn"};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Crisis-domain encoder toolkit: preprocessing, tokenization, pre-training, sentence encoders, "
                 "classification and evaluation.",
                 "ct"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    std::string in, out_path, tokenizer, checkpoint, config, model_config, data, pooling, objective;
    std::string train_blocks, val_blocks, embeddings, labels, write_embeddings, texts, vocab_a, vocab_b;
    std::size_t min_tokens = 10, vocab_size = bpe::kDefaultVocabSize, block_len = 128;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::vector<std::uint64_t> seeds;
    int repetitions = 5;
    bool include_self = false;

    auto* preprocess = app.add_subcommand("preprocess", "Normalize raw tweets (one per line) and drop short ones");
    preprocess->add_option("--in", in, "Raw corpus")->required()->check(CLI::ExistingFile);
    preprocess->add_option("--out", out_path, "Clean corpus")->required();
    preprocess->add_option("--min-tokens", min_tokens, "Keep tweets with more than this many tokens");

    auto* stats = app.add_subcommand("stats", "Token, sentence and vocabulary counts of a clean corpus");
    stats->add_option("--in", in, "Clean corpus")->required()->check(CLI::ExistingFile);

    auto* train_tok = app.add_subcommand("train-tokenizer", "Train a byte-level BPE tokenizer");
    train_tok->add_option("--in", in, "Clean corpus")->required()->check(CLI::ExistingFile);
    train_tok->add_option("--vocab-size", vocab_size, "Vocabulary size including special tokens");
    train_tok->add_option("--out", out_path, "Tokenizer directory")->required();

    auto* pack = app.add_subcommand("pack", "Tokenize a clean corpus and pack it into fixed-length blocks");
    pack->add_option("--in", in, "Clean corpus")->required()->check(CLI::ExistingFile);
    pack->add_option("--tokenizer", tokenizer, "Tokenizer directory")->required();
    pack->add_option("--block-len", block_len, "Tokens per block");
    pack->add_option("--out", out_path, "Block file")->required();

    auto* pretrain = app.add_subcommand("pretrain", "Masked-language-model pre-training");
    pretrain->add_option("--train", train_blocks, "Training block file")->required()->check(CLI::ExistingFile);
    pretrain->add_option("--val", val_blocks, "Validation block file")->required()->check(CLI::ExistingFile);
    pretrain->add_option("--tokenizer", tokenizer, "Tokenizer directory (sets the vocabulary size)")->required();
    pretrain->add_option("--config", config, "Training config JSON");
    pretrain->add_option("--model-config", model_config, "Encoder config JSON");
    pretrain->add_option("--out", out_path, "Checkpoint directory")->required();
    pretrain->add_option("--seed", seed, "Overrides the config seed");
    pretrain->add_option("--epochs", epochs, "Overrides the config epochs");

    auto* train_enc = app.add_subcommand("train-encoder", "Contrastive sentence-encoder training");
    train_enc->add_option("--checkpoint", checkpoint, "Pre-trained checkpoint")->required()->check(CLI::ExistingFile);
    train_enc->add_option("--tokenizer", tokenizer, "Tokenizer directory")->required();
    train_enc->add_option("--data", data, "Pairs or triplets TSV")->required()->check(CLI::ExistingFile);
    train_enc->add_option("--config", config, "Contrastive config JSON");
    train_enc->add_option("--objective", objective, "Overrides the config objective")
        ->check(CLI::IsMember({"mnr", "mnr-hard"}));
    train_enc->add_option("--out", out_path, "Sentence-encoder checkpoint")->required();
    train_enc->add_option("--seed", seed, "Overrides the config seed");
    train_enc->add_option("--epochs", epochs, "Overrides the config epochs");

    auto* finetune = app.add_subcommand("finetune", "Classification fine-tuning with early stopping");
    finetune->add_option("--checkpoint", checkpoint, "Pre-trained checkpoint")->required()->check(CLI::ExistingFile);
    finetune->add_option("--tokenizer", tokenizer, "Tokenizer directory")->required();
    finetune->add_option("--data", data, "Labeled TSV with a header row")->required()->check(CLI::ExistingFile);
    finetune->add_option("--config", config, "Fine-tuning config JSON");
    finetune->add_option("--seed", seeds, "One or more run seeds")->delimiter(',');
    finetune->add_option("--out", out_path, "Classifier checkpoint from the first seed");

    auto* davg = app.add_subcommand("evaluate-davg", "Class-weighted intra-class similarity of sentence embeddings");
    davg->add_option("--embeddings", embeddings, "Embedding TSV, one row per sentence")->check(CLI::ExistingFile);
    davg->add_option("--labels", labels, "One label per line")->check(CLI::ExistingFile);
    davg->add_option("--checkpoint", checkpoint, "Sentence encoder to embed --data with")->check(CLI::ExistingFile);
    davg->add_option("--tokenizer", tokenizer, "Tokenizer directory");
    davg->add_option("--data", data, "Labeled TSV with a header row")->check(CLI::ExistingFile);
    davg->add_option("--pooling", pooling, "Overrides the encoder's pooling")->check(CLI::IsMember(kPoolingNames));
    davg->add_option("--write-embeddings", write_embeddings, "Also write the computed embeddings as TSV");
    davg->add_flag("--include-self", include_self, "Count self-pairs in the intra-class mean");

    auto* bench = app.add_subcommand("bench", "Per-text tokenization and embedding timings");
    bench->add_option("--checkpoint", checkpoint, "Sentence encoder")->required()->check(CLI::ExistingFile);
    bench->add_option("--tokenizer", tokenizer, "Tokenizer directory")->required();
    bench->add_option("--texts", texts, "One text per line")->required()->check(CLI::ExistingFile);
    bench->add_option("--repetitions", repetitions, "Timed passes over the texts")->check(CLI::PositiveNumber);
    bench->add_option("--pooling", pooling, "Overrides the encoder's pooling")->check(CLI::IsMember(kPoolingNames));

    auto* vocab_diff = app.add_subcommand("vocab-diff", "Shared and unique tokens of two tokenizers");
    vocab_diff->add_option("--a", vocab_a, "First tokenizer directory")->required();
    vocab_diff->add_option("--b", vocab_b, "Second tokenizer directory")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }
    if (davg->parsed()) {
        const bool from_files = !embeddings.empty() || !labels.empty();
        const bool from_model = !checkpoint.empty() || !tokenizer.empty() || !data.empty();
        if (from_files == from_model || (from_files && (embeddings.empty() || labels.empty())) ||
            (from_model && (checkpoint.empty() || tokenizer.empty() || data.empty()))) {
            err << "error: evaluate-davg takes either --embeddings and --labels, or --checkpoint, --tokenizer and "
                   "--data\n\n"
                << davg->help();
            return kExitUsage;
        }
    }

    try {
        if (preprocess->parsed()) {
            std::size_t read = 0, short_dropped = 0, unrepairable = 0;
            std::string text;
            for (const auto& line : io::read_lines(in)) {
                ++read;
                std::string clean;
                try {
                    clean = textprep::preprocess_tweet(io::unescape_line(line));
                } catch (const IrreparableEncoding&) {
                    ++unrepairable;
                    continue;
                }
                if (!textprep::passes_length_filter(clean, min_tokens)) {
                    ++short_dropped;
                    continue;
                }
                text += io::escape_line(clean);
                text += '\n';
            }
            io::write_file_atomic(out_path, text);
            emit(out, {{"read", read},
                       {"kept", read - short_dropped - unrepairable},
                       {"dropped_short", short_dropped},
                       {"dropped_unrepairable", unrepairable}});
        } else if (stats->parsed()) {
            emit(out, textprep::corpus_stats(read_texts(in)).to_json());
        } else if (train_tok->parsed()) {
            auto tok = bpe::Tokenizer::train(read_texts(in), vocab_size);
            tok.save(out_path);
            emit(out, {{"vocab_size", tok.vocab_size()}, {"merges", tok.merges().size()}});
        } else if (pack->parsed()) {
            const auto tok = bpe::Tokenizer::load(tokenizer);
            std::vector<std::vector<bpe::TokenId>> docs;
            for (const auto& t : read_texts(in)) docs.push_back(tok.encode(t));
            const auto packed = bpe::pack_documents(docs, block_len);
            save_blocks(out_path, packed.blocks);
            emit(out, {{"documents", docs.size()}, {"blocks", packed.blocks.size()}, {"dropped", packed.dropped}});
        } else if (pretrain->parsed()) {
            auto hyper = train::PretrainConfig::from_json(read_json_file(config));
            if (seed) hyper.seed = *seed;
            if (epochs) hyper.epochs = *epochs;
            hyper.checkpoint_dir = out_path;
            hyper.validate();
            auto cfg = model_config.empty() ? model::EncoderConfig{}
                                            : model::EncoderConfig::from_json(read_json_file(model_config));
            cfg.vocab_size = static_cast<int>(bpe::Tokenizer::load(tokenizer).vocab_size());
            const auto train_set = load_blocks(train_blocks);
            const auto val_set = load_blocks(val_blocks);
            const auto set = train::pretrain(train_set, val_set, cfg, hyper, std::nullopt, [&](const train::EpochLoss& e) {
                err << "epoch " << e.epoch << " val_loss " << e.val_loss << '\n';
            });
            json history = json::array();
            for (const auto& e : set.loss_history) history.push_back({{"epoch", e.epoch}, {"val_loss", e.val_loss}});
            emit(out, {{"initial_loss", set.initial_loss},
                       {"best_epoch", set.best_epoch},
                       {"best_val_loss", set.best_val_loss},
                       {"loss_history", history},
                       {"checkpoints", {"one_look.ctxf", "best_loss.ctxf", "complete.ctxf"}}});
        } else if (train_enc->parsed()) {
            auto cfg = contrastive::ContrastiveConfig::from_json(read_json_file(config));
            if (!objective.empty()) cfg.objective = contrastive::parse_objective(objective);
            if (seed) cfg.seed = *seed;
            if (epochs) cfg.epochs = *epochs;
            cfg.validate();
            const auto base = load_encoder(checkpoint, tokenizer, "");
            json losses = json::array();
            const auto trained = contrastive::train_encoder(
                base, contrastive::load_contrastive_tsv(data), cfg, [&](int epoch, double loss) {
                    err << "epoch " << epoch << " loss " << loss << '\n';
                    losses.push_back({{"epoch", epoch}, {"loss", loss}});
                });
            contrastive::save_sentence_encoder(out_path, trained, {{"objective", contrastive::to_string(cfg.objective)}});
            emit(out, {{"objective", contrastive::to_string(cfg.objective)}, {"epoch_loss", losses}});
        } else if (finetune->parsed()) {
            auto cfg = classify::FinetuneConfig::from_json(read_json_file(config));
            if (seeds.empty()) seeds.push_back(cfg.seed);
            const auto base = load_encoder(checkpoint, tokenizer, "");
            const auto d = classify::load_labeled_tsv(data);
            const auto split = classify::stratified_split(d);
            const auto test = d.subset(split.test);
            classify::SeedRuns runs;
            runs.dataset = fs::path(data).stem().string();
            for (std::size_t i = 0; i < seeds.size(); ++i) {
                cfg.seed = seeds[i];
                const auto r = classify::finetune(base, d, split, cfg, [&](int epoch, double loss, double f1) {
                    err << "seed " << seeds[i] << " epoch " << epoch << " loss " << loss << " val_f1 " << f1 << '\n';
                });
                runs.seeds.push_back(seeds[i]);
                runs.f1_per_seed.push_back(
                    classify::f1_macro(test.labels, classify::predict(r.classifier, test.texts), d.class_count()));
                if (i == 0 && !out_path.empty()) classify::save_classifier(out_path, r.classifier);
            }
            std::tie(runs.mean, runs.ci95) = classify::mean_ci95(runs.f1_per_seed);
            emit(out, runs.to_json());
        } else if (davg->parsed()) {
            model::Matrix<double> e;
            std::vector<int> y;
            int k = 0;
            if (!embeddings.empty()) {
                e = load_embeddings(embeddings);
                std::tie(y, k) = read_labels(labels);
                for (Eigen::Index i = 0; i < e.rows(); ++i) {
                    const double n = e.row(i).norm();
                    if (n == 0.0) throw ZeroVector("embedding row " + std::to_string(i) + " is zero");
                    e.row(i) /= n;
                }
            } else {
                const auto enc = load_encoder(checkpoint, tokenizer, pooling);
                const auto d = classify::load_labeled_tsv(data);
                e = contrastive::encode_sentences(enc, d.texts);
                y = d.labels;
                k = d.class_count();
            }
            if (!write_embeddings.empty()) io::write_file_atomic(write_embeddings, embeddings_tsv(e));
            eval::DavgOptions opts;
            opts.include_self = include_self;
            emit(out, eval::d_avg_report(e, y, k, opts).to_json());
        } else if (bench->parsed()) {
            const auto enc = load_encoder(checkpoint, tokenizer, pooling);
            emit(out, eval::timing_bench(enc, read_texts(texts), repetitions).to_json());
        } else if (vocab_diff->parsed()) {
            const auto a = bpe::Tokenizer::load(vocab_a), b = bpe::Tokenizer::load(vocab_b);
            const auto ab = bpe::vocab_intersection(a, b), ba = bpe::vocab_intersection(b, a);
            emit(out, {{"intersection", ab.intersection},
                       {"unique_in_a", ab.unique_in_a},
                       {"unique_in_b", ba.unique_in_a},
                       {"vocab_size_a", a.vocab_size()},
                       {"vocab_size_b", b.vocab_size()}});
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace ct::cli

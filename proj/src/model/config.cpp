#include "ct/model/config.hpp"

#include "ct/common/errors.hpp"

namespace ct::model {

void EncoderConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw InvalidConfig(std::string(name) + " must be positive");
    };
    positive(hidden_size, "hidden_size");
    positive(num_hidden_layers, "num_hidden_layers");
    positive(num_attention_heads, "num_attention_heads");
    positive(intermediate_size, "intermediate_size");
    positive(max_position_embeddings, "max_position_embeddings");
    positive(vocab_size, "vocab_size");
    if (hidden_size % num_attention_heads != 0)
        throw InvalidConfig("hidden_size must be divisible by num_attention_heads");
    auto fraction = [](double p, const char* name) {
        if (!(p >= 0.0 && p < 1.0)) throw InvalidConfig(std::string(name) + " must lie in [0, 1)");
    };
    fraction(hidden_dropout_prob, "hidden_dropout_prob");
    fraction(attention_probs_dropout_prob, "attention_probs_dropout_prob");
    if (!(layer_norm_eps > 0.0)) throw InvalidConfig("layer_norm_eps must be positive");
    if (hidden_act != "gelu") throw InvalidConfig("hidden_act must be gelu");
}

nlohmann::json EncoderConfig::to_json() const {
    return {{"hidden_size", hidden_size},
            {"num_hidden_layers", num_hidden_layers},
            {"num_attention_heads", num_attention_heads},
            {"intermediate_size", intermediate_size},
            {"max_position_embeddings", max_position_embeddings},
            {"vocab_size", vocab_size},
            {"hidden_dropout_prob", hidden_dropout_prob},
            {"attention_probs_dropout_prob", attention_probs_dropout_prob},
            {"layer_norm_eps", layer_norm_eps},
            {"hidden_act", hidden_act}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
    EncoderConfig c;
    try {
        c.hidden_size = j.value("hidden_size", c.hidden_size);
        c.num_hidden_layers = j.value("num_hidden_layers", c.num_hidden_layers);
        c.num_attention_heads = j.value("num_attention_heads", c.num_attention_heads);
        c.intermediate_size = j.value("intermediate_size", c.intermediate_size);
        c.max_position_embeddings = j.value("max_position_embeddings", c.max_position_embeddings);
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.hidden_dropout_prob = j.value("hidden_dropout_prob", c.hidden_dropout_prob);
        c.attention_probs_dropout_prob = j.value("attention_probs_dropout_prob", c.attention_probs_dropout_prob);
        c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
        c.hidden_act = j.value("hidden_act", c.hidden_act);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("encoder config: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace ct::model

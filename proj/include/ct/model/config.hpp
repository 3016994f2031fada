#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace ct::model {

// Field names follow the Hugging Face BERT/RoBERTa config schema.
struct EncoderConfig {
    int hidden_size = 64;
    int num_hidden_layers = 2;
    int num_attention_heads = 4;
    int intermediate_size = 256;
    int max_position_embeddings = 130;
    int vocab_size = 2005;
    double hidden_dropout_prob = 0.1;
    double attention_probs_dropout_prob = 0.1;
    double layer_norm_eps = 1e-5;
    std::string hidden_act = "gelu";

    int head_dim() const { return hidden_size / num_attention_heads; }

    // Throws InvalidConfig.
    void validate() const;

    nlohmann::json to_json() const;
    static EncoderConfig from_json(const nlohmann::json& j);

    bool operator==(const EncoderConfig&) const = default;
};

}  // namespace ct::model

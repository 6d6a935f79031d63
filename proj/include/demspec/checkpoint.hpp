#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "demspec/model.hpp"
#include "demspec/tokenizer.hpp"

namespace demspec {

// A model together with the tokenizer it was trained with. On disk: a
// directory holding config.json (encoder config, head shapes, tokenizer,
// metadata) and params.bin (the ParamSet archive).
struct Checkpoint {
    Model model;
    Tokenizer tokenizer;
    nlohmann::json metadata = nlohmann::json::object();

    void save(const std::filesystem::path& dir) const;
    static Checkpoint load(const std::filesystem::path& dir);

    // Digest over the config, tokenizer and parameter values.
    std::string digest() const;
};

// Randomly initialised encoder sized to the tokenizer's vocabulary.
Checkpoint fresh_checkpoint(EncoderConfig config, Tokenizer tokenizer, std::uint64_t seed);

}  // namespace demspec

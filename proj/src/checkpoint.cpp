#include "demspec/checkpoint.hpp"

#include <fstream>

#include "demspec/digest.hpp"

namespace demspec {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json heads_json(const Model& m) {
    json heads = {{"mlm", m.config().vocab_size}, {"dem_seq", 1}, {"dem_tok", 1}};
    if (m.has_classifier()) heads["classifier"] = m.classifier_classes();
    return heads;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    json config = {{"format", "demspec-checkpoint"},
                   {"version", kFormatVersion},
                   {"encoder", to_json(model.config())},
                   {"heads", heads_json(model)},
                   {"tokenizer", tokenizer.to_json()},
                   {"metadata", metadata}};
    const auto tmp = dir / "params.bin.tmp";
    model.params().save(tmp);
    std::filesystem::rename(tmp, dir / "params.bin");
    std::ofstream out(dir / "config.json");
    if (!out) fail(ErrorCode::io_error, "cannot write " + (dir / "config.json").string());
    out << config.dump(2) << '\n';
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "config.json");
    if (!in) fail(ErrorCode::resource_missing, "no checkpoint at " + dir.string());
    json config;
    try {
        config = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::parse_error, "unreadable checkpoint config: " + std::string(e.what()));
    }
    if (config.value("format", "") != "demspec-checkpoint" || config.value("version", 0) != kFormatVersion)
        fail(ErrorCode::parse_error, dir.string() + " is not a supported checkpoint");
    Checkpoint ckpt;
    ckpt.tokenizer = Tokenizer::from_json(config.at("tokenizer"));
    ckpt.model = Model(encoder_config_from_json(config.at("encoder")), ParamSet::load(dir / "params.bin"));
    ckpt.metadata = config.value("metadata", json::object());
    if (ckpt.tokenizer.size() != ckpt.model.config().vocab_size)
        fail(ErrorCode::digest_mismatch, "tokenizer size does not match the encoder vocabulary");
    return ckpt;
}

std::string Checkpoint::digest() const {
    Digest d;
    d.update(to_json(model.config()).dump()).update(tokenizer.digest());
    for (const auto& t : model.params().tensors()) {
        d.update(t.name);
        for (Eigen::Index i = 0; i < t.value.size(); ++i) d.update(t.value.data()[i]);
    }
    return d.hex();
}

Checkpoint fresh_checkpoint(EncoderConfig config, Tokenizer tokenizer, std::uint64_t seed) {
    config.vocab_size = tokenizer.size();
    Checkpoint ckpt;
    ckpt.model = Model(config, seed);
    ckpt.tokenizer = std::move(tokenizer);
    ckpt.metadata = {{"origin", "fresh"}, {"seed", seed}};
    return ckpt;
}

}  // namespace demspec

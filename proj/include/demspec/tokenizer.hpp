#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "demspec/corpus.hpp"

namespace demspec {

using IdMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<std::string_view> split_words(std::string_view text);

// Whitespace word-level vocabulary with BERT-style special symbols.
class Tokenizer {
public:
    static constexpr int pad_id = 0;
    static constexpr int unk_id = 1;
    static constexpr int cls_id = 2;
    static constexpr int sep_id = 3;
    static constexpr int mask_id = 4;
    static constexpr int num_special = 5;

    Tokenizer();
    explicit Tokenizer(std::vector<std::string> tokens);

    // Vocabulary of the most frequent words (ties broken lexicographically),
    // capped so that the total size including specials is <= max_vocab.
    static Tokenizer build(std::span<const LabeledDocument> docs, std::size_t max_vocab,
                           std::size_t min_count = 1);

    int size() const { return static_cast<int>(tokens_.size()); }
    int id(std::string_view word) const;
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    static bool is_special(int id) { return id < num_special; }

    // [CLS] followed by word ids, truncated to max_len keeping leading tokens.
    std::vector<int> encode(std::string_view text, int max_len) const;

    const std::vector<std::string>& tokens() const { return tokens_; }
    std::string digest() const;
    nlohmann::json to_json() const;
    static Tokenizer from_json(const nlohmann::json& j);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// Pads encoded documents into a batch matrix (width = longest row).
IdMatrix make_id_matrix(const Tokenizer& tok, std::span<const LabeledDocument> docs, int max_len);

struct MaskedBatch {
    IdMatrix token_ids;
    MaskMatrix mask_positions;
    IdMatrix original_ids;
    std::vector<std::optional<DemClass>> sequence_labels;

    int rows() const { return static_cast<int>(token_ids.rows()); }
    int cols() const { return static_cast<int>(token_ids.cols()); }
    int masked_count() const;
    // Number of leading non-padding positions in a row.
    int length(int row) const;
};

struct MaskOptions {
    // 80/10/10 replacement (mask / random / keep) instead of always [MASK].
    bool bert_replacement = false;
    int vocab_size = 0;  // required when bert_replacement is set
};

// Selects each non-special position independently with probability `rate`.
// Pure in (token_ids, rate, seed); callers re-draw per epoch for dynamic masking.
MaskedBatch mask_tokens(const IdMatrix& token_ids, double rate, std::uint64_t seed,
                        const MaskOptions& options = {});

// Unmasked batch used for classification and embedding.
MaskedBatch plain_batch(const IdMatrix& token_ids);

}  // namespace demspec

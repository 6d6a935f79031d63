#include "demspec/tokenizer.hpp"

#include <algorithm>
#include <map>

#include "demspec/digest.hpp"
#include "demspec/rng.hpp"

namespace demspec {

std::vector<std::string_view> split_words(std::string_view text) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) words.push_back(text.substr(start, i - start));
    }
    return words;
}

Tokenizer::Tokenizer() : Tokenizer(std::vector<std::string>{}) {}

Tokenizer::Tokenizer(std::vector<std::string> tokens) {
    tokens_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    for (auto& t : tokens) {
        if (index_.count(t) || t == "[PAD]" || t == "[UNK]" || t == "[CLS]" || t == "[SEP]" ||
            t == "[MASK]")
            continue;
        tokens_.push_back(std::move(t));
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

Tokenizer Tokenizer::build(std::span<const LabeledDocument> docs, std::size_t max_vocab,
                           std::size_t min_count) {
    std::map<std::string, std::size_t, std::less<>> counts;
    for (const auto& d : docs)
        for (auto w : split_words(d.text)) {
            auto it = counts.find(w);
            if (it == counts.end()) counts.emplace(std::string(w), 1);
            else ++it->second;
        }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& x, const auto& y) { return x.second > y.second; });
    std::vector<std::string> words;
    const std::size_t cap = max_vocab > num_special ? max_vocab - num_special : 0;
    for (auto& [w, c] : ranked) {
        if (words.size() >= cap || c < min_count) break;
        words.push_back(w);
    }
    return Tokenizer(std::move(words));
}

int Tokenizer::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? unk_id : it->second;
}

std::vector<int> Tokenizer::encode(std::string_view text, int max_len) const {
    std::vector<int> ids{cls_id};
    for (auto w : split_words(text)) {
        if (static_cast<int>(ids.size()) >= max_len) break;
        ids.push_back(id(w));
    }
    return ids;
}

std::string Tokenizer::digest() const {
    Digest d;
    for (const auto& t : tokens_) d.update(t).update("\n");
    return d.hex();
}

nlohmann::json Tokenizer::to_json() const {
    return {{"tokens", std::vector<std::string>(tokens_.begin() + num_special, tokens_.end())},
            {"digest", digest()}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
    Tokenizer tok(j.at("tokens").get<std::vector<std::string>>());
    if (j.contains("digest") && j.at("digest").get<std::string>() != tok.digest())
        fail(ErrorCode::digest_mismatch, "tokenizer digest does not match its vocabulary");
    return tok;
}

IdMatrix make_id_matrix(const Tokenizer& tok, std::span<const LabeledDocument> docs, int max_len) {
    std::vector<std::vector<int>> rows;
    rows.reserve(docs.size());
    std::size_t width = 1;
    for (const auto& d : docs) {
        rows.push_back(tok.encode(d.text, max_len));
        width = std::max(width, rows.back().size());
    }
    IdMatrix ids = IdMatrix::Constant(static_cast<Eigen::Index>(rows.size()),
                                      static_cast<Eigen::Index>(width), Tokenizer::pad_id);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            ids(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return ids;
}

int MaskedBatch::masked_count() const { return static_cast<int>(mask_positions.count()); }

int MaskedBatch::length(int row) const {
    int n = cols();
    while (n > 0 && original_ids(row, n - 1) == Tokenizer::pad_id) --n;
    return n;
}

MaskedBatch mask_tokens(const IdMatrix& token_ids, double rate, std::uint64_t seed,
                        const MaskOptions& options) {
    if (!(rate >= 0.0 && rate <= 1.0))
        fail(ErrorCode::invalid_argument, "mask rate must lie in [0, 1]");
    if (options.bert_replacement && options.vocab_size <= Tokenizer::num_special)
        fail(ErrorCode::invalid_argument, "80/10/10 masking needs the vocabulary size");
    MaskedBatch batch;
    batch.original_ids = token_ids;
    batch.token_ids = token_ids;
    batch.mask_positions = MaskMatrix::Constant(token_ids.rows(), token_ids.cols(), false);
    batch.sequence_labels.assign(static_cast<std::size_t>(token_ids.rows()), std::nullopt);
    Rng rng(seed);
    for (Eigen::Index r = 0; r < token_ids.rows(); ++r)
        for (Eigen::Index c = 0; c < token_ids.cols(); ++c) {
            if (Tokenizer::is_special(token_ids(r, c))) continue;
            if (!rng.bernoulli(rate)) continue;
            batch.mask_positions(r, c) = true;
            int replacement = Tokenizer::mask_id;
            if (options.bert_replacement) {
                const double u = rng.uniform();
                if (u >= 0.9) replacement = token_ids(r, c);
                else if (u >= 0.8)
                    replacement = Tokenizer::num_special +
                                  static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                      options.vocab_size - Tokenizer::num_special)));
            }
            batch.token_ids(r, c) = replacement;
        }
    return batch;
}

MaskedBatch plain_batch(const IdMatrix& token_ids) {
    MaskedBatch batch;
    batch.original_ids = token_ids;
    batch.token_ids = token_ids;
    batch.mask_positions = MaskMatrix::Constant(token_ids.rows(), token_ids.cols(), false);
    batch.sequence_labels.assign(static_cast<std::size_t>(token_ids.rows()), std::nullopt);
    return batch;
}

}  // namespace demspec

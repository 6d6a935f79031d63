#include "demspec/training.hpp"

#include <numeric>

#include "demspec/error.hpp"
#include "demspec/rng.hpp"

namespace demspec {

EarlyStopping::EarlyStopping(int patience, Goal goal)
    : patience_(patience),
      goal_(goal),
      best_(goal == Goal::minimize ? std::numeric_limits<double>::infinity()
                                   : -std::numeric_limits<double>::infinity()) {
    if (patience < 1) fail(ErrorCode::invalid_argument, "patience must be >= 1");
}

bool EarlyStopping::update(double value) {
    ++epochs_;
    improved_ = goal_ == Goal::minimize ? value < best_ : value > best_;
    if (improved_) {
        best_ = value;
        best_epoch_ = epochs_;
        stale_ = 0;
    } else {
        ++stale_;
    }
    return stale_ >= patience_;
}

EncodedCorpus encode_corpus(const Tokenizer& tok, std::span<const LabeledDocument> docs, int max_len,
                            std::optional<Dimension> dim) {
    EncodedCorpus out;
    out.ids.reserve(docs.size());
    for (const auto& d : docs) {
        out.ids.push_back(tok.encode(d.text, max_len));
        out.demographics.push_back(dim ? d.demographic(*dim) : std::nullopt);
    }
    return out;
}

IdMatrix batch_ids(const EncodedCorpus& corpus, std::span<const std::size_t> rows) {
    std::size_t width = 1;
    for (auto r : rows) width = std::max(width, corpus.ids[r].size());
    IdMatrix ids = IdMatrix::Constant(static_cast<Eigen::Index>(rows.size()),
                                      static_cast<Eigen::Index>(width), Tokenizer::pad_id);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = corpus.ids[rows[i]];
        for (std::size_t c = 0; c < row.size(); ++c)
            ids(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
    }
    return ids;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::uint64_t shuffle_seed, bool shuffle) {
    if (batch_size == 0) fail(ErrorCode::invalid_argument, "batch_size must be positive");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        Rng rng(shuffle_seed);
        rng.shuffle(std::span(order));
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size)
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
    return batches;
}

}  // namespace demspec

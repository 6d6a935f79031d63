#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "demspec/corpus.hpp"
#include "demspec/tokenizer.hpp"
#include "demspec/types.hpp"

namespace demspec {

// Patience-based early stopping. `better` decides whether a new value
// improves on the best so far (strictly).
class EarlyStopping {
public:
    enum class Goal { minimize, maximize };

    EarlyStopping(int patience, Goal goal);

    // Records one epoch's monitored value; returns true when training should stop.
    bool update(double value);
    bool improved() const { return improved_; }
    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }
    int epochs_seen() const { return epochs_; }

private:
    int patience_;
    Goal goal_;
    double best_;
    int best_epoch_ = 0;
    int epochs_ = 0;
    int stale_ = 0;
    bool improved_ = false;
};

// Pre-tokenised documents for repeated batching.
struct EncodedCorpus {
    std::vector<std::vector<int>> ids;
    std::vector<std::optional<DemClass>> demographics;
    std::vector<int> labels;  // task labels; empty when unused

    std::size_t size() const { return ids.size(); }
};

EncodedCorpus encode_corpus(const Tokenizer& tok, std::span<const LabeledDocument> docs, int max_len,
                            std::optional<Dimension> dim);

// Padded id matrix over the selected documents.
IdMatrix batch_ids(const EncodedCorpus& corpus, std::span<const std::size_t> rows);

// Consecutive batches over a permutation of [0, n).
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::uint64_t shuffle_seed, bool shuffle);

}  // namespace demspec

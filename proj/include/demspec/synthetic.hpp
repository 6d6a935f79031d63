#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "demspec/corpus.hpp"

namespace demspec {

// Generative parameters for a corpus with a controlled demographic signal.
//
// Token id layout within the synthetic vocabulary:
//   [group-A markers | group-B markers | sentiment lexicons | topic lexicons | base]
// Each token position first emits one of its group's markers with probability
// marker_rate_{a,b}; otherwise a sentiment word of the document's class with
// probability sentiment_signal; otherwise a topic word with probability
// topic_signal; otherwise a Zipf-distributed base word.
struct SyntheticSpec {
    int vocab_size = 1000;
    int doc_length_min = 24;
    int doc_length_max = 24;
    double marker_rate_a = 0.0;
    double marker_rate_b = 0.0;
    int n_marker_tokens = 8;
    int topic_count = 5;
    double sentiment_signal = 0.15;
    int n_sentiment_tokens = 40;  // per sentiment class
    double topic_signal = 0.15;
    int n_topic_tokens = 40;  // per topic
    double zipf_exponent = 1.0;
    int n_docs_per_group = 500;
    std::uint64_t seed = 0;

    Dimension dimension = Dimension::gender;
    std::string country = "XA";
    std::string language = "xa";
    std::string domain_tag = "reviews";
    // Prefix for base and marker words (a pseudo-language).
    std::string token_prefix = "w";
    // Prefix for sentiment/topic lexicon words (a pseudo-domain); empty means
    // token_prefix.
    std::string lexicon_prefix;
    std::string id_prefix = "doc";

    int base_vocab_size() const;
    void validate() const;
};

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

std::vector<LabeledDocument> generate_corpus(const SyntheticSpec& spec);

std::string marker_token(const SyntheticSpec& spec, DemClass group, int index);
std::string sentiment_token(const SyntheticSpec& spec, int sentiment_class, int index);
std::string topic_token(const SyntheticSpec& spec, int topic, int index);
bool is_marker_token(const SyntheticSpec& spec, std::string_view word);

// Accuracy of the Bayes-optimal demographic classifier that observes the
// document's marker counts, by exact enumeration over the count
// distributions, averaged over the document-length range.
double bayes_optimal_ac(const SyntheticSpec& spec);

// One-sided marker rate q_A giving Bayes accuracy `accuracy` at length L:
// solves (1 + 1 - (1 - q)^L) / 2 = accuracy.
double marker_rate_for_accuracy(double accuracy, int length);

}  // namespace demspec

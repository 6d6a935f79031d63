#include "demspec/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "demspec/rng.hpp"

namespace demspec {

using nlohmann::json;

int SyntheticSpec::base_vocab_size() const {
    return vocab_size - 2 * n_marker_tokens - 3 * n_sentiment_tokens - topic_count * n_topic_tokens;
}

void SyntheticSpec::validate() const {
    auto check = [](bool ok, const std::string& what) {
        if (!ok) fail(ErrorCode::invalid_argument, "synthetic spec: " + what);
    };
    check(marker_rate_a >= 0 && marker_rate_a <= 1, "marker_rate_a must lie in [0, 1]");
    check(marker_rate_b >= 0 && marker_rate_b <= 1, "marker_rate_b must lie in [0, 1]");
    check(sentiment_signal >= 0 && sentiment_signal <= 1, "sentiment_signal must lie in [0, 1]");
    check(topic_signal >= 0 && topic_signal <= 1, "topic_signal must lie in [0, 1]");
    check(n_marker_tokens >= 1 && n_sentiment_tokens >= 1 && n_topic_tokens >= 1,
          "lexicon sizes must be positive");
    check(topic_count >= 1, "topic_count must be positive");
    check(doc_length_min >= 1 && doc_length_max >= doc_length_min, "invalid document length range");
    check(n_docs_per_group >= 0, "n_docs_per_group must be non-negative");
    check(base_vocab_size() >= 1, "vocab_size too small for the marker and lexicon vocabularies");
    check(!token_prefix.empty(), "token_prefix must be non-empty");
}

json to_json(const SyntheticSpec& s) {
    return json{{"vocab_size", s.vocab_size},
                {"doc_length_min", s.doc_length_min},
                {"doc_length_max", s.doc_length_max},
                {"marker_rate_a", s.marker_rate_a},
                {"marker_rate_b", s.marker_rate_b},
                {"n_marker_tokens", s.n_marker_tokens},
                {"topic_count", s.topic_count},
                {"sentiment_signal", s.sentiment_signal},
                {"n_sentiment_tokens", s.n_sentiment_tokens},
                {"topic_signal", s.topic_signal},
                {"n_topic_tokens", s.n_topic_tokens},
                {"zipf_exponent", s.zipf_exponent},
                {"n_docs_per_group", s.n_docs_per_group},
                {"seed", s.seed},
                {"dimension", to_string(s.dimension)},
                {"country", s.country},
                {"language", s.language},
                {"domain_tag", s.domain_tag},
                {"token_prefix", s.token_prefix},
                {"lexicon_prefix", s.lexicon_prefix},
                {"id_prefix", s.id_prefix}};
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
    SyntheticSpec s;
    try {
        s.vocab_size = j.value("vocab_size", s.vocab_size);
        if (j.contains("doc_length")) {
            s.doc_length_min = s.doc_length_max = j.at("doc_length").get<int>();
        }
        s.doc_length_min = j.value("doc_length_min", s.doc_length_min);
        s.doc_length_max = j.value("doc_length_max", s.doc_length_max);
        s.marker_rate_a = j.value("marker_rate_a", s.marker_rate_a);
        s.marker_rate_b = j.value("marker_rate_b", s.marker_rate_b);
        s.n_marker_tokens = j.value("n_marker_tokens", s.n_marker_tokens);
        s.topic_count = j.value("topic_count", s.topic_count);
        s.sentiment_signal = j.value("sentiment_signal", s.sentiment_signal);
        s.n_sentiment_tokens = j.value("n_sentiment_tokens", s.n_sentiment_tokens);
        s.topic_signal = j.value("topic_signal", s.topic_signal);
        s.n_topic_tokens = j.value("n_topic_tokens", s.n_topic_tokens);
        s.zipf_exponent = j.value("zipf_exponent", s.zipf_exponent);
        s.n_docs_per_group = j.value("n_docs_per_group", s.n_docs_per_group);
        s.seed = j.value("seed", s.seed);
        if (j.contains("dimension")) s.dimension = parse_enum<Dimension>(j.at("dimension").get<std::string>());
        s.country = j.value("country", s.country);
        s.language = j.value("language", s.language);
        s.domain_tag = j.value("domain_tag", s.domain_tag);
        s.token_prefix = j.value("token_prefix", s.token_prefix);
        s.lexicon_prefix = j.value("lexicon_prefix", s.lexicon_prefix);
        s.id_prefix = j.value("id_prefix", s.id_prefix);
    } catch (const json::exception& e) {
        fail(ErrorCode::parse_error, std::string("malformed synthetic spec: ") + e.what());
    }
    s.validate();
    return s;
}

namespace {

const std::string& lexicon_prefix(const SyntheticSpec& s) {
    return s.lexicon_prefix.empty() ? s.token_prefix : s.lexicon_prefix;
}

// Inverse-CDF sampler over a fixed Zipf distribution.
class ZipfSampler {
public:
    ZipfSampler(int n, double exponent) : cdf_(static_cast<std::size_t>(n)) {
        double total = 0.0;
        for (int k = 0; k < n; ++k) {
            total += 1.0 / std::pow(static_cast<double>(k + 1), exponent);
            cdf_[static_cast<std::size_t>(k)] = total;
        }
        for (auto& c : cdf_) c /= total;
    }

    int sample(Rng& rng) const {
        const double u = rng.uniform();
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        return static_cast<int>(std::min<std::ptrdiff_t>(it - cdf_.begin(),
                                                         static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
    }

private:
    std::vector<double> cdf_;
};

}  // namespace

std::string marker_token(const SyntheticSpec& s, DemClass group, int index) {
    return s.token_prefix + (group == DemClass::a ? "ga" : "gb") + std::to_string(index);
}

std::string sentiment_token(const SyntheticSpec& s, int sentiment_class, int index) {
    return lexicon_prefix(s) + "s" + std::to_string(sentiment_class) + "_" + std::to_string(index);
}

std::string topic_token(const SyntheticSpec& s, int topic, int index) {
    return lexicon_prefix(s) + "t" + std::to_string(topic) + "_" + std::to_string(index);
}

bool is_marker_token(const SyntheticSpec& s, std::string_view word) {
    const std::string& p = s.token_prefix;
    if (word.size() <= p.size() + 2 || word.substr(0, p.size()) != p) return false;
    auto rest = word.substr(p.size());
    if (rest[0] != 'g' || (rest[1] != 'a' && rest[1] != 'b')) return false;
    return std::all_of(rest.begin() + 2, rest.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::vector<LabeledDocument> generate_corpus(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    ZipfSampler zipf(spec.base_vocab_size(), spec.zipf_exponent);
    static constexpr int kRatings[3] = {1, 3, 5};

    std::vector<LabeledDocument> docs;
    docs.reserve(2 * static_cast<std::size_t>(spec.n_docs_per_group));
    int serial = 0;
    for (int i = 0; i < spec.n_docs_per_group; ++i) {
        for (DemClass group : {DemClass::a, DemClass::b}) {
            const double marker_rate = group == DemClass::a ? spec.marker_rate_a : spec.marker_rate_b;
            const int sentiment = static_cast<int>(rng.below(3));
            const int topic = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.topic_count)));
            const int length = spec.doc_length_min +
                               static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                   spec.doc_length_max - spec.doc_length_min + 1)));
            std::string text;
            for (int t = 0; t < length; ++t) {
                std::string word;
                if (rng.bernoulli(marker_rate)) {
                    word = marker_token(spec, group, static_cast<int>(rng.below(
                                                         static_cast<std::uint64_t>(spec.n_marker_tokens))));
                } else if (rng.bernoulli(spec.sentiment_signal)) {
                    word = sentiment_token(spec, sentiment,
                                           static_cast<int>(rng.below(
                                               static_cast<std::uint64_t>(spec.n_sentiment_tokens))));
                } else if (rng.bernoulli(spec.topic_signal)) {
                    word = topic_token(spec, topic,
                                       static_cast<int>(rng.below(
                                           static_cast<std::uint64_t>(spec.n_topic_tokens))));
                } else {
                    word = spec.token_prefix + std::to_string(zipf.sample(rng));
                }
                if (!text.empty()) text += ' ';
                text += word;
            }

            LabeledDocument doc;
            doc.id = spec.id_prefix + "-" + std::to_string(serial++);
            doc.text = std::move(text);
            doc.country = spec.country;
            doc.language = spec.language;
            doc.domain_tag = spec.domain_tag;
            doc.rating = kRatings[sentiment];
            doc.topic = "topic" + std::to_string(topic);
            if (spec.dimension == Dimension::gender)
                doc.gender = group == DemClass::a ? Gender::f : Gender::m;
            else
                doc.age_group = group == DemClass::a ? AgeGroup::u35 : AgeGroup::o45;
            docs.push_back(std::move(doc));
        }
    }
    return docs;
}

namespace {

std::vector<double> binomial_pmf(int n, double p) {
    std::vector<double> pmf(static_cast<std::size_t>(n) + 1, 0.0);
    if (p <= 0.0) {
        pmf[0] = 1.0;
        return pmf;
    }
    if (p >= 1.0) {
        pmf[static_cast<std::size_t>(n)] = 1.0;
        return pmf;
    }
    for (int k = 0; k <= n; ++k) {
        const double log_p = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
                             k * std::log(p) + (n - k) * std::log1p(-p);
        pmf[static_cast<std::size_t>(k)] = std::exp(log_p);
    }
    return pmf;
}

}  // namespace

double bayes_optimal_ac(const SyntheticSpec& spec) {
    spec.validate();
    double total = 0.0;
    const int lengths = spec.doc_length_max - spec.doc_length_min + 1;
    for (int len = spec.doc_length_min; len <= spec.doc_length_max; ++len) {
        // A document of group A carries a ~ Bin(L, qA) A-markers and no
        // B-markers; symmetrically for group B. The observation is (a, b).
        const auto pa = binomial_pmf(len, spec.marker_rate_a);
        const auto pb = binomial_pmf(len, spec.marker_rate_b);
        double correct = 0.0;
        for (int a = 0; a <= len; ++a)
            for (int b = 0; a + b <= len; ++b) {
                const double like_a = b == 0 ? pa[static_cast<std::size_t>(a)] : 0.0;
                const double like_b = a == 0 ? pb[static_cast<std::size_t>(b)] : 0.0;
                correct += 0.5 * std::max(like_a, like_b);
            }
        total += correct;
    }
    return std::clamp(total / lengths, 0.5, 1.0);
}

double marker_rate_for_accuracy(double accuracy, int length) {
    if (!(accuracy >= 0.5 && accuracy <= 1.0) || length < 1)
        fail(ErrorCode::invalid_argument, "accuracy must lie in [0.5, 1] and length >= 1");
    const double m = 2.0 * accuracy - 1.0;
    return 1.0 - std::pow(1.0 - m, 1.0 / length);
}

}  // namespace demspec

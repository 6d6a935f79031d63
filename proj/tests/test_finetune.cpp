#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "demspec/error.hpp"
#include "demspec/finetune.hpp"
#include "demspec/synthetic.hpp"

using namespace demspec;

namespace {

// Brute-force macro-F1: precision and recall per class from explicit counts,
// over every label that appears in either list.
double oracle_macro_f1(const std::vector<int>& truth, const std::vector<int>& pred) {
    std::vector<int> labels = truth;
    labels.insert(labels.end(), pred.begin(), pred.end());
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    double total = 0;
    for (int c : labels) {
        double tp = 0, predicted = 0, actual = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            tp += truth[i] == c && pred[i] == c;
            predicted += pred[i] == c;
            actual += truth[i] == c;
        }
        const double p = predicted ? tp / predicted : 0, r = actual ? tp / actual : 0;
        total += p + r > 0 ? 2 * p * r / (p + r) : 0;
    }
    return total / static_cast<double>(labels.size());
}

std::vector<LabeledDocument> corpus(std::uint64_t seed, int per_group, double qa = 0.0) {
    SyntheticSpec spec;
    spec.vocab_size = 120;
    spec.n_sentiment_tokens = 10;
    spec.n_topic_tokens = 10;
    spec.doc_length_min = spec.doc_length_max = 16;
    spec.n_docs_per_group = per_group;
    spec.marker_rate_a = qa;
    spec.seed = seed;
    return generate_corpus(spec);
}

Checkpoint tiny_base(const std::vector<LabeledDocument>& docs) {
    EncoderConfig cfg;
    cfg.hidden_dim = 16;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.feedforward_dim = 32;
    cfg.max_seq_len = 32;
    return fresh_checkpoint(cfg, Tokenizer::build(docs, 1000, 1), 3);
}

}  // namespace

TEST_CASE("sa_label") {
    CHECK(sa_label(1) == Sentiment::negative);
    CHECK(sa_label(3) == Sentiment::neutral);
    CHECK(sa_label(5) == Sentiment::positive);
    CHECK_THROWS_AS(sa_label(2), Error);
    CHECK_THROWS_AS(sa_label(0), Error);
}

TEST_CASE("macro_f1 examples and constant-classifier regression values") {
    const std::vector<int> y = {0, 1, 1, 0, 2};
    CHECK(macro_f1(y, y) == 1.0);
    for (int k : {2, 3, 5}) {
        std::vector<int> truth, constant;
        for (int i = 0; i < 20 * k; ++i) {
            truth.push_back(i % k);
            constant.push_back(0);
        }
        const double expected = oracle_macro_f1(truth, constant);
        CHECK(macro_f1(truth, constant) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(macro_f1(truth, constant) == doctest::Approx(2.0 / (k * (k + 1))).epsilon(1e-12));
    }
    CHECK(macro_f1(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 0, 0, 0}) == doctest::Approx(1.0 / 3));
    CHECK_THROWS_AS(macro_f1(std::vector<int>{}, std::vector<int>{}), Error);
}

TEST_CASE("macro_f1 agrees with the oracle and is order-invariant") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(4));
        const int n = 1 + static_cast<int>(rng.below(40));
        std::vector<int> truth, pred;
        for (int i = 0; i < n; ++i) {
            truth.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(k))));
            pred.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(k))));
        }
        const double f = macro_f1(truth, pred);
        CHECK(f == doctest::Approx(oracle_macro_f1(truth, pred)).epsilon(1e-12));
        std::vector<std::size_t> order(truth.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(std::span(order));
        std::vector<int> t2, p2;
        for (auto i : order) {
            t2.push_back(truth[i]);
            p2.push_back(pred[i]);
        }
        CHECK(macro_f1(t2, p2) == doctest::Approx(f).epsilon(1e-15));
    }
}

TEST_CASE("filter_subset") {
    const auto docs = corpus(1, 10);
    CHECK(filter_subset(docs, Subset::mixed, Dimension::gender).size() == 20);
    const auto a = filter_subset(docs, Subset::class_a, Dimension::gender);
    CHECK(a.size() == 10);
    for (const auto& d : a) CHECK(d.gender == Gender::f);
    CHECK(filter_subset(docs, Subset::class_a, Dimension::age).empty());
}

TEST_CASE("fine-tuning contracts") {
    const auto docs = corpus(2, 60);
    const Checkpoint base = tiny_base(docs);

    SUBCASE("zero epochs leave the encoder unchanged; SA head has 3 outputs") {
        const auto split = make_split(docs, Dimension::gender, Dataset::sa, 1);
        FineTuneConfig cfg;
        cfg.task = Task::sa;
        cfg.epochs = 0;
        const auto r = finetune(base, docs, split, cfg);
        CHECK(r.classifier.model.classifier_classes() == 3);
        for (const auto& t : base.model.params().tensors()) {
            if (t.name.rfind("head.dem", 0) == 0) continue;
            CHECK(r.classifier.model.params().at(t.name) == t.value);
        }
        CHECK(r.classifier.metadata["finetune"]["labels"].size() == 3);
    }
    SUBCASE("label cardinality mismatch is fatal") {
        auto docs4 = docs;
        for (auto& d : docs4)
            if (d.topic == "topic4") d.topic = "topic3";
        auto split = make_split(docs, Dimension::gender, Dataset::td, 1);
        FineTuneConfig cfg;
        cfg.task = Task::td;
        cfg.epochs = 1;
        try {
            finetune(base, docs4, split, cfg);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::label_cardinality);
        }
    }
    SUBCASE("task and dataset must agree") {
        const auto split = make_split(docs, Dimension::gender, Dataset::sa, 1);
        FineTuneConfig cfg;
        cfg.task = Task::td;
        CHECK_THROWS_AS(finetune(base, docs, split, cfg), Error);
    }
}

TEST_CASE("AC on a signal-free corpus stays at chance; empty subsets are fatal") {
    const auto docs = corpus(5, 150);
    EncoderConfig enc;
    enc.hidden_dim = 32;
    enc.num_layers = 2;
    enc.num_heads = 2;
    enc.feedforward_dim = 64;
    enc.max_seq_len = 32;
    const Checkpoint base = fresh_checkpoint(enc, Tokenizer::build(docs, 1000, 1), 3);
    const auto split = make_split(docs, Dimension::gender, Dataset::ac_sa, 2);
    FineTuneConfig cfg;  // default 20 epochs, patience 5
    cfg.task = Task::ac;
    cfg.lr_grid = {3e-3};
    const auto r = finetune(base, docs, split, cfg);

    // Large independent test set from the same signal-free distribution.
    SyntheticSpec fresh;
    fresh.vocab_size = 120;
    fresh.n_sentiment_tokens = 10;
    fresh.n_topic_tokens = 10;
    fresh.doc_length_min = fresh.doc_length_max = 16;
    fresh.n_docs_per_group = 500;
    fresh.seed = 99;
    fresh.id_prefix = "heldout";
    const auto test = generate_corpus(fresh);
    const auto e = evaluate(r.classifier, test, Subset::mixed);
    CHECK(e.documents == test.size());
    CHECK(e.accuracy >= 0.45);
    CHECK(e.accuracy <= 0.55);
    CHECK(e.f1 >= 0.40);
    CHECK(e.f1 <= 0.60);
    CHECK(evaluate(r.classifier, test, Subset::class_a).documents == test.size() / 2);

    std::vector<LabeledDocument> only_a = filter_subset(test, Subset::class_a, Dimension::gender);
    try {
        evaluate(r.classifier, only_a, Subset::class_b);
        FAIL("expected an error");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::empty_subset);
        CHECK(std::string(error_code_name(err.code())) == "EMPTY_SUBSET");
    }
    // Deterministic and order-invariant.
    auto reversed = test;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(evaluate(r.classifier, reversed, Subset::mixed).f1 == e.f1);
}

TEST_CASE("SA fine-tuning learns the sentiment signal and selects the best learning rate") {
    const auto docs = corpus(6, 150);
    const auto split = make_split(docs, Dimension::gender, Dataset::sa, 3);
    FineTuneConfig cfg;
    cfg.task = Task::sa;
    cfg.epochs = 6;
    cfg.lr_grid = {1e-6, 3e-3};
    const auto r = finetune(tiny_base(docs), docs, split, cfg);
    CHECK(r.chosen_lr == 3e-3);
    CHECK(evaluate(r.classifier, select_documents(docs, split.test), Subset::mixed).f1 > 0.6);
}

TEST_CASE("ResultRecord round trip and invariants") {
    ResultRecord r;
    r.country = "US";
    r.language = "en";
    r.task = Task::td;
    r.dataset = Dataset::td;
    r.method = Method::ds_tok;
    r.spec_domain = SpecDomain::out_of_domain;
    r.f1 = 0.712;
    r.cell_id = "abc";
    const auto back = result_record_from_json(to_json(r));
    CHECK(to_json(back) == to_json(r));
    r.spec_domain = SpecDomain::none;
    CHECK_THROWS_AS(r.validate(), Error);
    r.method = Method::vanilla;
    CHECK_NOTHROW(r.validate());
    r.f1 = 1.2;
    CHECK_THROWS_AS(r.validate(), Error);
}

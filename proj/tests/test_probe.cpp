#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include "demspec/error.hpp"
#include "demspec/probe.hpp"
#include "demspec/rng.hpp"
#include "demspec/synthetic.hpp"

using namespace demspec;

namespace {

Matrix gaussian(Eigen::Index n, Eigen::Index d, Rng& rng) {
    Matrix X(n, d);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
    return X;
}

std::vector<std::string> random_labels(std::size_t n, Rng& rng) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(rng.bernoulli(0.5) ? "A" : "B");
    return out;
}

// Silhouette by direct definition, without the matrix shortcut.
double brute_silhouette(const Matrix& X, const std::vector<std::string>& labels) {
    const auto n = X.rows();
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        std::map<std::string, std::pair<double, int>> acc;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            auto& [s, c] = acc[labels[static_cast<std::size_t>(j)]];
            s += (X.row(i) - X.row(j)).norm();
            c += 1;
        }
        const auto& own = acc.at(labels[static_cast<std::size_t>(i)]);
        const double a = own.first / own.second;
        double b = INFINITY;
        for (const auto& [l, sc] : acc)
            if (l != labels[static_cast<std::size_t>(i)]) b = std::min(b, sc.first / sc.second);
        total += std::max(a, b) > 0 ? (b - a) / std::max(a, b) : 0;
    }
    return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("separation_score oracles") {
    Rng rng(11);
    SUBCASE("10-sigma blobs in the plane") {
        Matrix X = gaussian(400, 2, rng);
        std::vector<std::string> labels;
        for (Eigen::Index i = 0; i < 400; ++i) {
            const bool b = i % 2;
            if (b) X(i, 0) += 10.0;
            labels.push_back(b ? "B" : "A");
        }
        CHECK(separation_score(X, labels) >= 0.8);
    }
    SUBCASE("random labels on one blob at n = 2000") {
        const Matrix X = gaussian(2000, 8, rng);
        CHECK(std::abs(separation_score(X, random_labels(2000, rng))) <= 0.05);
    }
    SUBCASE("duplicated points split across labels") {
        const Matrix X = Matrix::Constant(6, 3, 1.5);
        const std::vector<std::string> labels = {"A", "A", "A", "B", "B", "B"};
        CHECK(separation_score(X, labels) <= 0.0);
    }
    SUBCASE("matches the definition on three classes") {
        const Matrix X = gaussian(60, 4, rng);
        std::vector<std::string> labels;
        for (int i = 0; i < 60; ++i) labels.push_back(std::string(1, static_cast<char>('a' + i % 3)));
        CHECK(separation_score(X, labels) == doctest::Approx(brute_silhouette(X, labels)).epsilon(1e-10));
    }
    SUBCASE("singleton class is fatal") {
        const Matrix X = gaussian(5, 2, rng);
        const std::vector<std::string> labels = {"A", "A", "A", "A", "B"};
        try {
            separation_score(X, labels);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::insufficient_data);
        }
        const std::vector<std::string> one = {"A", "A", "A", "A", "A"};
        CHECK_THROWS_AS(separation_score(X, one), Error);
    }
}

TEST_CASE("separation_score invariances") {
    Rng rng(12);
    Matrix X = gaussian(300, 5, rng);
    std::vector<std::string> labels;
    for (Eigen::Index i = 0; i < 300; ++i) {
        labels.push_back(i % 3 == 0 ? "A" : "B");
        if (i % 3 == 0) X(i, 1) += 2.0;
    }
    const double base = separation_score(X, labels);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian(5, 5, rng)).householderQ();
    const Matrix rotated = X * q;
    CHECK(separation_score(rotated, labels) == doctest::Approx(base).epsilon(1e-9));
    Eigen::RowVectorXd shift(5);
    shift << 3, -7, 100, 0.5, -2;
    CHECK(separation_score(X.rowwise() + shift, labels) == doctest::Approx(base).epsilon(1e-9));
    CHECK(separation_score(X * 37.5, labels) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("permutation null calibration") {
    Rng rng(13);
    Matrix X = gaussian(1000, 6, rng);
    std::vector<std::string> labels;
    for (Eigen::Index i = 0; i < 1000; ++i) {
        labels.push_back(i < 500 ? "A" : "B");
        if (i < 500) X(i, 0) += 4.0;
    }
    const auto null = permutation_null(X, labels, 100, 5);
    REQUIRE(null.scores.size() == 100);
    int within = 0;
    for (double s : null.scores) within += std::abs(s) <= 0.05;
    CHECK(within >= 95);
    CHECK(std::abs(null.mean) <= 0.02);
    CHECK(separation_score(X, labels) > null.mean + 10 * null.std);
    CHECK(permutation_null(X, labels, 100, 5).scores == null.scores);
}

TEST_CASE("project_2d") {
    Rng rng(14);
    Matrix X = gaussian(120, 6, rng);
    for (Eigen::Index i = 0; i < 60; ++i) X(i, 0) += 12.0;
    X.row(7) = X.row(3);
    X.row(100) = X.row(3);

    TsneOptions opt;
    opt.iterations = 300;
    const Matrix Y = project_2d(X, 9, opt);
    CHECK(Y.rows() == 120);
    CHECK(Y.cols() == 2);
    CHECK(Y.allFinite());
    CHECK(project_2d(X, 9, opt) == Y);

    const Eigen::RowVector2d lo = Y.colwise().minCoeff(), hi = Y.colwise().maxCoeff();
    const double diameter = (hi - lo).norm();
    CHECK((Y.row(3) - Y.row(7)).norm() <= 1e-3 * diameter);
    CHECK((Y.row(3) - Y.row(100)).norm() <= 1e-3 * diameter);

    // The two input clusters stay apart in the projection.
    std::vector<std::string> labels;
    for (int i = 0; i < 120; ++i) labels.push_back(i < 60 ? "A" : "B");
    CHECK(separation_score(Y, labels) > 0.5);

    CHECK_THROWS_AS(project_2d(gaussian(4, 3, rng), 0), Error);
}

TEST_CASE("embed_corpus and run_probe") {
    SyntheticSpec spec;
    spec.vocab_size = 100;
    spec.n_sentiment_tokens = 8;
    spec.n_topic_tokens = 8;
    spec.doc_length_min = spec.doc_length_max = 12;
    spec.n_docs_per_group = 40;
    spec.seed = 4;
    const auto docs = generate_corpus(spec);
    EncoderConfig cfg;
    cfg.hidden_dim = 16;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.feedforward_dim = 32;
    cfg.max_seq_len = 16;
    const auto tok = Tokenizer::build(docs, 1000, 1);
    const Checkpoint a = fresh_checkpoint(cfg, tok, 1);
    const Checkpoint b = fresh_checkpoint(cfg, tok, 2);

    const Matrix E = embed_corpus(a, docs);
    CHECK(E.rows() == static_cast<Eigen::Index>(docs.size()));
    CHECK(E.cols() == 16);
    CHECK(embed_corpus(a, docs) == E);
    const std::vector<LabeledDocument> twice = {docs[0], docs[0]};
    const Matrix T = embed_corpus(a, twice);
    CHECK(T.row(0) == T.row(1));
    CHECK((embed_corpus(b, docs) - E).norm() > 1e-6);
    CHECK_THROWS_AS(embed_corpus(a, std::span<const LabeledDocument>{}), Error);

    const auto out = std::filesystem::temp_directory_path() / "demspec_probe_test";
    std::filesystem::remove_all(out);
    ProbeOptions opt;
    opt.shuffles = 20;
    opt.tsne.iterations = 100;
    const ProbeScore s = run_probe(a, docs, opt, out);
    CHECK(s.documents == docs.size());
    CHECK(s.checkpoint == a.digest());
    CHECK(std::abs(s.silhouette) <= 1.0);

    std::ifstream js(out / "score.json");
    const auto j = nlohmann::json::parse(js);
    for (const char* key :
         {"checkpoint", "label_dimension", "silhouette", "permutation_null_mean", "permutation_null_std"})
        CHECK(j.contains(key));
    CHECK(j["label_dimension"] == "gender");
    std::ifstream csv(out / "points.csv");
    std::string line;
    std::size_t lines = 0;
    std::getline(csv, line);
    CHECK(line == "id,x,y,label");
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == docs.size());

    opt.label = ProbeLabel::language;
    CHECK_THROWS_AS(run_probe(a, docs, opt), Error);  // one language only
    std::filesystem::remove_all(out);
}

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "demspec/error.hpp"
#include "demspec/specialize.hpp"
#include "demspec/synthetic.hpp"
#include "demspec/training.hpp"

using namespace demspec;

namespace {

std::vector<LabeledDocument> small_corpus(std::uint64_t seed, int per_group = 100) {
    SyntheticSpec spec;
    spec.vocab_size = 120;
    spec.n_sentiment_tokens = 10;
    spec.n_topic_tokens = 10;
    spec.doc_length_min = spec.doc_length_max = 16;
    spec.n_docs_per_group = per_group;
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
    return fresh_checkpoint(cfg, Tokenizer::build(docs, 1000, 1), 7);
}

}  // namespace

TEST_CASE("early stopping patience example") {
    EarlyStopping s(3, EarlyStopping::Goal::minimize);
    const double seq[] = {1.0, 0.9, 0.91, 0.92, 0.93, 0.5};
    int stopped_after = 0;
    for (double v : seq) {
        ++stopped_after;
        if (s.update(v)) break;
    }
    CHECK(stopped_after == 5);
    CHECK(s.best() == 0.9);
    CHECK(s.best_epoch() == 2);
    CHECK_THROWS_AS(EarlyStopping(0, EarlyStopping::Goal::maximize), Error);

    EarlyStopping up(1, EarlyStopping::Goal::maximize);
    CHECK_FALSE(up.update(0.4));
    CHECK(up.update(0.4));  // equal is not an improvement
}

TEST_CASE("MLM specialization reduces held-out MLM loss by at least 5%") {
    const auto docs = small_corpus(1);
    const Checkpoint base = tiny_base(docs);
    SpecializationConfig cfg;
    cfg.method = Method::mlm;
    cfg.epochs = 3;
    cfg.lr_grid = {3e-3};
    cfg.dev_fraction = 0.1;
    cfg.seed = 5;
    const auto result = specialize(base, docs, cfg);
    CHECK(result.initial_dev_mlm == doctest::Approx(std::log(base.tokenizer.size())).epsilon(1e-9));
    CHECK(result.final_dev_mlm <= 0.95 * result.initial_dev_mlm);
    CHECK(result.log.size() == 3);
    for (const auto& e : result.log) {
        CHECK_FALSE(e.dem_loss.has_value());
        CHECK(e.eta_mlm == 0.0);
        CHECK(e.eta_dem == 0.0);
    }
    CHECK(result.checkpoint.metadata.at("specialization").at("chosen_lr") == 3e-3);
    // The input checkpoint is untouched.
    CHECK(base.digest() == tiny_base(docs).digest());
}

TEST_CASE("MLM specialization is byte-reproducible") {
    const auto docs = small_corpus(2, 40);
    const Checkpoint base = tiny_base(docs);
    SpecializationConfig cfg;
    cfg.epochs = 2;
    cfg.lr_grid = {1e-3, 1e-4};
    cfg.dev_fraction = 0.1;
    cfg.seed = 9;
    const auto a = specialize(base, docs, cfg);
    const auto b = specialize(base, docs, cfg);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(to_json(a.log[i]).dump() == to_json(b.log[i]).dump());
    CHECK(a.checkpoint.digest() == b.checkpoint.digest());
    CHECK(a.trials.size() == 2);

    cfg.seed = 10;
    CHECK(specialize(base, docs, cfg).checkpoint.digest() != a.checkpoint.digest());
}

TEST_CASE("winner is the trial with the best development objective") {
    const auto docs = small_corpus(3, 40);
    const Checkpoint base = tiny_base(docs);
    SpecializationConfig cfg;
    cfg.epochs = 2;
    cfg.lr_grid = {1e-6, 3e-3};
    cfg.dev_fraction = 0.1;
    const auto r = specialize(base, docs, cfg);
    REQUIRE(r.trials.size() == 2);
    CHECK(r.chosen_lr == 3e-3);
    CHECK(r.trials[1].best_dev_objective < r.trials[0].best_dev_objective);
    CHECK(r.final_dev_mlm == doctest::Approx(r.trials[1].best_dev_objective).epsilon(1e-12));
}

TEST_CASE("DS-Tok on a signal-free corpus drives eta_dem toward ln of the plateau loss") {
    const auto docs = small_corpus(4, 100);
    const Checkpoint base = tiny_base(docs);
    SpecializationConfig cfg;
    cfg.method = Method::ds_tok;
    cfg.epochs = 12;
    cfg.patience = 100;
    cfg.lr_grid = {1e-3};
    cfg.eta_learning_rate = 0.02;
    cfg.dev_fraction = 0.1;
    const auto r = specialize(base, docs, cfg);
    REQUIRE(r.log.back().dem_loss.has_value());
    const double c = *r.log.back().dem_loss;
    // No demographic signal: the demographic loss stays near chance level.
    CHECK(c == doctest::Approx(std::log(2.0)).epsilon(0.05));
    CHECK(std::abs(r.log.back().eta_dem - std::log(c)) <= 0.1);
    // The trajectory moves away from 0 toward ln c < 0.
    CHECK(r.log.front().eta_dem < 0.0);
    CHECK(r.log.back().eta_dem < r.log.front().eta_dem);
}

TEST_CASE("DS-Seq trains and logs both losses") {
    const auto docs = small_corpus(5, 30);
    SpecializationConfig cfg;
    cfg.method = Method::ds_seq;
    cfg.epochs = 1;
    cfg.lr_grid = {1e-3};
    cfg.dev_fraction = 0.1;
    const auto r = specialize(tiny_base(docs), docs, cfg);
    REQUIRE(r.log.size() == 1);
    CHECK(r.log[0].dem_loss.has_value());
    CHECK(r.log[0].eta_dem != 0.0);
    CHECK(r.checkpoint.metadata["specialization"]["config"]["method"] == "DS-Seq");

    const auto dir = std::filesystem::temp_directory_path() / "demspec_spec_log";
    std::filesystem::create_directories(dir);
    write_training_log(dir / "log.jsonl", r.log);
    std::ifstream in(dir / "log.jsonl");
    std::string line;
    std::getline(in, line);
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "lr", "mlm_loss", "dem_loss", "eta_mlm", "eta_dem", "dev_objective"})
        CHECK(j.contains(key));
    std::filesystem::remove_all(dir);
}

TEST_CASE("DS methods require demographic labels") {
    auto docs = small_corpus(6, 20);
    docs[3].gender.reset();
    SpecializationConfig cfg;
    cfg.method = Method::ds_seq;
    cfg.epochs = 1;
    try {
        specialize(tiny_base(docs), docs, cfg);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::missing_label);
    }
    cfg.method = Method::mlm;
    cfg.lr_grid = {1e-3};
    CHECK_NOTHROW(specialize(tiny_base(docs), docs, cfg));
}

TEST_CASE("specialization config validation and JSON") {
    SpecializationConfig cfg;
    cfg.patience = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.patience = 3;
    cfg.lr_grid.clear();
    CHECK_THROWS_AS(cfg.validate(), Error);
    const auto parsed = specialization_config_from_json({{"method", "ds-tok"}, {"epochs", 4}});
    CHECK(parsed.method == Method::ds_tok);
    CHECK(parsed.epochs == 4);
    CHECK(parsed.lr_grid.size() == 3);
    CHECK(parsed.patience == 3);
    CHECK(parsed.batch_size == 32);
    CHECK(parsed.mask_rate == 0.15);
    CHECK_THROWS_AS(specialization_config_from_json({{"method", "vanilla"}}), Error);
}

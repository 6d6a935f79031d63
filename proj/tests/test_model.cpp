#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "demspec/model.hpp"

using namespace demspec;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.vocab_size = 9;
    c.hidden_dim = 8;
    c.num_layers = 1;
    c.num_heads = 2;
    c.feedforward_dim = 8;
    c.max_seq_len = 5;
    c.dropout = 0.0;
    return c;
}

Model tiny_model(std::uint64_t seed, int classes = 0) {
    Model m(tiny_config(), seed);
    if (classes) m.add_classifier(classes);
    // Randomise everything (heads and norms included) so every path carries gradient.
    Rng rng(seed + 100);
    for (auto& t : m.params().tensors())
        for (Eigen::Index i = 0; i < t.value.size(); ++i)
            t.value.data()[i] = (t.name.ends_with(".gamma") ? 1.0 : 0.0) + 0.5 * rng.normal();
    return m;
}

MaskedBatch tiny_batch() {
    IdMatrix ids(3, 5);
    ids << 2, 5, 6, 7, 8,  //
        2, 8, 8, 0, 0,     //
        2, 6, 5, 7, 0;
    MaskedBatch b = plain_batch(ids);
    b.mask_positions(0, 1) = b.mask_positions(0, 3) = true;
    b.mask_positions(1, 2) = true;
    b.mask_positions(2, 1) = b.mask_positions(2, 3) = true;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 5; ++c)
            if (b.mask_positions(r, c)) b.token_ids(r, c) = Tokenizer::mask_id;
    b.sequence_labels = {DemClass::a, DemClass::b, DemClass::b};
    return b;
}

using LossFn = std::function<double(const Model&, const EncodedBatch&, const LossGrad&)>;

// Central finite differences of the full forward+loss against the analytic
// backward pass, tensor by tensor.
void check_gradients(Model model, const MaskedBatch& batch, const LossFn& loss) {
    REQUIRE(model.params().scalar_count() <= 1000);
    Trace trace;
    auto encoded = encode(model, batch, Mode::eval, nullptr, &trace);
    ParamSet grads = model.params().zeros_like();
    Matrix d_states = Matrix::Zero(encoded.token_states.rows(), encoded.token_states.cols());
    loss(model, encoded, {&d_states, &grads, 1.0});
    encode_backward(model, trace, d_states, grads);

    const double h = 1e-6;
    for (std::size_t t = 0; t < model.params().size(); ++t) {
        Matrix& w = model.params()[t];
        Matrix numeric(w.rows(), w.cols());
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double saved = w.data()[i];
            w.data()[i] = saved + h;
            const double up = loss(model, encode(model, batch), {});
            w.data()[i] = saved - h;
            const double down = loss(model, encode(model, batch), {});
            w.data()[i] = saved;
            numeric.data()[i] = (up - down) / (2 * h);
        }
        const double scale = std::max(numeric.norm(), grads[t].norm());
        if (scale < 1e-9) continue;
        const double rel = (numeric - grads[t]).norm() / scale;
        INFO("tensor " << model.params().tensors()[t].name << " rel " << rel);
        CHECK(rel <= 1e-4);
    }
}

}  // namespace

TEST_CASE("encode shape, determinism and preconditions") {
    Model m = tiny_model(1);
    auto batch = tiny_batch();
    auto a = encode(m, batch);
    CHECK(a.rows() == 3);
    CHECK(a.width == 5);
    CHECK(a.token_state(1).rows() == 5);
    CHECK(a.token_state(1).cols() == 8);
    CHECK(a.token_state(1).row(4).isZero());  // padding
    CHECK(a.lengths == std::vector<int>{5, 3, 4});
    CHECK(a.all_finite());
    auto b = encode(m, batch);
    CHECK(a.token_states == b.token_states);
    CHECK(a.sequence_state.row(1) == a.token_states.row(a.offsets[1]));

    MaskedBatch bad = batch;
    bad.token_ids(0, 2) = 9;
    CHECK_THROWS_AS(encode(m, bad), Error);
    try {
        encode(m, bad);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::out_of_vocabulary);
    }
}

TEST_CASE("train-mode dropout changes outputs, eval mode does not") {
    EncoderConfig cfg = tiny_config();
    cfg.dropout = 0.3;
    Model m(cfg, 4);
    auto batch = tiny_batch();
    Rng r1(1), r2(2);
    auto a = encode(m, batch, Mode::train, &r1);
    auto b = encode(m, batch, Mode::train, &r2);
    CHECK(a.token_states != b.token_states);
    CHECK(encode(m, batch).token_states == encode(m, batch).token_states);
    CHECK_THROWS_AS(encode(m, batch, Mode::train, nullptr), Error);
}

TEST_CASE("token states are permutation-equivariant when positions move with tokens") {
    Model m = tiny_model(2);
    IdMatrix ids(1, 5);
    ids << 2, 5, 6, 7, 8;
    const int perm[5] = {0, 3, 1, 4, 2};  // new position i holds old position perm[i]
    IdMatrix permuted(1, 5);
    Model pm = m;
    Matrix& pos = pm.params()[pm.position_embedding()];
    const Matrix& orig = m.params()[m.position_embedding()];
    for (int i = 0; i < 5; ++i) {
        permuted(0, i) = ids(0, perm[i]);
        pos.row(i) = orig.row(perm[i]);
    }
    auto a = encode(m, plain_batch(ids));
    auto b = encode(pm, plain_batch(permuted));
    for (int i = 0; i < 5; ++i)
        CHECK((b.token_states.row(i) - a.token_states.row(perm[i])).norm() <= 1e-12);
}

TEST_CASE("mlm_loss oracles") {
    SUBCASE("uniform logits give ln V") {
        EncoderConfig cfg = tiny_config();
        cfg.vocab_size = 37;
        Model m(cfg, 3);  // heads start at zero
        auto batch = tiny_batch();
        CHECK(std::abs(mlm_loss(m, encode(m, batch), batch) - std::log(37.0)) <= 1e-12);
    }
    SUBCASE("hand-set logits on a toy vocabulary match scalar cross-entropy") {
        EncoderConfig cfg;
        cfg.vocab_size = 10;
        cfg.hidden_dim = 10;
        cfg.num_heads = 1;
        cfg.num_layers = 0;
        cfg.max_seq_len = 4;
        Model m(cfg, 0);
        m.params().at("head.mlm.w").setIdentity();
        // Logits equal the hand-set states. Only ids 5..9 (the 5-token toy
        // vocabulary) carry non-trivial logits.
        EncodedBatch enc;
        enc.width = 3;
        enc.offsets = {0};
        enc.lengths = {3};
        enc.token_states = Matrix::Zero(3, 10);
        enc.token_states.row(1) << -9, -9, -9, -9, -9, 1.0, 2.0, 0.5, -1.0, 0.0;
        enc.token_states.row(2) << -9, -9, -9, -9, -9, 0.3, 0.3, 3.0, 0.1, -2.0;
        enc.sequence_state = enc.token_states.topRows(1);
        IdMatrix ids(1, 3);
        ids << 2, 6, 9;
        MaskedBatch batch = plain_batch(ids);
        batch.mask_positions(0, 1) = batch.mask_positions(0, 2) = true;

        auto xent = [](const double* logits, int n, int target) {
            double mx = logits[0];
            for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
            double z = 0;
            for (int i = 0; i < n; ++i) z += std::exp(logits[i] - mx);
            return -(logits[target] - mx - std::log(z));
        };
        const double row1[10] = {-9, -9, -9, -9, -9, 1.0, 2.0, 0.5, -1.0, 0.0};
        const double row2[10] = {-9, -9, -9, -9, -9, 0.3, 0.3, 3.0, 0.1, -2.0};
        const double expected = 0.5 * (xent(row1, 10, 6) + xent(row2, 10, 9));
        CHECK(mlm_loss(m, enc, batch) == doctest::Approx(expected).epsilon(1e-12));
    }
    SUBCASE("certain predictions give zero loss") {
        EncoderConfig cfg;
        cfg.vocab_size = 8;
        cfg.hidden_dim = 8;
        cfg.num_heads = 1;
        cfg.num_layers = 0;
        Model m(cfg, 0);
        m.params().at("head.mlm.w").setIdentity();
        m.params().at("head.mlm.w") *= 200.0;
        EncodedBatch enc;
        enc.width = 2;
        enc.offsets = {0};
        enc.lengths = {2};
        enc.token_states = Matrix::Zero(2, 8);
        enc.token_states(1, 6) = 1.0;
        enc.sequence_state = enc.token_states.topRows(1);
        IdMatrix ids(1, 2);
        ids << 2, 6;
        MaskedBatch batch = plain_batch(ids);
        batch.mask_positions(0, 1) = true;
        CHECK(mlm_loss(m, enc, batch) <= 1e-6);
    }
    SUBCASE("no masked positions is an error") {
        Model m = tiny_model(1);
        IdMatrix ids(1, 3);
        ids << 2, 5, 6;
        auto batch = plain_batch(ids);
        CHECK_THROWS_AS(mlm_loss(m, encode(m, batch), batch), Error);
    }
}

namespace {

// Binary head whose logit equals the first coordinate of the state.
Model probe_head_model() {
    EncoderConfig cfg;
    cfg.vocab_size = 8;
    cfg.hidden_dim = 2;
    cfg.num_heads = 1;
    cfg.num_layers = 0;
    Model m(cfg, 0);
    m.params().at("head.dem_seq.w")(0, 0) = 1.0;
    m.params().at("head.dem_tok.w")(0, 0) = 1.0;
    return m;
}

double logit(double p) { return std::log(p / (1 - p)); }

}  // namespace

TEST_CASE("dem_loss_seq oracles") {
    Model m = probe_head_model();
    EncodedBatch enc;
    enc.width = 1;
    enc.offsets = {0, 1};
    enc.lengths = {1, 1};
    enc.token_states = Matrix::Zero(2, 2);
    std::vector<std::optional<DemClass>> labels = {DemClass::b, DemClass::a};

    enc.sequence_state = enc.token_states;
    CHECK(dem_loss_seq(m, enc, labels) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    enc.sequence_state(0, 0) = logit(0.9);
    enc.sequence_state(1, 0) = logit(0.2);
    CHECK(std::abs(dem_loss_seq(m, enc, labels) - (-0.5 * (std::log(0.9) + std::log(0.8)))) <= 1e-6);
    CHECK(std::abs(dem_loss_seq(m, enc, labels) - 0.1643) <= 1e-4);

    enc.sequence_state(0, 0) = 40.0;
    enc.sequence_state(1, 0) = -40.0;
    CHECK(dem_loss_seq(m, enc, labels) <= 1e-6);

    labels[1].reset();
    CHECK_THROWS_AS(dem_loss_seq(m, enc, labels), Error);
}

TEST_CASE("dem_loss_tok oracles") {
    Model m = probe_head_model();
    EncodedBatch enc;
    enc.width = 3;
    enc.offsets = {0};
    enc.lengths = {3};
    enc.token_states = Matrix::Zero(3, 2);
    enc.sequence_state = enc.token_states.topRows(1);
    IdMatrix ids(1, 3);
    ids << 2, 5, 6;
    MaskedBatch batch = plain_batch(ids);
    std::vector<std::optional<DemClass>> labels = {DemClass::b};

    CHECK_THROWS_AS(dem_loss_tok(m, enc, batch, labels), Error);

    batch.mask_positions(0, 1) = batch.mask_positions(0, 2) = true;
    CHECK(dem_loss_tok(m, enc, batch, labels) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    batch.mask_positions(0, 2) = false;
    enc.token_states(1, 0) = logit(0.25);
    CHECK(std::abs(dem_loss_tok(m, enc, batch, labels) - 1.3862944) <= 1e-6);

    enc.token_states(1, 0) = 50.0;
    CHECK(dem_loss_tok(m, enc, batch, labels) <= 1e-6);
}

TEST_CASE("BCE clamps probabilities") {
    CHECK(std::isfinite(binary_cross_entropy(0.0, 1)));
    CHECK(binary_cross_entropy(0.0, 1) == doctest::Approx(-std::log(kProbabilityEpsilon)));
    CHECK(binary_cross_entropy(1.0, 1) <= 1e-6);
}

TEST_CASE("analytic gradients match central finite differences") {
    auto batch = tiny_batch();
    SUBCASE("mlm") {
        check_gradients(tiny_model(11), batch, [&](const Model& m, const EncodedBatch& e, const LossGrad& g) {
            return mlm_loss(m, e, batch, g);
        });
    }
    SUBCASE("dem_seq") {
        check_gradients(tiny_model(12), batch, [&](const Model& m, const EncodedBatch& e, const LossGrad& g) {
            return dem_loss_seq(m, e, batch.sequence_labels, g);
        });
    }
    SUBCASE("dem_tok") {
        check_gradients(tiny_model(13), batch, [&](const Model& m, const EncodedBatch& e, const LossGrad& g) {
            return dem_loss_tok(m, e, batch, batch.sequence_labels, g);
        });
    }
    SUBCASE("classifier") {
        const std::vector<int> y = {2, 0, 1};
        check_gradients(tiny_model(14, 3), batch, [&](const Model& m, const EncodedBatch& e, const LossGrad& g) {
            return classification_loss(m, e, y, g);
        });
    }
    SUBCASE("weighted sum of two losses") {
        check_gradients(tiny_model(15), batch, [&](const Model& m, const EncodedBatch& e, const LossGrad& g) {
            LossGrad g2 = g;
            g2.scale = 0.3;
            return mlm_loss(m, e, batch, g) + 0.3 * dem_loss_tok(m, e, batch, batch.sequence_labels, g2);
        });
    }
}

TEST_CASE("losses are finite and non-negative on random models") {
    auto batch = tiny_batch();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Model m = tiny_model(seed, 2);
        auto enc = encode(m, batch);
        for (double v : {mlm_loss(m, enc, batch), dem_loss_seq(m, enc, batch.sequence_labels),
                         dem_loss_tok(m, enc, batch, batch.sequence_labels),
                         classification_loss(m, enc, std::vector<int>{0, 1, 1})}) {
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
        }
    }
}

TEST_CASE("parameter archive round-trips bit-exactly") {
    Model m = tiny_model(5, 3);
    auto path = std::filesystem::temp_directory_path() / "demspec_params.bin";
    m.params().save(path);
    ParamSet loaded = ParamSet::load(path);
    REQUIRE(loaded.size() == m.params().size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded.tensors()[i].name == m.params().tensors()[i].name);
        CHECK(loaded[i] == m.params()[i]);
        CHECK(loaded.tensors()[i].decay == m.params().tensors()[i].decay);
    }
    Model restored(m.config(), loaded);
    CHECK(restored.classifier_classes() == 3);
}

TEST_CASE("encoder config validation") {
    EncoderConfig c = tiny_config();
    c.num_heads = 3;
    CHECK_THROWS_AS(c.validate(), Error);
    c = tiny_config();
    c.max_seq_len = 1;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK(encoder_config_from_json(to_json(tiny_config())).hidden_dim == 8);
}

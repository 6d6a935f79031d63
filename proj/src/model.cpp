#include "demspec/model.hpp"

#include <cmath>
#include <string>

namespace demspec {

using nlohmann::json;

void EncoderConfig::validate() const {
    auto check = [](bool ok, const std::string& what) {
        if (!ok) fail(ErrorCode::invalid_argument, "encoder config: " + what);
    };
    check(vocab_size > Tokenizer::num_special, "vocab_size must exceed the special symbols");
    check(hidden_dim > 0 && num_heads > 0 && hidden_dim % num_heads == 0,
          "hidden_dim must be a positive multiple of num_heads");
    check(num_layers >= 0, "num_layers must be non-negative");
    check(feedforward_dim > 0, "feedforward_dim must be positive");
    check(max_seq_len >= 2, "max_seq_len must be at least 2");
    check(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
}

json to_json(const EncoderConfig& c) {
    return json{{"vocab_size", c.vocab_size},         {"hidden_dim", c.hidden_dim},
                {"num_layers", c.num_layers},         {"num_heads", c.num_heads},
                {"feedforward_dim", c.feedforward_dim}, {"max_seq_len", c.max_seq_len},
                {"dropout", c.dropout},               {"has_sequence_token", c.has_sequence_token}};
}

EncoderConfig encoder_config_from_json(const json& j) {
    EncoderConfig c;
    try {
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
        c.num_layers = j.value("num_layers", c.num_layers);
        c.num_heads = j.value("num_heads", c.num_heads);
        c.feedforward_dim = j.value("feedforward_dim", c.feedforward_dim);
        c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
        c.dropout = j.value("dropout", c.dropout);
        c.has_sequence_token = j.value("has_sequence_token", c.has_sequence_token);
    } catch (const json::exception& e) {
        fail(ErrorCode::parse_error, std::string("malformed encoder config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Model construction

namespace {

constexpr double kInitStd = 0.02;

void fill_normal(Matrix& m, Rng& rng, double stddev) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
}

std::string layer_name(int l, const char* suffix) { return "layer" + std::to_string(l) + "." + suffix; }

}  // namespace

Model::Model(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const int h = config.hidden_dim;
    const int ff = config.feedforward_dim;
    params_.add("embed.token", config.vocab_size, h);
    params_.add("embed.position", config.max_seq_len, h);
    for (int l = 0; l < config.num_layers; ++l) {
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) params_.add(layer_name(l, w), h, h);
        for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) params_.add(layer_name(l, b), 1, h, false);
        params_.add(layer_name(l, "ln1.gamma"), 1, h, false);
        params_.add(layer_name(l, "ln1.beta"), 1, h, false);
        params_.add(layer_name(l, "ln2.gamma"), 1, h, false);
        params_.add(layer_name(l, "ln2.beta"), 1, h, false);
        params_.add(layer_name(l, "ffn.w1"), h, ff);
        params_.add(layer_name(l, "ffn.b1"), 1, ff, false);
        params_.add(layer_name(l, "ffn.w2"), ff, h);
        params_.add(layer_name(l, "ffn.b2"), 1, h, false);
    }
    params_.add("final_ln.gamma", 1, h, false);
    params_.add("final_ln.beta", 1, h, false);
    // Heads start at zero: uniform logits at initialization.
    params_.add("head.mlm.w", h, config.vocab_size);
    params_.add("head.mlm.b", 1, config.vocab_size, false);
    params_.add("head.dem_seq.w", h, 1);
    params_.add("head.dem_seq.b", 1, 1, false);
    params_.add("head.dem_tok.w", h, 1);
    params_.add("head.dem_tok.b", 1, 1, false);

    Rng rng(seed);
    for (auto& t : params_.tensors()) {
        const bool is_gamma = t.name.ends_with(".gamma");
        if (is_gamma) t.value.setOnes();
        else if (t.name.rfind("head.", 0) == 0 || !t.decay) t.value.setZero();
        else fill_normal(t.value, rng, kInitStd);
    }
    build_index();
}

Model::Model(const EncoderConfig& config, ParamSet params)
    : config_(config), params_(std::move(params)) {
    config_.validate();
    build_index();
    if (params_[token_embedding_].rows() != config_.vocab_size ||
        params_[token_embedding_].cols() != config_.hidden_dim ||
        params_[position_embedding_].rows() != config_.max_seq_len)
        fail(ErrorCode::parse_error, "parameter shapes do not match the encoder config");
}

void Model::build_index() {
    token_embedding_ = params_.index("embed.token");
    position_embedding_ = params_.index("embed.position");
    layers_.clear();
    for (int l = 0; l < config_.num_layers; ++l) {
        auto at = [&](const char* s) { return params_.index(layer_name(l, s)); };
        layers_.push_back({at("attn.wq"), at("attn.bq"), at("attn.wk"), at("attn.bk"), at("attn.wv"),
                           at("attn.bv"), at("attn.wo"), at("attn.bo"), at("ln1.gamma"), at("ln1.beta"),
                           at("ln2.gamma"), at("ln2.beta"), at("ffn.w1"), at("ffn.b1"), at("ffn.w2"),
                           at("ffn.b2")});
    }
    final_g_ = params_.index("final_ln.gamma");
    final_b_ = params_.index("final_ln.beta");
    mlm_ = {params_.index("head.mlm.w"), params_.index("head.mlm.b")};
    dem_seq_ = {params_.index("head.dem_seq.w"), params_.index("head.dem_seq.b")};
    dem_tok_ = {params_.index("head.dem_tok.w"), params_.index("head.dem_tok.b")};
    if (params_.contains("head.cls.w"))
        classifier_ = HeadIndex{params_.index("head.cls.w"), params_.index("head.cls.b")};
    else
        classifier_.reset();
}

void Model::add_classifier(int num_classes) {
    if (num_classes < 2) fail(ErrorCode::invalid_argument, "classifier needs >= 2 classes");
    drop_classifier();
    params_.add("head.cls.w", config_.hidden_dim, num_classes);
    params_.add("head.cls.b", 1, num_classes, false);
    build_index();
}

void Model::drop_classifier() {
    params_.remove_prefix("head.cls.");
    build_index();
}

int Model::classifier_classes() const {
    return classifier_ ? static_cast<int>(params_[classifier_->w].cols()) : 0;
}

Model::HeadIndex Model::classifier_head() const {
    if (!classifier_) fail(ErrorCode::resource_missing, "model has no classifier head");
    return *classifier_;
}

Matrix EncodedBatch::token_state(int row) const {
    Matrix out = Matrix::Zero(width, hidden());
    out.topRows(lengths[static_cast<std::size_t>(row)]) =
        token_states.middleRows(offsets[static_cast<std::size_t>(row)], lengths[static_cast<std::size_t>(row)]);
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct LayerNormCache {
    Matrix xhat;
    Eigen::VectorXd rstd;
};

struct LayerTrace {
    LayerNormCache ln1, ln2;
    Matrix a, q, k, v, ctx, drop1, b, pre, act, drop2;
    std::vector<Matrix> probs;  // per (row, head)
};

struct ForwardTrace {
    std::vector<int> ids;
    std::vector<int> positions;
    std::vector<int> offsets, lengths;
    std::vector<LayerTrace> layers;
    LayerNormCache final_ln;
};

Trace::Trace() : impl_(std::make_unique<ForwardTrace>()) {}
Trace::~Trace() = default;
Trace::Trace(Trace&&) noexcept = default;
Trace& Trace::operator=(Trace&&) noexcept = default;

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, LayerNormCache* cache) {
    const auto n = x.cols();
    Eigen::VectorXd mean = x.rowwise().mean();
    Matrix centered = x.colwise() - mean;
    Eigen::VectorXd var = centered.array().square().rowwise().sum() / static_cast<double>(n);
    Eigen::VectorXd rstd = (var.array() + kLayerNormEps).rsqrt();
    Matrix xhat = centered.array().colwise() * rstd.array();
    Matrix y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const Matrix& gamma,
                           Matrix& dgamma, Matrix& dbeta) {
    dgamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    dbeta += dy.colwise().sum();
    Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
    const double n = static_cast<double>(dy.cols());
    Eigen::VectorXd mean_d = dxhat.rowwise().sum() / n;
    Eigen::VectorXd mean_dx = (dxhat.array() * cache.xhat.array()).rowwise().sum() / n;
    Matrix dx = dxhat.colwise() - mean_d;
    dx -= (cache.xhat.array().colwise() * mean_dx.array()).matrix();
    return dx.array().colwise() * cache.rstd.array();
}

Matrix gelu(const Matrix& x) {
    return x.unaryExpr([](double v) {
        return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
    });
}

double gelu_grad(double v) {
    const double inner = kGeluC * (v + 0.044715 * v * v * v);
    const double t = std::tanh(inner);
    const double d_inner = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
    return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
    Matrix mask(rows, cols);
    const double keep = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < rate ? 0.0 : keep;
    return mask;
}

void softmax_rows(Matrix& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
    }
}

}  // namespace

EncodedBatch encode(const Model& model, const MaskedBatch& batch, Mode mode, Rng* dropout_rng,
                    Trace* trace) {
    const EncoderConfig& cfg = model.config();
    const ParamSet& p = model.params();
    const int rows = batch.rows();
    const int h = cfg.hidden_dim;
    const int heads = cfg.num_heads;
    const int d = h / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const bool use_dropout = mode == Mode::train && cfg.dropout > 0.0;
    if (use_dropout && !dropout_rng)
        fail(ErrorCode::invalid_argument, "train-mode dropout needs an RNG");

    EncodedBatch out;
    out.width = batch.cols();
    if (batch.cols() > cfg.max_seq_len)
        fail(ErrorCode::invalid_argument, "sequence length " + std::to_string(batch.cols()) +
                                              " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    int total = 0;
    for (int r = 0; r < rows; ++r) {
        const int len = batch.length(r);
        if (len == 0) fail(ErrorCode::invalid_argument, "empty sequence in batch");
        out.offsets.push_back(total);
        out.lengths.push_back(len);
        total += len;
    }

    ForwardTrace local;
    ForwardTrace& t = trace ? trace->get() : local;
    t = ForwardTrace{};
    t.offsets = out.offsets;
    t.lengths = out.lengths;

    const Matrix& tok = p[model.token_embedding()];
    const Matrix& pos = p[model.position_embedding()];
    Matrix x(total, h);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < out.lengths[static_cast<std::size_t>(r)]; ++c) {
            const int id = batch.token_ids(r, c);
            if (id < 0 || id >= cfg.vocab_size)
                fail(ErrorCode::out_of_vocabulary,
                     "token id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(cfg.vocab_size));
            const int row = out.offsets[static_cast<std::size_t>(r)] + c;
            x.row(row) = tok.row(id) + pos.row(c);
            t.ids.push_back(id);
            t.positions.push_back(c);
        }

    const bool keep = trace != nullptr;
    for (const auto& L : model.layers()) {
        LayerTrace lt;
        Matrix a = layer_norm(x, p[L.ln1_g], p[L.ln1_b], &lt.ln1);
        Matrix q = (a * p[L.wq]).rowwise() + p[L.bq].row(0);
        Matrix k = (a * p[L.wk]).rowwise() + p[L.bk].row(0);
        Matrix v = (a * p[L.wv]).rowwise() + p[L.bv].row(0);
        Matrix ctx(total, h);
        for (int r = 0; r < rows; ++r) {
            const int off = out.offsets[static_cast<std::size_t>(r)];
            const int n = out.lengths[static_cast<std::size_t>(r)];
            for (int hh = 0; hh < heads; ++hh) {
                Matrix s = q.block(off, hh * d, n, d) * k.block(off, hh * d, n, d).transpose() * scale;
                softmax_rows(s);
                ctx.block(off, hh * d, n, d) = s * v.block(off, hh * d, n, d);
                if (keep) lt.probs.push_back(std::move(s));
            }
        }
        Matrix o = (ctx * p[L.wo]).rowwise() + p[L.bo].row(0);
        if (use_dropout) {
            lt.drop1 = dropout_mask(total, h, cfg.dropout, *dropout_rng);
            o = o.cwiseProduct(lt.drop1);
        }
        Matrix x_mid = x + o;
        Matrix b = layer_norm(x_mid, p[L.ln2_g], p[L.ln2_b], &lt.ln2);
        Matrix pre = (b * p[L.w1]).rowwise() + p[L.b1].row(0);
        Matrix act = gelu(pre);
        Matrix f = (act * p[L.w2]).rowwise() + p[L.b2].row(0);
        if (use_dropout) {
            lt.drop2 = dropout_mask(total, h, cfg.dropout, *dropout_rng);
            f = f.cwiseProduct(lt.drop2);
        }
        x = x_mid + f;
        if (keep) {
            lt.a = std::move(a);
            lt.q = std::move(q);
            lt.k = std::move(k);
            lt.v = std::move(v);
            lt.ctx = std::move(ctx);
            lt.b = std::move(b);
            lt.pre = std::move(pre);
            lt.act = std::move(act);
            t.layers.push_back(std::move(lt));
        }
    }
    out.token_states = layer_norm(x, p[model.final_ln_gamma()], p[model.final_ln_beta()],
                                  keep ? &t.final_ln : nullptr);
    out.sequence_state.resize(rows, h);
    for (int r = 0; r < rows; ++r)
        out.sequence_state.row(r) = out.token_states.row(out.offsets[static_cast<std::size_t>(r)]);
    return out;
}

void encode_backward(const Model& model, const Trace& trace, const Matrix& d_states, ParamSet& grads) {
    const ForwardTrace& t = trace.get();
    const ParamSet& p = model.params();
    const int h = model.config().hidden_dim;
    const int heads = model.config().num_heads;
    const int d = h / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const auto rows = t.lengths.size();

    Matrix dx = layer_norm_backward(d_states, t.final_ln, p[model.final_ln_gamma()],
                                    grads[model.final_ln_gamma()], grads[model.final_ln_beta()]);
    for (std::size_t li = model.layers().size(); li-- > 0;) {
        const auto& L = model.layers()[li];
        const LayerTrace& lt = t.layers[li];

        // Feed-forward block.
        Matrix df = lt.drop2.size() ? Matrix(dx.cwiseProduct(lt.drop2)) : dx;
        grads[L.w2].noalias() += lt.act.transpose() * df;
        grads[L.b2] += df.colwise().sum();
        Matrix dact = df * p[L.w2].transpose();
        Matrix dpre = dact.array() * lt.pre.unaryExpr(&gelu_grad).array();
        grads[L.w1].noalias() += lt.b.transpose() * dpre;
        grads[L.b1] += dpre.colwise().sum();
        Matrix db = dpre * p[L.w1].transpose();
        Matrix dx_mid = dx + layer_norm_backward(db, lt.ln2, p[L.ln2_g], grads[L.ln2_g], grads[L.ln2_b]);

        // Attention block.
        Matrix dout = lt.drop1.size() ? Matrix(dx_mid.cwiseProduct(lt.drop1)) : dx_mid;
        grads[L.wo].noalias() += lt.ctx.transpose() * dout;
        grads[L.bo] += dout.colwise().sum();
        Matrix dctx = dout * p[L.wo].transpose();
        Matrix dq = Matrix::Zero(dctx.rows(), h);
        Matrix dk = Matrix::Zero(dctx.rows(), h);
        Matrix dv = Matrix::Zero(dctx.rows(), h);
        std::size_t pi = 0;
        for (std::size_t r = 0; r < rows; ++r) {
            const int off = t.offsets[r];
            const int n = t.lengths[r];
            for (int hh = 0; hh < heads; ++hh, ++pi) {
                const Matrix& prob = lt.probs[pi];
                auto dc = dctx.block(off, hh * d, n, d);
                Matrix dprob = dc * lt.v.block(off, hh * d, n, d).transpose();
                dv.block(off, hh * d, n, d) = prob.transpose() * dc;
                Eigen::VectorXd dot = (dprob.array() * prob.array()).rowwise().sum();
                Matrix ds = (prob.array() * (dprob.colwise() - dot).array()) * scale;
                dq.block(off, hh * d, n, d) = ds * lt.k.block(off, hh * d, n, d);
                dk.block(off, hh * d, n, d) = ds.transpose() * lt.q.block(off, hh * d, n, d);
            }
        }
        grads[L.wq].noalias() += lt.a.transpose() * dq;
        grads[L.wk].noalias() += lt.a.transpose() * dk;
        grads[L.wv].noalias() += lt.a.transpose() * dv;
        grads[L.bq] += dq.colwise().sum();
        grads[L.bk] += dk.colwise().sum();
        grads[L.bv] += dv.colwise().sum();
        Matrix da = dq * p[L.wq].transpose();
        da.noalias() += dk * p[L.wk].transpose();
        da.noalias() += dv * p[L.wv].transpose();
        dx = dx_mid + layer_norm_backward(da, lt.ln1, p[L.ln1_g], grads[L.ln1_g], grads[L.ln1_b]);
    }

    Matrix& dtok = grads[model.token_embedding()];
    Matrix& dpos = grads[model.position_embedding()];
    for (std::size_t i = 0; i < t.ids.size(); ++i) {
        dtok.row(t.ids[i]) += dx.row(static_cast<Eigen::Index>(i));
        dpos.row(t.positions[i]) += dx.row(static_cast<Eigen::Index>(i));
    }
}

// ---------------------------------------------------------------------------
// Losses

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double clamp_probability(double p) {
    return std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
}

double binary_cross_entropy(double probability, int label) {
    const double p = clamp_probability(probability);
    return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

namespace {

// d/dz of BCE(sigmoid(z)) respecting the clamp (flat outside it).
double bce_logit_grad(double z, int label) {
    const double p = sigmoid(z);
    if (p < kProbabilityEpsilon || p > 1.0 - kProbabilityEpsilon) return 0.0;
    return p - label;
}

std::vector<int> masked_rows(const EncodedBatch& encoded, const MaskedBatch& batch,
                             std::vector<int>* row_of = nullptr) {
    std::vector<int> out;
    for (int r = 0; r < batch.rows(); ++r)
        for (int c = 0; c < encoded.lengths[static_cast<std::size_t>(r)]; ++c)
            if (batch.mask_positions(r, c)) {
                out.push_back(encoded.offsets[static_cast<std::size_t>(r)] + c);
                if (row_of) row_of->push_back(r);
            }
    return out;
}

int label_value(const std::optional<DemClass>& label) {
    if (!label) fail(ErrorCode::missing_label, "demographic label missing for a batch row");
    return static_cast<int>(*label);
}

// Mean BCE of a single-logit head over the selected state rows; accumulates
// gradients into the sink.
double binary_head_loss(const Model& model, Model::HeadIndex head, const Matrix& states,
                        const std::vector<int>& state_rows, const std::vector<int>& labels,
                        const LossGrad& grad, const std::vector<int>& packed_rows) {
    const ParamSet& p = model.params();
    const auto n = static_cast<double>(state_rows.size());
    double total = 0.0;
    for (std::size_t i = 0; i < state_rows.size(); ++i) {
        const auto row = states.row(state_rows[i]);
        const double z = row.dot(p[head.w].col(0)) + p[head.b](0, 0);
        total += binary_cross_entropy(sigmoid(z), labels[i]);
        if (grad.d_states || grad.grads) {
            const double g = grad.scale * bce_logit_grad(z, labels[i]) / n;
            if (grad.grads) {
                (*grad.grads)[head.w].col(0) += g * row.transpose();
                (*grad.grads)[head.b](0, 0) += g;
            }
            if (grad.d_states) grad.d_states->row(packed_rows[i]) += g * p[head.w].col(0).transpose();
        }
    }
    return total / n;
}

// Mean softmax cross-entropy of `head` over the selected rows of `states`.
double softmax_head_loss(const Model& model, Model::HeadIndex head, const Matrix& states,
                         const std::vector<int>& state_rows, const std::vector<int>& targets,
                         const LossGrad& grad, const std::vector<int>& packed_rows) {
    const ParamSet& p = model.params();
    Matrix selected(static_cast<Eigen::Index>(state_rows.size()), states.cols());
    for (std::size_t i = 0; i < state_rows.size(); ++i)
        selected.row(static_cast<Eigen::Index>(i)) = states.row(state_rows[i]);
    Matrix logits = (selected * p[head.w]).rowwise() + p[head.b].row(0);
    const auto n = static_cast<double>(state_rows.size());
    double total = 0.0;
    Matrix dlogits(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        RowVector e = (logits.row(i).array() - mx).exp();
        const double sum = e.sum();
        RowVector prob = e / sum;
        const int target = targets[static_cast<std::size_t>(i)];
        const double p_target = clamp_probability(prob(target));
        total -= std::log(p_target);
        dlogits.row(i) = prob;
        dlogits(i, target) -= 1.0;
    }
    if (grad.d_states || grad.grads) {
        dlogits *= grad.scale / n;
        if (grad.grads) {
            (*grad.grads)[head.w].noalias() += selected.transpose() * dlogits;
            (*grad.grads)[head.b] += dlogits.colwise().sum();
        }
        if (grad.d_states) {
            Matrix dsel = dlogits * p[head.w].transpose();
            for (std::size_t i = 0; i < packed_rows.size(); ++i)
                grad.d_states->row(packed_rows[i]) += dsel.row(static_cast<Eigen::Index>(i));
        }
    }
    return total / n;
}

}  // namespace

double mlm_loss(const Model& model, const EncodedBatch& encoded, const MaskedBatch& batch,
                const LossGrad& grad) {
    const auto rows = masked_rows(encoded, batch);
    if (rows.empty()) fail(ErrorCode::invalid_argument, "mlm_loss needs at least one masked position");
    std::vector<int> targets;
    for (int r = 0; r < batch.rows(); ++r)
        for (int c = 0; c < encoded.lengths[static_cast<std::size_t>(r)]; ++c)
            if (batch.mask_positions(r, c)) targets.push_back(batch.original_ids(r, c));
    return softmax_head_loss(model, model.mlm_head(), encoded.token_states, rows, targets, grad, rows);
}

double dem_loss_seq(const Model& model, const EncodedBatch& encoded,
                    std::span<const std::optional<DemClass>> labels, const LossGrad& grad) {
    if (static_cast<int>(labels.size()) != encoded.rows())
        fail(ErrorCode::invalid_argument, "label count does not match batch rows");
    std::vector<int> state_rows, packed_rows, y;
    for (int r = 0; r < encoded.rows(); ++r) {
        y.push_back(label_value(labels[static_cast<std::size_t>(r)]));
        state_rows.push_back(r);
        packed_rows.push_back(encoded.offsets[static_cast<std::size_t>(r)]);
    }
    if (y.empty()) fail(ErrorCode::invalid_argument, "dem_loss_seq on an empty batch");
    return binary_head_loss(model, model.dem_seq_head(), encoded.sequence_state, state_rows, y, grad,
                            packed_rows);
}

double dem_loss_tok(const Model& model, const EncodedBatch& encoded, const MaskedBatch& batch,
                    std::span<const std::optional<DemClass>> labels, const LossGrad& grad) {
    if (static_cast<int>(labels.size()) != encoded.rows())
        fail(ErrorCode::invalid_argument, "label count does not match batch rows");
    std::vector<int> row_of;
    const auto rows = masked_rows(encoded, batch, &row_of);
    if (rows.empty()) fail(ErrorCode::invalid_argument, "dem_loss_tok needs at least one masked position");
    std::vector<int> y;
    for (int r : row_of) y.push_back(label_value(labels[static_cast<std::size_t>(r)]));
    return binary_head_loss(model, model.dem_tok_head(), encoded.token_states, rows, y, grad, rows);
}

double classification_loss(const Model& model, const EncodedBatch& encoded, std::span<const int> labels,
                           const LossGrad& grad) {
    if (static_cast<int>(labels.size()) != encoded.rows())
        fail(ErrorCode::invalid_argument, "label count does not match batch rows");
    const int k = model.classifier_classes();
    std::vector<int> state_rows, packed_rows, y(labels.begin(), labels.end());
    for (int r = 0; r < encoded.rows(); ++r) {
        if (y[static_cast<std::size_t>(r)] < 0 || y[static_cast<std::size_t>(r)] >= k)
            fail(ErrorCode::label_cardinality, "class label outside classifier range");
        state_rows.push_back(r);
        packed_rows.push_back(encoded.offsets[static_cast<std::size_t>(r)]);
    }
    return softmax_head_loss(model, model.classifier_head(), encoded.sequence_state, state_rows, y, grad,
                             packed_rows);
}

Matrix classifier_logits(const Model& model, const EncodedBatch& encoded) {
    const auto head = model.classifier_head();
    return (encoded.sequence_state * model.params()[head.w]).rowwise() + model.params()[head.b].row(0);
}

}  // namespace demspec

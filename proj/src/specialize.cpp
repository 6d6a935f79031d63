#include "demspec/specialize.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "demspec/error.hpp"
#include "demspec/optim.hpp"
#include "demspec/rng.hpp"
#include "demspec/training.hpp"

namespace demspec {

using nlohmann::json;

void SpecializationConfig::validate() const {
    require(method != Method::vanilla, ErrorCode::invalid_argument,
            "specialization method must be MLM, DS-Seq or DS-Tok");
    require(mask_rate > 0.0 && mask_rate < 1.0, ErrorCode::invalid_argument, "mask_rate must be in (0, 1)");
    require(epochs >= 0, ErrorCode::invalid_argument, "epochs must be >= 0");
    require(batch_size >= 1, ErrorCode::invalid_argument, "batch_size must be >= 1");
    require(!lr_grid.empty(), ErrorCode::invalid_argument, "lr_grid must be non-empty");
    for (double lr : lr_grid)
        require(std::isfinite(lr) && lr > 0.0, ErrorCode::invalid_argument, "learning rates must be positive");
    require(patience >= 1, ErrorCode::invalid_argument, "patience must be >= 1");
    require(dev_fraction > 0.0 && dev_fraction < 1.0, ErrorCode::invalid_argument,
            "dev_fraction must be in (0, 1)");
    require(weight_decay >= 0.0 && grad_clip >= 0.0 && eta_learning_rate >= 0.0, ErrorCode::invalid_argument,
            "weight_decay, grad_clip and eta_learning_rate must be non-negative");
}

json to_json(const SpecializationConfig& c) {
    return {{"method", to_string(c.method)},
            {"dimension", to_string(c.dimension)},
            {"mask_rate", c.mask_rate},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr_grid", c.lr_grid},
            {"patience", c.patience},
            {"seed", c.seed},
            {"dev_fraction", c.dev_fraction},
            {"weight_decay", c.weight_decay},
            {"grad_clip", c.grad_clip},
            {"eta_learning_rate", c.eta_learning_rate},
            {"bert_replacement", c.bert_replacement}};
}

SpecializationConfig specialization_config_from_json(const json& j, SpecializationConfig c) {
    try {
        if (j.contains("method")) c.method = parse_enum<Method>(j.at("method").get<std::string>());
        if (j.contains("dimension")) c.dimension = parse_enum<Dimension>(j.at("dimension").get<std::string>());
        c.mask_rate = j.value("mask_rate", c.mask_rate);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr_grid = j.value("lr_grid", c.lr_grid);
        c.patience = j.value("patience", c.patience);
        c.seed = j.value("seed", c.seed);
        c.dev_fraction = j.value("dev_fraction", c.dev_fraction);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.grad_clip = j.value("grad_clip", c.grad_clip);
        c.eta_learning_rate = j.value("eta_learning_rate", c.eta_learning_rate);
        c.bert_replacement = j.value("bert_replacement", c.bert_replacement);
    } catch (const json::exception& e) {
        fail(ErrorCode::parse_error, std::string("bad specialization config: ") + e.what());
    }
    c.validate();
    return c;
}

json to_json(const EpochLog& e) {
    return {{"epoch", e.epoch},
            {"lr", e.lr},
            {"mlm_loss", e.mlm_loss},
            {"dem_loss", e.dem_loss ? json(*e.dem_loss) : json(nullptr)},
            {"eta_mlm", e.eta_mlm},
            {"eta_dem", e.eta_dem},
            {"dev_objective", e.dev_objective}};
}

void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> log) {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
    for (const auto& e : log) out << to_json(e).dump() << '\n';
}

namespace {

enum Stream : std::uint64_t { kDevSplit = 1, kDevMask = 2, kTrial = 3, kShuffle = 4, kMask = 5, kDropout = 6 };

struct DevLosses {
    double mlm = 0.0;
    double dem = 0.0;
};

class Trainer {
public:
    Trainer(const SpecializationConfig& config, const EncodedCorpus& train, const EncodedCorpus& dev)
        : config_(config), train_(train), dev_(dev) {
        // Dev batches and their masks are fixed so epoch objectives are comparable.
        const auto batches = make_batches(dev.size(), static_cast<std::size_t>(config.batch_size), 0, false);
        for (std::size_t i = 0; i < batches.size(); ++i) {
            const IdMatrix ids = batch_ids(dev, batches[i]);
            dev_batches_.push_back(mask_tokens(ids, config.mask_rate, derive_seed(dev_mask_seed(), i)));
            dev_rows_.push_back(batches[i]);
        }
        std::size_t masked = 0;
        for (const auto& b : dev_batches_) masked += static_cast<std::size_t>(b.masked_count());
        require(masked > 0, ErrorCode::insufficient_data, "development slice has no masked positions");
    }

    bool uses_dem() const { return config_.method != Method::mlm; }

    std::uint64_t dev_mask_seed() const { return derive_seed(config_.seed, kDevMask); }

    DevLosses dev_losses(const Model& model) const {
        double mlm_sum = 0.0, dem_sum = 0.0, mlm_n = 0.0, dem_n = 0.0;
        for (std::size_t i = 0; i < dev_batches_.size(); ++i) {
            const auto& batch = dev_batches_[i];
            const double masked = static_cast<double>(batch.masked_count());
            if (masked == 0.0) continue;
            const EncodedBatch enc = encode(model, batch, Mode::eval);
            mlm_sum += masked * mlm_loss(model, enc, batch);
            mlm_n += masked;
            if (!uses_dem()) continue;
            const auto labels = labels_for(dev_, dev_rows_[i]);
            if (config_.method == Method::ds_seq) {
                dem_sum += static_cast<double>(labels.size()) * dem_loss_seq(model, enc, labels);
                dem_n += static_cast<double>(labels.size());
            } else {
                dem_sum += masked * dem_loss_tok(model, enc, batch, labels);
                dem_n += masked;
            }
        }
        return {mlm_sum / mlm_n, uses_dem() ? dem_sum / dem_n : 0.0};
    }

    double objective(const DevLosses& d, const UncertaintyState& eta) const {
        return uses_dem() ? combined_loss(d.mlm, d.dem, eta).value : d.mlm;
    }

    // Runs one learning-rate trial from `start`; returns the best snapshot.
    struct Outcome {
        Model model;
        UncertaintyState eta;
        TrialSummary summary;
    };

    Outcome run(const Model& start, double lr, std::size_t trial_index, std::vector<EpochLog>& log) const {
        const std::uint64_t trial_seed = derive_seed(derive_seed(config_.seed, kTrial), trial_index);
        Model model = start;
        ParamSet eta_params;
        eta_params.add("eta.mlm", 1, 1, false);
        eta_params.add("eta.dem", 1, 1, false);
        ParamSet grads = model.params().zeros_like();
        ParamSet eta_grads = eta_params.zeros_like();
        Adam adam(AdamOptions{lr, 0.9, 0.999, 1e-8, config_.weight_decay});
        const double eta_lr = config_.eta_learning_rate > 0.0 ? config_.eta_learning_rate : lr;
        Adam eta_adam(AdamOptions{eta_lr, 0.9, 0.999, 1e-8, 0.0});
        Rng dropout_rng(derive_seed(trial_seed, kDropout));

        auto current_eta = [&] {
            return UncertaintyState{eta_params[0](0, 0), eta_params[1](0, 0)};
        };

        EarlyStopping stopper(config_.patience, EarlyStopping::Goal::minimize);
        Outcome best{model, current_eta(), {lr, objective(dev_losses(model), current_eta()), 0, 0}};

        for (int epoch = 1; epoch <= config_.epochs; ++epoch) {
            const auto epoch_seed = derive_seed(trial_seed, static_cast<std::uint64_t>(epoch));
            const auto batches = make_batches(train_.size(), static_cast<std::size_t>(config_.batch_size),
                                              derive_seed(epoch_seed, kShuffle), true);
            double mlm_sum = 0.0, dem_sum = 0.0;
            int steps = 0;
            for (std::size_t b = 0; b < batches.size(); ++b) {
                const IdMatrix ids = batch_ids(train_, batches[b]);
                MaskOptions opts{config_.bert_replacement, model.config().vocab_size};
                const MaskedBatch batch =
                    mask_tokens(ids, config_.mask_rate, derive_seed(derive_seed(epoch_seed, kMask), b), opts);
                if (batch.masked_count() == 0) continue;

                Trace trace;
                const EncodedBatch enc = encode(model, batch, Mode::train, &dropout_rng, &trace);
                grads.set_zero();
                eta_grads.set_zero();
                Matrix d_states = Matrix::Zero(enc.token_states.rows(), enc.token_states.cols());
                const UncertaintyState eta = current_eta();

                double l_mlm = 0.0, l_dem = 0.0;
                if (!uses_dem()) {
                    l_mlm = mlm_loss(model, enc, batch, {&d_states, &grads, 1.0});
                } else {
                    l_mlm = mlm_loss(model, enc, batch, {&d_states, &grads, task_weight(eta.eta_mlm)});
                    const auto labels = labels_for(train_, batches[b]);
                    const LossGrad dem_grad{&d_states, &grads, task_weight(eta.eta_dem)};
                    l_dem = config_.method == Method::ds_seq ? dem_loss_seq(model, enc, labels, dem_grad)
                                                             : dem_loss_tok(model, enc, batch, labels, dem_grad);
                    const CombinedLoss c = combined_loss(l_mlm, l_dem, eta);
                    eta_grads[0](0, 0) = c.d_eta_mlm;
                    eta_grads[1](0, 0) = c.d_eta_dem;
                }
                require(std::isfinite(l_mlm) && std::isfinite(l_dem), ErrorCode::non_finite,
                        "specialization loss became non-finite");
                encode_backward(model, trace, d_states, grads);
                if (config_.grad_clip > 0.0) clip_grad_norm(grads, config_.grad_clip);
                adam.step(slots_for(model.params(), grads));
                if (uses_dem()) eta_adam.step(slots_for(eta_params, eta_grads));
                mlm_sum += l_mlm;
                dem_sum += l_dem;
                ++steps;
            }
            require(model.params().all_finite(), ErrorCode::non_finite, "parameters became non-finite");

            const UncertaintyState eta = current_eta();
            const double dev = objective(dev_losses(model), eta);
            EpochLog entry;
            entry.epoch = epoch;
            entry.lr = lr;
            entry.mlm_loss = steps ? mlm_sum / steps : 0.0;
            if (uses_dem()) entry.dem_loss = steps ? dem_sum / steps : 0.0;
            entry.eta_mlm = eta.eta_mlm;
            entry.eta_dem = eta.eta_dem;
            entry.dev_objective = dev;
            log.push_back(entry);

            const bool stop = stopper.update(dev);
            best.summary.epochs_run = epoch;
            if (stopper.improved() && dev < best.summary.best_dev_objective) {
                best.model = model;
                best.eta = eta;
                best.summary.best_dev_objective = dev;
                best.summary.best_epoch = epoch;
            }
            if (stop) break;
        }
        return best;
    }

private:
    static std::vector<std::optional<DemClass>> labels_for(const EncodedCorpus& corpus,
                                                           std::span<const std::size_t> rows) {
        std::vector<std::optional<DemClass>> out;
        for (auto r : rows) out.push_back(corpus.demographics[r]);
        return out;
    }

    const SpecializationConfig& config_;
    const EncodedCorpus& train_;
    const EncodedCorpus& dev_;
    std::vector<MaskedBatch> dev_batches_;
    std::vector<std::vector<std::size_t>> dev_rows_;
};

}  // namespace

SpecializationResult specialize(const Checkpoint& base, std::span<const LabeledDocument> corpus,
                                const SpecializationConfig& config) {
    config.validate();
    require(corpus.size() >= 2, ErrorCode::insufficient_data,
            "specialization needs at least 2 documents (one for the development slice)");
    if (config.method != Method::mlm) {
        for (const auto& d : corpus)
            if (!d.demographic(config.dimension))
                fail(ErrorCode::missing_label, "document " + d.id + " has no " + to_string(config.dimension) +
                                                   " label, required by " + to_string(config.method));
    }

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng split_rng(derive_seed(config.seed, kDevSplit));
    split_rng.shuffle(std::span(order));
    const auto n_dev = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.dev_fraction * static_cast<double>(corpus.size()))));
    std::vector<LabeledDocument> dev_docs, train_docs;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_dev ? dev_docs : train_docs).push_back(corpus[order[i]]);

    const int max_len = base.model.config().max_seq_len;
    const std::optional<Dimension> dim = config.dimension;
    const EncodedCorpus train = encode_corpus(base.tokenizer, train_docs, max_len, dim);
    const EncodedCorpus dev = encode_corpus(base.tokenizer, dev_docs, max_len, dim);

    Model start = base.model;
    start.drop_classifier();
    const Trainer trainer(config, train, dev);

    SpecializationResult result;
    result.initial_dev_mlm = trainer.dev_losses(start).mlm;
    std::optional<std::size_t> winner;
    std::vector<Trainer::Outcome> outcomes;
    for (std::size_t t = 0; t < config.lr_grid.size(); ++t) {
        outcomes.push_back(trainer.run(start, config.lr_grid[t], t, result.log));
        result.trials.push_back(outcomes.back().summary);
        if (!winner || outcomes[t].summary.best_dev_objective < outcomes[*winner].summary.best_dev_objective)
            winner = t;
        // Keep only the current winner's parameters in memory.
        for (std::size_t k = 0; k < outcomes.size(); ++k)
            if (k != *winner) outcomes[k].model = Model();
    }

    Trainer::Outcome& best = outcomes[*winner];
    result.chosen_lr = best.summary.lr;
    result.eta = best.eta;
    result.final_dev_mlm = trainer.dev_losses(best.model).mlm;
    result.checkpoint.model = std::move(best.model);
    result.checkpoint.tokenizer = base.tokenizer;
    result.checkpoint.metadata = base.metadata;
    result.checkpoint.metadata["specialization"] = {{"config", to_json(config)},
                                                    {"chosen_lr", result.chosen_lr},
                                                    {"eta_mlm", result.eta.eta_mlm},
                                                    {"eta_dem", result.eta.eta_dem},
                                                    {"corpus_digest", corpus_digest(corpus)},
                                                    {"base_digest", base.digest()}};
    return result;
}

}  // namespace demspec

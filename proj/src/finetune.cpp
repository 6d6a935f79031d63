#include "demspec/finetune.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>

#include "demspec/error.hpp"
#include "demspec/model.hpp"
#include "demspec/optim.hpp"
#include "demspec/rng.hpp"
#include "demspec/training.hpp"

namespace demspec {

using nlohmann::json;

void FineTuneConfig::validate() const {
    require(epochs >= 0, ErrorCode::invalid_argument, "epochs must be >= 0");
    require(batch_size >= 1, ErrorCode::invalid_argument, "batch_size must be >= 1");
    require(!lr_grid.empty(), ErrorCode::invalid_argument, "lr_grid must be non-empty");
    for (double lr : lr_grid)
        require(std::isfinite(lr) && lr > 0.0, ErrorCode::invalid_argument, "learning rates must be positive");
    require(patience >= 1, ErrorCode::invalid_argument, "patience must be >= 1");
    require(weight_decay >= 0.0 && grad_clip >= 0.0, ErrorCode::invalid_argument,
            "weight_decay and grad_clip must be non-negative");
}

json to_json(const FineTuneConfig& c) {
    return {{"task", to_string(c.task)},       {"epochs", c.epochs},   {"batch_size", c.batch_size},
            {"lr_grid", c.lr_grid},            {"patience", c.patience}, {"seed", c.seed},
            {"weight_decay", c.weight_decay}, {"grad_clip", c.grad_clip}};
}

FineTuneConfig finetune_config_from_json(const json& j, FineTuneConfig c) {
    try {
        if (j.contains("task")) c.task = parse_enum<Task>(j.at("task").get<std::string>());
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr_grid = j.value("lr_grid", c.lr_grid);
        c.patience = j.value("patience", c.patience);
        c.seed = j.value("seed", c.seed);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.grad_clip = j.value("grad_clip", c.grad_clip);
    } catch (const json::exception& e) {
        fail(ErrorCode::parse_error, std::string("bad fine-tune config: ") + e.what());
    }
    c.validate();
    return c;
}

Sentiment sa_label(int rating) {
    switch (rating) {
        case 1: return Sentiment::negative;
        case 3: return Sentiment::neutral;
        case 5: return Sentiment::positive;
        default:
            fail(ErrorCode::invalid_argument,
                 "rating " + std::to_string(rating) + " has no sentiment class (expected 1, 3 or 5)");
    }
}

std::vector<std::string> task_labels(Task task, Dimension dim, std::span<const LabeledDocument> docs) {
    switch (task) {
        case Task::ac:
            return {std::string(class_label(dim, DemClass::a)), std::string(class_label(dim, DemClass::b))};
        case Task::sa:
            return {"negative", "neutral", "positive"};
        case Task::td: {
            std::set<std::string> topics;
            for (const auto& d : docs)
                if (d.topic) topics.insert(*d.topic);
            return {topics.begin(), topics.end()};
        }
    }
    fail(ErrorCode::invalid_argument, "unknown task");
}

std::optional<int> task_label(const LabeledDocument& doc, Task task, Dimension dim,
                              std::span<const std::string> labels) {
    switch (task) {
        case Task::ac:
            if (auto c = doc.demographic(dim)) return static_cast<int>(*c);
            return std::nullopt;
        case Task::sa:
            if (!doc.rating) return std::nullopt;
            return static_cast<int>(sa_label(*doc.rating));
        case Task::td: {
            if (!doc.topic) return std::nullopt;
            auto it = std::find(labels.begin(), labels.end(), *doc.topic);
            if (it == labels.end())
                fail(ErrorCode::unknown_category, "topic '" + *doc.topic + "' is not a classifier label");
            return static_cast<int>(it - labels.begin());
        }
    }
    return std::nullopt;
}

double macro_f1(std::span<const int> truth, std::span<const int> predicted) {
    require(truth.size() == predicted.size(), ErrorCode::invalid_argument,
            "macro_f1 needs equally many gold and predicted labels");
    require(!truth.empty(), ErrorCode::empty_subset, "macro_f1 of an empty set");
    std::map<int, std::array<double, 3>> counts;  // tp, fp, fn
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == predicted[i]) {
            counts[truth[i]][0] += 1;
        } else {
            counts[predicted[i]][1] += 1;
            counts[truth[i]][2] += 1;
        }
    }
    double sum = 0.0;
    for (const auto& [label, c] : counts) {
        const double denom = 2 * c[0] + c[1] + c[2];
        sum += denom > 0 ? 2 * c[0] / denom : 0.0;
    }
    return sum / static_cast<double>(counts.size());
}

double accuracy(std::span<const int> truth, std::span<const int> predicted) {
    require(truth.size() == predicted.size() && !truth.empty(), ErrorCode::invalid_argument,
            "accuracy needs equally many non-zero labels");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::vector<LabeledDocument> filter_subset(std::span<const LabeledDocument> docs, Subset subset,
                                           Dimension dim) {
    std::vector<LabeledDocument> out;
    for (const auto& d : docs) {
        if (subset == Subset::mixed) {
            out.push_back(d);
            continue;
        }
        const auto c = d.demographic(dim);
        if (c && *c == (subset == Subset::class_a ? DemClass::a : DemClass::b)) out.push_back(d);
    }
    return out;
}

namespace {

constexpr std::size_t kEvalBatch = 64;

std::vector<int> predict_encoded(const Model& model, const EncodedCorpus& corpus) {
    std::vector<int> out;
    out.reserve(corpus.size());
    for (const auto& rows : make_batches(corpus.size(), kEvalBatch, 0, false)) {
        const MaskedBatch batch = plain_batch(batch_ids(corpus, rows));
        const Matrix logits = classifier_logits(model, encode(model, batch, Mode::eval));
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            Eigen::Index best = 0;
            logits.row(r).maxCoeff(&best);
            out.push_back(static_cast<int>(best));
        }
    }
    return out;
}

EncodedCorpus labelled(const Tokenizer& tok, std::span<const LabeledDocument> docs, int max_len, Task task,
                       Dimension dim, std::span<const std::string> labels, const char* partition) {
    EncodedCorpus enc = encode_corpus(tok, docs, max_len, dim);
    for (const auto& d : docs) {
        const auto y = task_label(d, task, dim, labels);
        if (!y)
            fail(ErrorCode::missing_label, std::string(partition) + " document " + d.id + " has no " +
                                               to_string(task) + " label");
        enc.labels.push_back(*y);
    }
    return enc;
}

void reset_head(Model& model, Model::HeadIndex head) {
    model.params()[head.w].setZero();
    model.params()[head.b].setZero();
}

}  // namespace

FineTuneResult finetune(const Checkpoint& base, std::span<const LabeledDocument> docs, const CorpusSplit& split,
                        const FineTuneConfig& config) {
    config.validate();
    require(task_of(split.dataset) == config.task, ErrorCode::invalid_argument,
            "split dataset " + to_string(split.dataset) + " does not belong to task " + to_string(config.task));
    const auto train_docs = select_documents(docs, split.train);
    const auto dev_docs = select_documents(docs, split.dev);
    require(!train_docs.empty() && !dev_docs.empty(), ErrorCode::insufficient_data,
            "fine-tuning needs non-empty train and dev partitions");

    const Dimension dim = split.dimension;
    const auto labels = task_labels(config.task, dim, train_docs);
    const int k = num_classes(config.task);
    if (static_cast<int>(labels.size()) != k)
        fail(ErrorCode::label_cardinality, to_string(config.task) + " needs " + std::to_string(k) +
                                                " classes but the training data has " +
                                                std::to_string(labels.size()));
    const int max_len = base.model.config().max_seq_len;
    const EncodedCorpus train = labelled(base.tokenizer, train_docs, max_len, config.task, dim, labels, "train");
    const EncodedCorpus dev = labelled(base.tokenizer, dev_docs, max_len, config.task, dim, labels, "dev");
    std::set<int> present(train.labels.begin(), train.labels.end());
    if (static_cast<int>(present.size()) != k)
        fail(ErrorCode::label_cardinality, "training partition covers " + std::to_string(present.size()) +
                                                " of " + std::to_string(k) + " " + to_string(config.task) +
                                                " classes");

    // Pretraining heads are discarded; the demographic heads restart from zero.
    Model start = base.model;
    reset_head(start, start.dem_seq_head());
    reset_head(start, start.dem_tok_head());
    start.add_classifier(k);

    FineTuneResult result;
    std::optional<Model> best_model;
    double best_f1 = -1.0;
    for (std::size_t t = 0; t < config.lr_grid.size(); ++t) {
        const double lr = config.lr_grid[t];
        const std::uint64_t trial_seed = derive_seed(derive_seed(config.seed, 0xF17E), t);
        Model model = start;
        ParamSet grads = model.params().zeros_like();
        Adam adam(AdamOptions{lr, 0.9, 0.999, 1e-8, config.weight_decay});
        Rng dropout_rng(derive_seed(trial_seed, 1));
        EarlyStopping stopper(config.patience, EarlyStopping::Goal::maximize);
        Model trial_best = model;
        double trial_f1 = macro_f1(dev.labels, predict_encoded(model, dev));

        for (int epoch = 1; epoch <= config.epochs; ++epoch) {
            double loss_sum = 0.0;
            const auto batches = make_batches(train.size(), static_cast<std::size_t>(config.batch_size),
                                              derive_seed(trial_seed, 100 + static_cast<std::uint64_t>(epoch)),
                                              true);
            for (const auto& rows : batches) {
                const MaskedBatch batch = plain_batch(batch_ids(train, rows));
                std::vector<int> y;
                for (auto r : rows) y.push_back(train.labels[r]);
                Trace trace;
                const EncodedBatch enc = encode(model, batch, Mode::train, &dropout_rng, &trace);
                grads.set_zero();
                Matrix d_states = Matrix::Zero(enc.token_states.rows(), enc.token_states.cols());
                const double loss = classification_loss(model, enc, y, {&d_states, &grads, 1.0});
                require(std::isfinite(loss), ErrorCode::non_finite, "fine-tuning loss became non-finite");
                encode_backward(model, trace, d_states, grads);
                if (config.grad_clip > 0.0) clip_grad_norm(grads, config.grad_clip);
                adam.step(slots_for(model.params(), grads));
                loss_sum += loss;
            }
            const double f1 = macro_f1(dev.labels, predict_encoded(model, dev));
            result.log.push_back({lr, epoch, loss_sum / static_cast<double>(batches.size()), f1});
            const bool stop = stopper.update(f1);
            if (f1 > trial_f1) {
                trial_f1 = f1;
                trial_best = model;
            }
            if (stop) break;
        }
        if (trial_f1 > best_f1) {
            best_f1 = trial_f1;
            best_model = std::move(trial_best);
            result.chosen_lr = lr;
        }
    }

    result.dev_f1 = best_f1;
    result.classifier.model = std::move(*best_model);
    result.classifier.tokenizer = base.tokenizer;
    result.classifier.metadata = base.metadata;
    result.classifier.metadata["finetune"] = {{"task", to_string(config.task)},
                                              {"dataset", to_string(split.dataset)},
                                              {"dimension", to_string(dim)},
                                              {"labels", labels},
                                              {"config", to_json(config)},
                                              {"chosen_lr", result.chosen_lr},
                                              {"dev_f1", result.dev_f1},
                                              {"corpus_digest", split.corpus_digest},
                                              {"base_digest", base.digest()}};
    return result;
}

std::vector<int> predict(const Checkpoint& classifier, std::span<const LabeledDocument> docs) {
    require(classifier.model.has_classifier(), ErrorCode::invalid_argument,
            "checkpoint has no classification head");
    return predict_encoded(classifier.model,
                           encode_corpus(classifier.tokenizer, docs, classifier.model.config().max_seq_len,
                                         std::nullopt));
}

Evaluation evaluate(const Checkpoint& classifier, std::span<const LabeledDocument> docs, Subset subset) {
    const auto& meta = classifier.metadata;
    require(meta.contains("finetune"), ErrorCode::invalid_argument,
            "checkpoint is not a fine-tuned classifier");
    const auto& ft = meta.at("finetune");
    const Task task = parse_enum<Task>(ft.at("task").get<std::string>());
    const Dimension dim = parse_enum<Dimension>(ft.at("dimension").get<std::string>());
    const auto labels = ft.at("labels").get<std::vector<std::string>>();

    const auto selected = filter_subset(docs, subset, dim);
    if (selected.empty())
        fail(ErrorCode::empty_subset, "no " + to_string(subset) + " documents to evaluate");
    std::vector<int> truth;
    for (const auto& d : selected) {
        const auto y = task_label(d, task, dim, labels);
        if (!y) fail(ErrorCode::missing_label, "test document " + d.id + " has no " + to_string(task) + " label");
        truth.push_back(*y);
    }
    const auto predicted = predict(classifier, selected);
    return {macro_f1(truth, predicted), accuracy(truth, predicted), selected.size()};
}

void ResultRecord::validate() const {
    require(std::isfinite(f1) && f1 >= 0.0 && f1 <= 1.0, ErrorCode::invalid_argument, "f1 must be in [0, 1]");
    require((method == Method::vanilla) == (spec_domain == SpecDomain::none), ErrorCode::invalid_argument,
            "spec_domain must be none exactly for vanilla results");
    require(task_of(dataset) == task, ErrorCode::invalid_argument, "dataset does not match task");
}

json to_json(const ResultRecord& r) {
    return {{"country", r.country},
            {"language", r.language},
            {"task", to_string(r.task)},
            {"dataset", to_string(r.dataset)},
            {"method", to_string(r.method)},
            {"dimension", to_string(r.dimension)},
            {"base_model", to_string(r.base_model)},
            {"spec_domain", to_string(r.spec_domain)},
            {"subset", to_string(r.subset)},
            {"seed", r.seed},
            {"f1", r.f1},
            {"corpus_digest", r.corpus_digest},
            {"cell_id", r.cell_id}};
}

ResultRecord result_record_from_json(const json& j) {
    ResultRecord r;
    try {
        r.country = j.at("country").get<std::string>();
        r.language = j.at("language").get<std::string>();
        r.task = parse_enum<Task>(j.at("task").get<std::string>());
        r.dataset = parse_enum<Dataset>(j.at("dataset").get<std::string>());
        r.method = parse_enum<Method>(j.at("method").get<std::string>());
        r.dimension = parse_enum<Dimension>(j.at("dimension").get<std::string>());
        r.base_model = parse_enum<BaseModel>(j.at("base_model").get<std::string>());
        r.spec_domain = parse_enum<SpecDomain>(j.at("spec_domain").get<std::string>());
        r.subset = parse_subset(j.at("subset").get<std::string>());
        r.seed = j.at("seed").get<std::uint64_t>();
        r.f1 = j.at("f1").get<double>();
        r.corpus_digest = j.value("corpus_digest", "");
        r.cell_id = j.value("cell_id", "");
    } catch (const json::exception& e) {
        fail(ErrorCode::parse_error, std::string("bad result record: ") + e.what());
    }
    r.validate();
    return r;
}

}  // namespace demspec

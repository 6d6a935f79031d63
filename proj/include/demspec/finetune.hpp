#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "demspec/checkpoint.hpp"
#include "demspec/corpus.hpp"
#include "demspec/types.hpp"

namespace demspec {

struct FineTuneConfig {
    Task task = Task::sa;
    int epochs = 20;
    int batch_size = 32;
    std::vector<double> lr_grid = {5e-5, 1e-5, 5e-6, 1e-6};
    int patience = 5;
    std::uint64_t seed = 0;

    double weight_decay = 0.0;
    double grad_clip = 1.0;  // 0 disables clipping

    void validate() const;
};

nlohmann::json to_json(const FineTuneConfig& c);
FineTuneConfig finetune_config_from_json(const nlohmann::json& j, FineTuneConfig base = {});

Sentiment sa_label(int rating);

// Class names of a task in label-index order. TD topics are discovered from
// the documents (sorted by name); AC uses the dimension's class labels.
std::vector<std::string> task_labels(Task task, Dimension dim, std::span<const LabeledDocument> docs);

// Label index of one document; nullopt when the document lacks the label.
std::optional<int> task_label(const LabeledDocument& doc, Task task, Dimension dim,
                              std::span<const std::string> labels);

struct FineTuneEpoch {
    double lr = 0.0;
    int epoch = 0;
    double train_loss = 0.0;
    double dev_f1 = 0.0;
};

struct FineTuneResult {
    Checkpoint classifier;
    std::vector<FineTuneEpoch> log;
    double chosen_lr = 0.0;
    double dev_f1 = 0.0;
};

// Trains a fresh classification head plus the encoder on split.train,
// selecting the epoch and learning rate by dev macro-F1.
FineTuneResult finetune(const Checkpoint& base, std::span<const LabeledDocument> docs,
                        const CorpusSplit& split, const FineTuneConfig& config);

// Argmax class per document (eval mode, deterministic).
std::vector<int> predict(const Checkpoint& classifier, std::span<const LabeledDocument> docs);

// Macro-averaged F1 over the union of gold and predicted labels.
double macro_f1(std::span<const int> truth, std::span<const int> predicted);
double accuracy(std::span<const int> truth, std::span<const int> predicted);

// Documents of `docs` belonging to the subset (class-A-only, class-B-only or all).
std::vector<LabeledDocument> filter_subset(std::span<const LabeledDocument> docs, Subset subset,
                                           Dimension dim);

struct Evaluation {
    double f1 = 0.0;
    double accuracy = 0.0;
    std::size_t documents = 0;
};

// Macro-F1 of a fine-tuned classifier on the subset of `docs`. The task,
// dimension and label names are read from the classifier's metadata.
Evaluation evaluate(const Checkpoint& classifier, std::span<const LabeledDocument> docs, Subset subset);

struct ResultRecord {
    std::string country;
    std::string language;
    Task task = Task::sa;
    Dataset dataset = Dataset::sa;
    Method method = Method::vanilla;
    Dimension dimension = Dimension::gender;
    BaseModel base_model = BaseModel::multilingual;
    SpecDomain spec_domain = SpecDomain::none;
    Subset subset = Subset::mixed;
    std::uint64_t seed = 0;
    double f1 = 0.0;
    std::string corpus_digest;
    std::string cell_id;

    void validate() const;
};

nlohmann::json to_json(const ResultRecord& r);
ResultRecord result_record_from_json(const nlohmann::json& j);

}  // namespace demspec

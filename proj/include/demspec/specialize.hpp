#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "demspec/checkpoint.hpp"
#include "demspec/corpus.hpp"
#include "demspec/types.hpp"
#include "demspec/uncertainty.hpp"

namespace demspec {

struct SpecializationConfig {
    Method method = Method::mlm;
    Dimension dimension = Dimension::gender;
    double mask_rate = 0.15;
    int epochs = 30;
    int batch_size = 32;
    std::vector<double> lr_grid = {5e-5, 1e-5, 1e-6};
    int patience = 3;
    std::uint64_t seed = 0;

    double dev_fraction = 0.05;
    double weight_decay = 0.0;
    double grad_clip = 1.0;             // 0 disables clipping
    double eta_learning_rate = 0.0;     // 0 uses the trial learning rate
    bool bert_replacement = false;

    void validate() const;
};

nlohmann::json to_json(const SpecializationConfig& c);
SpecializationConfig specialization_config_from_json(const nlohmann::json& j,
                                                     SpecializationConfig base = {});

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double mlm_loss = 0.0;                // mean training loss over the epoch
    std::optional<double> dem_loss;       // absent for MLM-only
    double eta_mlm = 0.0;
    double eta_dem = 0.0;
    double dev_objective = 0.0;
};

nlohmann::json to_json(const EpochLog& e);

struct TrialSummary {
    double lr = 0.0;
    double best_dev_objective = 0.0;
    int best_epoch = 0;
    int epochs_run = 0;
};

struct SpecializationResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;            // all trials, in grid order
    std::vector<TrialSummary> trials;
    double chosen_lr = 0.0;
    UncertaintyState eta;
    double initial_dev_mlm = 0.0;         // held-out MLM loss of the base model
    double final_dev_mlm = 0.0;           // held-out MLM loss of the returned model
};

// Intermediate training of `base` on `corpus`. The base checkpoint is not modified.
SpecializationResult specialize(const Checkpoint& base, std::span<const LabeledDocument> corpus,
                                const SpecializationConfig& config);

void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> log);

}  // namespace demspec

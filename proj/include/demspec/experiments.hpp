#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "demspec/corpus.hpp"
#include "demspec/finetune.hpp"
#include "demspec/model.hpp"
#include "demspec/specialize.hpp"
#include "demspec/types.hpp"

namespace demspec {

// Axes of an experiment grid. `datasets` holds the evaluation datasets
// (AC-SA, AC-TD, SA, TD). Vanilla cells ignore `spec_domains`; attribute
// classification datasets are evaluated on the mixed subset only.
struct ExperimentGrid {
    std::vector<Method> methods;
    std::vector<Dimension> dimensions;
    std::vector<std::string> countries;
    std::vector<BaseModel> base_models;
    std::vector<SpecDomain> spec_domains;
    std::vector<Dataset> datasets;
    std::vector<Subset> subsets = {Subset::class_a, Subset::class_b, Subset::mixed};
    std::vector<std::uint64_t> seeds = {0, 1, 2};

    void validate() const;
};

nlohmann::json to_json(const ExperimentGrid& g);
ExperimentGrid experiment_grid_from_json(const nlohmann::json& j);

struct CountryData {
    std::string language;
    std::filesystem::path corpus;  // fine-tuning corpus (train/dev/test are split from it)
    // Specialization corpus per domain. When it is the fine-tuning corpus
    // itself, only the split's specialization partition is used.
    std::map<SpecDomain, std::filesystem::path> specialization;
    // Per-country base checkpoints (e.g. monolingual models); overrides Registry::base_models.
    std::map<BaseModel, std::string> base_models;
};

// Resolves grid axes to concrete corpora, base checkpoints and configs.
// A base model is a checkpoint directory or "fresh": a randomly initialised
// encoder whose tokenizer is built from `tokenizer_corpora` when given, else
// from the fine-tuning corpus of the country (monolingual) or of all
// countries (multilingual).
struct Registry {
    std::map<std::string, CountryData> countries;
    std::map<BaseModel, std::string> base_models;
    EncoderConfig fresh_encoder;
    std::size_t tokenizer_vocab = 8000;
    std::vector<std::filesystem::path> tokenizer_corpora;
    std::uint64_t fresh_seed = 0;
    SpecializationConfig specialization;
    FineTuneConfig finetune;
    SplitOptions split;
    std::size_t specialization_per_group = 0;  // 0 uses every labelled document
};

// Relative paths in the registry resolve against `base_dir`.
Registry registry_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
Registry load_registry(const std::filesystem::path& path);

struct GridCell {
    std::string country;
    Dataset dataset = Dataset::sa;
    Dimension dimension = Dimension::gender;
    BaseModel base_model = BaseModel::multilingual;
    Method method = Method::vanilla;
    SpecDomain spec_domain = SpecDomain::none;
    std::uint64_t seed = 0;
    std::vector<Subset> subsets;

    std::string describe() const;
};

std::vector<GridCell> expand_grid(const ExperimentGrid& grid);

struct CellFailure {
    std::string cell;
    ErrorCode code = ErrorCode::invalid_argument;
    std::string message;
};

nlohmann::json to_json(const CellFailure& f);

struct GridStats {
    std::size_t cells = 0;
    std::size_t skipped = 0;   // already complete in the results store
    std::size_t executed = 0;  // completed in this run
    std::size_t failed = 0;
    std::size_t trials = 0;    // specialization + fine-tuning learning-rate trials run
    std::vector<CellFailure> failures;
};

struct GridOptions {
    std::filesystem::path results;    // JSONL store, appended to
    std::filesystem::path work_dir;   // specialization cache; empty disables it
    int workers = 1;                  // >1 forks worker processes
    std::function<void(const std::string&)> progress;
};

struct GridRun {
    std::vector<ResultRecord> records;  // the whole store after the run
    GridStats stats;
};

// Runs every cell not yet complete in the results store. A failing cell is
// reported and skipped; the rest of the grid continues.
GridRun run_grid(const ExperimentGrid& grid, const Registry& registry, const GridOptions& options);

std::vector<ResultRecord> read_results(const std::filesystem::path& path);
void append_result(const std::filesystem::path& path, const ResultRecord& record);

// Chooses baseline records and the cells compared against them. Cells and
// baselines pair up when country, dataset, dimension, subset and base model
// agree (and, when match_method is set, the method too).
struct BaselineSelector {
    std::string name;
    std::function<bool(const ResultRecord&)> is_baseline;
    std::function<bool(const ResultRecord&)> is_cell;
    bool match_method = false;
};

BaselineSelector versus_vanilla();
BaselineSelector versus_in_domain();

struct DeltaRow {
    std::string country;
    Dataset dataset = Dataset::sa;
    Dimension dimension = Dimension::gender;
    Subset subset = Subset::mixed;
    BaseModel base_model = BaseModel::multilingual;
    Method method = Method::vanilla;
    SpecDomain spec_domain = SpecDomain::none;
    double f1 = 0.0;           // seed-mean, F1 points
    double baseline_f1 = 0.0;  // seed-mean, F1 points
    double delta = 0.0;        // f1 - baseline_f1
    std::size_t seeds = 0;
};

struct DeltaTable {
    std::vector<DeltaRow> rows;
    std::vector<std::string> unpaired;
};

// Delta in F1 points (records hold F1 in [0, 1]) between each cell's seed
// average and its baseline's seed average.
DeltaTable delta_table(std::span<const ResultRecord> records, const BaselineSelector& selector);

// Fails with DIGEST_MISMATCH when one country's records come from different corpora.
void check_consistent_digests(std::span<const ResultRecord> records);

// Seed-mean F1 tables (one per dimension and base model) and delta tables
// against vanilla and in-domain baselines. Returns the written file paths.
std::vector<std::filesystem::path> write_report(std::span<const ResultRecord> records,
                                                const std::filesystem::path& out_dir);

}  // namespace demspec

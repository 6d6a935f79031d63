#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "demspec/types.hpp"

namespace demspec {

enum class Gender { f, m };
enum class AgeGroup { u35, o45 };

struct LabeledDocument {
    std::string id;
    std::string text;
    std::string country;
    std::string language;
    std::optional<Gender> gender;
    std::optional<AgeGroup> age_group;
    std::optional<int> rating;
    std::optional<std::string> topic;
    std::string domain_tag;

    std::optional<DemClass> demographic(Dimension dim) const;
};

// Maps canonical field names (id, text, country, ...) to the keys used in a
// particular file. Unmapped fields use their canonical name.
struct FieldMapping {
    std::map<std::string, std::string> keys;
    std::string key(const std::string& field) const;
};

struct Diagnostic {
    std::size_t line = 0;  // 1-based
    std::string message;
};

struct LoadResult {
    std::vector<LabeledDocument> documents;
    std::vector<Diagnostic> diagnostics;
};

nlohmann::json to_json(const LabeledDocument& doc);
// Throws Error(parse_error) when the record violates the document contract.
LabeledDocument document_from_json(const nlohmann::json& j, const FieldMapping& mapping = {});

LoadResult load_corpus(const std::filesystem::path& path, const FieldMapping& mapping = {});
void write_corpus(const std::filesystem::path& path, std::span<const LabeledDocument> docs);
std::string corpus_digest(std::span<const LabeledDocument> docs);

struct CorpusSplit {
    std::vector<std::string> specialization;
    std::vector<std::string> train;
    std::vector<std::string> dev;
    std::vector<std::string> test;
    Dimension dimension = Dimension::gender;
    Dataset dataset = Dataset::sa;
    std::uint64_t seed = 0;
    std::string corpus_digest;
};

nlohmann::json to_json(const CorpusSplit& split);
CorpusSplit split_from_json(const nlohmann::json& j);

struct SplitOptions {
    // Upper bound on documents per demographic class used for train/dev/test;
    // 0 uses every balanced document. Unused documents go to specialization.
    std::size_t finetune_per_class = 0;
    // Number of topics retained for topic-labelled datasets.
    std::size_t topic_count = 5;
};

bool eligible_for(const LabeledDocument& doc, Dimension dim, Dataset dataset);

CorpusSplit make_split(std::span<const LabeledDocument> docs, Dimension dim, Dataset dataset,
                       std::uint64_t seed, const SplitOptions& options = {});

// Per-class counts for a balanced 60/20/20 split of `per_class` documents per
// class; may use fewer documents so every partition total stays within one
// document of the exact ratio.
struct PartitionSizes {
    std::size_t train = 0;
    std::size_t dev = 0;
    std::size_t test = 0;
    std::size_t used() const { return train + dev + test; }
};
PartitionSizes partition_sizes(std::size_t per_class);

std::vector<LabeledDocument> balance_topics(std::span<const LabeledDocument> docs, std::size_t k,
                                            Dimension dim, std::uint64_t seed = 0);

std::vector<LabeledDocument> sample_specialization(std::span<const LabeledDocument> docs,
                                                   Dimension dim, std::size_t n_per_group,
                                                   std::uint64_t seed);

// Resolves split ids against the corpus, preserving split order.
std::vector<LabeledDocument> select_documents(std::span<const LabeledDocument> docs,
                                              std::span<const std::string> ids);

}  // namespace demspec

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "demspec/checkpoint.hpp"
#include "demspec/corpus.hpp"
#include "demspec/params.hpp"
#include "demspec/types.hpp"

namespace demspec {

enum class ProbeLabel { gender, age, language };

template <>
struct EnumNames<ProbeLabel> {
    static constexpr std::pair<ProbeLabel, std::string_view> table[] = {
        {ProbeLabel::gender, "gender"}, {ProbeLabel::age, "age"}, {ProbeLabel::language, "language"}};
    static constexpr std::string_view label = "ProbeLabel";
};

// Per-document class under a probe label: "F"/"M", "U35"/"O45" or the language.
std::optional<std::string> probe_label(const LabeledDocument& doc, ProbeLabel label);

// Row i is the evaluation-mode sequence state of document i.
Matrix embed_corpus(const Checkpoint& checkpoint, std::span<const LabeledDocument> docs);

struct TsneOptions {
    double perplexity = 30.0;  // capped at (n - 1) / 3
    int iterations = 500;
    int exaggeration_iterations = 125;
    double exaggeration = 12.0;
};

// Exact t-SNE from a PCA initialisation. Deterministic per seed; identical
// input rows receive identical initial positions.
Matrix project_2d(const Matrix& X, std::uint64_t seed, const TsneOptions& options = {});

// Mean silhouette coefficient under Euclidean distance.
double separation_score(const Matrix& X, std::span<const std::string> labels);

// Same, from a precomputed n x n distance matrix.
double silhouette_from_distances(const Matrix& distances, std::span<const int> labels);

Matrix pairwise_distances(const Matrix& X);

struct PermutationNull {
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> scores;
};

// Silhouette over `shuffles` random permutations of the labels.
PermutationNull permutation_null(const Matrix& X, std::span<const std::string> labels, int shuffles,
                                 std::uint64_t seed);

struct ProbeScore {
    std::string checkpoint;  // checkpoint digest
    ProbeLabel label_dimension = ProbeLabel::gender;
    double silhouette = 0.0;
    double permutation_null_mean = 0.0;
    double permutation_null_std = 0.0;
    std::size_t documents = 0;
    std::string corpus_digest;
};

nlohmann::json to_json(const ProbeScore& s);

struct ProbeOptions {
    ProbeLabel label = ProbeLabel::gender;
    std::uint64_t seed = 0;
    int shuffles = 100;
    std::size_t max_points = 2000;  // documents beyond this are sampled away
    bool project = true;
    TsneOptions tsne;
};

// Embeds the labelled documents, scores separation and, when `out_dir` is
// non-empty, writes points.csv (x, y, label) and score.json there.
ProbeScore run_probe(const Checkpoint& checkpoint, std::span<const LabeledDocument> docs,
                     const ProbeOptions& options, const std::filesystem::path& out_dir = {});

}  // namespace demspec

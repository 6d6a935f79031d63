#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "demspec/experiments.hpp"
#include "demspec/finetune.hpp"

namespace demspec {

// Feature groups and their ablation codes.
enum class FeatureGroup { domain, base_model, subset, country, approach };

std::string_view ablation_code(FeatureGroup g);  // -D, -M, -S, -C, -A
FeatureGroup parse_ablation_code(std::string_view code);
inline constexpr FeatureGroup kFeatureGroups[] = {FeatureGroup::domain, FeatureGroup::base_model,
                                                  FeatureGroup::subset, FeatureGroup::country,
                                                  FeatureGroup::approach};

// The categorical inputs of one specialization effect.
struct FeatureInput {
    std::string country;
    Method method = Method::mlm;
    SpecDomain spec_domain = SpecDomain::in_domain;
    BaseModel base_model = BaseModel::multilingual;
    Subset subset = Subset::mixed;
};

FeatureInput feature_input(const ResultRecord& r);
FeatureInput feature_input(const DeltaRow& r);

// One-hot layout: intercept first, then each group's categories.
class FeatureSpace {
public:
    // Countries default to the five studied markets; DK, FR and DE are
    // accepted as aliases of Denmark, France and Germany.
    FeatureSpace();
    explicit FeatureSpace(std::vector<std::string> countries);
    static FeatureSpace from_inputs(std::span<const FeatureInput> inputs);

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    std::vector<std::size_t> columns(FeatureGroup g) const;
    FeatureGroup group_of(std::size_t column) const;

    Eigen::RowVectorXd encode(const FeatureInput& in) const;
    Eigen::MatrixXd encode(std::span<const FeatureInput> inputs) const;

private:
    void build(std::vector<std::string> countries);
    std::string canonical_country(const std::string& c) const;

    std::vector<std::string> countries_;
    std::vector<std::string> names_;
    std::vector<int> group_;  // -1 for the intercept
};

Eigen::RowVectorXd build_features(const FeatureSpace& space, const ResultRecord& record);

struct RegressionFit {
    Eigen::VectorXd weights;
    double rmse = 0.0;
    std::vector<std::string> names;               // aligned with weights when known
    std::map<std::string, double> ablation;       // code -> RMSE
};

// Minimum-norm ordinary least squares (complete orthogonal decomposition).
RegressionFit fit_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

// RMSE after refitting without the group's columns.
double ablate(const FeatureSpace& space, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
              std::string_view code);

// Full fit plus every ablation, with names attached.
RegressionFit meta_regression(const FeatureSpace& space, const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

// Features with weight > threshold, by weight descending then name ascending.
std::vector<std::pair<std::string, double>> select_important(const RegressionFit& fit, double threshold = 0.5);

// Ablation TSV: one row per (dimension, dataset) over the specialization
// deltas versus vanilla. Groups that take a single value in a row print "-".
void write_meta_report(std::span<const ResultRecord> records, const std::filesystem::path& out);

}  // namespace demspec

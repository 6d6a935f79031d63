#include "demspec/metaanalysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "demspec/error.hpp"

namespace demspec {

namespace {

const std::map<std::string, std::string>& country_aliases() {
    static const std::map<std::string, std::string> aliases = {
        {"DK", "Denmark"}, {"FR", "France"}, {"DE", "Germany"}, {"GB", "UK"}, {"USA", "US"}};
    return aliases;
}

const char* group_name(FeatureGroup g) {
    switch (g) {
        case FeatureGroup::domain: return "domain";
        case FeatureGroup::base_model: return "base";
        case FeatureGroup::subset: return "subset";
        case FeatureGroup::country: return "country";
        case FeatureGroup::approach: return "method";
    }
    return "?";
}

}  // namespace

std::string_view ablation_code(FeatureGroup g) {
    switch (g) {
        case FeatureGroup::domain: return "-D";
        case FeatureGroup::base_model: return "-M";
        case FeatureGroup::subset: return "-S";
        case FeatureGroup::country: return "-C";
        case FeatureGroup::approach: return "-A";
    }
    return "?";
}

FeatureGroup parse_ablation_code(std::string_view code) {
    for (FeatureGroup g : kFeatureGroups)
        if (ablation_code(g) == code) return g;
    fail(ErrorCode::invalid_argument, "unknown feature group '" + std::string(code) + "' (expected -D, -M, -S, -C or -A)");
}

FeatureInput feature_input(const ResultRecord& r) {
    return {r.country, r.method, r.spec_domain, r.base_model, r.subset};
}

FeatureInput feature_input(const DeltaRow& r) { return {r.country, r.method, r.spec_domain, r.base_model, r.subset}; }

FeatureSpace::FeatureSpace() { build({"Denmark", "France", "Germany", "UK", "US"}); }

FeatureSpace::FeatureSpace(std::vector<std::string> countries) { build(std::move(countries)); }

FeatureSpace FeatureSpace::from_inputs(std::span<const FeatureInput> inputs) {
    std::set<std::string> countries;
    for (const auto& in : inputs) countries.insert(in.country);
    return FeatureSpace(std::vector<std::string>(countries.begin(), countries.end()));
}

void FeatureSpace::build(std::vector<std::string> countries) {
    require(!countries.empty(), ErrorCode::invalid_argument, "feature space needs at least one country");
    countries_ = std::move(countries);
    names_ = {"intercept"};
    group_ = {-1};
    auto add = [&](FeatureGroup g, std::string_view value) {
        names_.push_back(std::string(group_name(g)) + ":" + std::string(value));
        group_.push_back(static_cast<int>(g));
    };
    for (const auto& c : countries_) add(FeatureGroup::country, c);
    for (Method m : {Method::mlm, Method::ds_seq, Method::ds_tok}) add(FeatureGroup::approach, to_string(m));
    for (SpecDomain d : {SpecDomain::in_domain, SpecDomain::out_of_domain}) add(FeatureGroup::domain, to_string(d));
    for (BaseModel b : all_values<BaseModel>()) add(FeatureGroup::base_model, to_string(b));
    for (Subset s : all_values<Subset>()) add(FeatureGroup::subset, to_string(s));
}

std::string FeatureSpace::canonical_country(const std::string& c) const {
    if (std::find(countries_.begin(), countries_.end(), c) != countries_.end()) return c;
    if (auto it = country_aliases().find(c); it != country_aliases().end())
        if (std::find(countries_.begin(), countries_.end(), it->second) != countries_.end()) return it->second;
    fail(ErrorCode::unknown_category, "country '" + c + "' is not in the feature vocabulary");
}

std::vector<std::size_t> FeatureSpace::columns(FeatureGroup g) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < group_.size(); ++i)
        if (group_[i] == static_cast<int>(g)) out.push_back(i);
    return out;
}

FeatureGroup FeatureSpace::group_of(std::size_t column) const {
    require(column > 0 && column < group_.size(), ErrorCode::invalid_argument, "column has no feature group");
    return static_cast<FeatureGroup>(group_[column]);
}

Eigen::RowVectorXd FeatureSpace::encode(const FeatureInput& in) const {
    require(in.method != Method::vanilla, ErrorCode::unknown_category,
            "vanilla results carry no specialization features");
    require(in.spec_domain != SpecDomain::none, ErrorCode::unknown_category,
            "specialization domain must be in-domain or out-of-domain");
    Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(names_.size()));
    x(0) = 1.0;
    auto set = [&](FeatureGroup g, std::string_view value) {
        const std::string name = std::string(group_name(g)) + ":" + std::string(value);
        const auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) fail(ErrorCode::unknown_category, "no feature " + name);
        x(it - names_.begin()) = 1.0;
    };
    set(FeatureGroup::country, canonical_country(in.country));
    set(FeatureGroup::approach, to_string(in.method));
    set(FeatureGroup::domain, to_string(in.spec_domain));
    set(FeatureGroup::base_model, to_string(in.base_model));
    set(FeatureGroup::subset, to_string(in.subset));
    return x;
}

Eigen::MatrixXd FeatureSpace::encode(std::span<const FeatureInput> inputs) const {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(inputs.size()), static_cast<Eigen::Index>(names_.size()));
    for (std::size_t i = 0; i < inputs.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = encode(inputs[i]);
    return X;
}

Eigen::RowVectorXd build_features(const FeatureSpace& space, const ResultRecord& record) {
    return space.encode(feature_input(record));
}

RegressionFit fit_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    require(X.rows() > 0 && X.cols() > 0, ErrorCode::insufficient_data, "regression needs data");
    require(X.rows() == y.size(), ErrorCode::invalid_argument, "feature rows and targets differ in length");
    require(X.allFinite() && y.allFinite(), ErrorCode::non_finite, "regression inputs must be finite");
    RegressionFit fit;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
    fit.weights = cod.solve(y);
    const Eigen::VectorXd residual = y - X * fit.weights;
    fit.rmse = std::sqrt(residual.squaredNorm() / static_cast<double>(y.size()));
    return fit;
}

double ablate(const FeatureSpace& space, const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::string_view code) {
    const FeatureGroup g = parse_ablation_code(code);
    const auto drop = space.columns(g);
    require(static_cast<std::size_t>(X.cols()) == space.size(), ErrorCode::invalid_argument,
            "feature matrix does not match the feature space");
    std::vector<Eigen::Index> keep;
    for (Eigen::Index c = 0; c < X.cols(); ++c)
        if (std::find(drop.begin(), drop.end(), static_cast<std::size_t>(c)) == drop.end()) keep.push_back(c);
    return fit_regression(X(Eigen::all, keep), y).rmse;
}

RegressionFit meta_regression(const FeatureSpace& space, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    RegressionFit fit = fit_regression(X, y);
    fit.names = space.names();
    for (FeatureGroup g : kFeatureGroups) {
        const std::string code(ablation_code(g));
        fit.ablation[code] = ablate(space, X, y, code);
    }
    return fit;
}

std::vector<std::pair<std::string, double>> select_important(const RegressionFit& fit, double threshold) {
    std::vector<std::pair<std::string, double>> out;
    for (Eigen::Index i = 0; i < fit.weights.size(); ++i) {
        const std::string name =
            static_cast<std::size_t>(i) < fit.names.size() ? fit.names[static_cast<std::size_t>(i)] : "w" + std::to_string(i);
        if (name == "intercept") continue;
        if (fit.weights(i) > threshold) out.emplace_back(name, fit.weights(i));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return out;
}

void write_meta_report(std::span<const ResultRecord> records, const std::filesystem::path& out_path) {
    check_consistent_digests(records);
    const DeltaTable deltas = delta_table(records, versus_vanilla());
    std::map<std::pair<Dimension, Dataset>, std::vector<const DeltaRow*>> rows;
    for (const auto& r : deltas.rows) rows[{r.dimension, r.dataset}].push_back(&r);

    if (!out_path.parent_path().empty()) std::filesystem::create_directories(out_path.parent_path());
    std::ofstream out(out_path);
    if (!out) fail(ErrorCode::io_error, "cannot write " + out_path.string());
    out << "dimension\ttask\tn\tselected_features\tall";
    for (FeatureGroup g : kFeatureGroups) out << '\t' << ablation_code(g);
    out << '\n';
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", v);
        return std::string(buf);
    };
    for (const auto& [key, group] : rows) {
        std::vector<FeatureInput> inputs;
        Eigen::VectorXd y(static_cast<Eigen::Index>(group.size()));
        for (std::size_t i = 0; i < group.size(); ++i) {
            inputs.push_back(feature_input(*group[i]));
            y(static_cast<Eigen::Index>(i)) = group[i]->delta;
        }
        const FeatureSpace space = FeatureSpace::from_inputs(inputs);
        const Eigen::MatrixXd X = space.encode(inputs);
        const RegressionFit fit = meta_regression(space, X, y);
        std::string selected;
        for (const auto& [name, w] : select_important(fit)) {
            if (!selected.empty()) selected += "; ";
            selected += name.substr(name.find(':') + 1) + " (" + num(w) + ")";
        }
        out << to_string(key.first) << '\t' << to_string(key.second) << '\t' << group.size() << '\t'
            << (selected.empty() ? "-" : selected) << '\t' << num(fit.rmse);
        for (FeatureGroup g : kFeatureGroups) {
            std::set<Eigen::Index> active;
            for (auto c : space.columns(g))
                if (X.col(static_cast<Eigen::Index>(c)).any()) active.insert(static_cast<Eigen::Index>(c));
            out << '\t' << (active.size() < 2 ? std::string("-") : num(fit.ablation.at(std::string(ablation_code(g)))));
        }
        out << '\n';
    }
}

}  // namespace demspec

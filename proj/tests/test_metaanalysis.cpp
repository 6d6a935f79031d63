#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "demspec/error.hpp"
#include "demspec/metaanalysis.hpp"
#include "demspec/rng.hpp"

using namespace demspec;

namespace {

// Every combination of the categorical features, `reps` times.
std::vector<FeatureInput> factorial(int reps = 1) {
    std::vector<FeatureInput> out;
    for (int r = 0; r < reps; ++r)
        for (const char* c : {"Denmark", "France", "Germany", "UK", "US"})
            for (Method m : {Method::mlm, Method::ds_seq, Method::ds_tok})
                for (SpecDomain d : {SpecDomain::in_domain, SpecDomain::out_of_domain})
                    for (BaseModel b : all_values<BaseModel>())
                        for (Subset s : all_values<Subset>()) out.push_back({c, m, d, b, s});
    return out;
}

double population_std(const Eigen::VectorXd& y) {
    return std::sqrt((y.array() - y.mean()).square().mean());
}

}  // namespace

TEST_CASE("build_features") {
    const FeatureSpace space;
    ResultRecord r;
    r.country = "Denmark";
    r.method = Method::ds_tok;
    r.spec_domain = SpecDomain::in_domain;
    r.base_model = BaseModel::multilingual;
    r.subset = Subset::mixed;
    const auto x = build_features(space, r);
    CHECK(x(0) == 1.0);
    CHECK(x.sum() == 6.0);
    for (FeatureGroup g : kFeatureGroups) {
        double active = 0;
        for (auto c : space.columns(g)) active += x(static_cast<Eigen::Index>(c));
        CHECK(active == 1.0);
    }

    ResultRecord other = r;
    other.method = Method::mlm;
    const Eigen::RowVectorXd diff = build_features(space, other) - x;
    for (Eigen::Index c = 0; c < diff.size(); ++c)
        if (diff(c) != 0.0) CHECK(space.group_of(static_cast<std::size_t>(c)) == FeatureGroup::approach);
    CHECK(diff.cwiseAbs().sum() == 2.0);

    r.country = "DK";
    CHECK(build_features(space, r) == x);
    r.country = "Atlantis";
    try {
        build_features(space, r);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::unknown_category);
    }
    r.country = "US";
    r.method = Method::vanilla;
    CHECK_THROWS_AS(build_features(space, r), Error);
}

TEST_CASE("fit_regression oracles") {
    Rng rng(1);
    SUBCASE("noiseless exact recovery") {
        Eigen::MatrixXd X(60, 4);
        for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
        const Eigen::VectorXd y = 2.0 * X.col(0) - X.col(1);
        const auto fit = fit_regression(X, y);
        CHECK(fit.rmse <= 1e-8);
        CHECK(fit.weights(0) == doctest::Approx(2.0).epsilon(1e-10));
        CHECK(fit.weights(1) == doctest::Approx(-1.0).epsilon(1e-10));
        CHECK(std::abs(fit.weights(2)) < 1e-10);
    }
    SUBCASE("constant target") {
        Eigen::MatrixXd X(40, 3);
        X.col(0).setOnes();
        for (Eigen::Index i = 0; i < 40; ++i) X(i, 1) = rng.normal(), X(i, 2) = rng.normal();
        const auto fit = fit_regression(X, Eigen::VectorXd::Constant(40, 3.5));
        CHECK(fit.rmse <= 1e-12);
        CHECK(fit.weights(0) == doctest::Approx(3.5).epsilon(1e-12));
        CHECK(std::abs(fit.weights(1)) < 1e-12);

        const FeatureSpace space;
        const auto inputs = factorial();
        const Eigen::MatrixXd H = space.encode(inputs);
        const Eigen::VectorXd c = Eigen::VectorXd::Constant(H.rows(), 3.5);
        const auto one_hot = fit_regression(H, c);
        CHECK(one_hot.rmse <= 1e-10);
        CHECK(((H * one_hot.weights).array() - 3.5).abs().maxCoeff() <= 1e-10);
    }
    SUBCASE("Gaussian noise sigma = 0.1 at n = 1e4") {
        const FeatureSpace space;
        std::vector<FeatureInput> inputs;
        const auto base = factorial();
        for (int i = 0; i < 10000; ++i) inputs.push_back(base[rng.below(base.size())]);
        const Eigen::MatrixXd X = space.encode(inputs);
        Eigen::VectorXd beta(X.cols());
        for (Eigen::Index i = 0; i < beta.size(); ++i) beta(i) = rng.normal();
        Eigen::VectorXd y = X * beta;
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += 0.1 * rng.normal();
        const auto fit = fit_regression(X, y);
        CHECK(fit.rmse == doctest::Approx(0.1).epsilon(0.1));
    }
    CHECK_THROWS_AS(fit_regression(Eigen::MatrixXd(0, 2), Eigen::VectorXd(0)), Error);
}

TEST_CASE("ablation properties") {
    const FeatureSpace space;
    const auto inputs = factorial();
    const Eigen::MatrixXd X = space.encode(inputs);
    Rng rng(2);

    SUBCASE("excluding a zero-weight group leaves the noiseless fit unchanged") {
        Eigen::VectorXd y(X.rows());
        for (std::size_t i = 0; i < inputs.size(); ++i)
            y(static_cast<Eigen::Index>(i)) = (inputs[i].country == "US" ? 1.5 : 0.0) +
                                              (inputs[i].method == Method::ds_tok ? -0.7 : 0.2);
        const double all = fit_regression(X, y).rmse;
        for (const char* code : {"-D", "-M", "-S"}) CHECK(std::abs(ablate(space, X, y, code) - all) <= 1e-8);
        CHECK(ablate(space, X, y, "-C") > all + 0.1);
    }
    SUBCASE("country-only target: -C raises RMSE to std(y)") {
        Eigen::VectorXd y(X.rows());
        const std::map<std::string, double> effect = {
            {"Denmark", 3.0}, {"France", -1.0}, {"Germany", 0.5}, {"UK", 2.0}, {"US", -2.5}};
        for (std::size_t i = 0; i < inputs.size(); ++i) y(static_cast<Eigen::Index>(i)) = effect.at(inputs[i].country);
        CHECK(fit_regression(X, y).rmse <= 1e-10);
        CHECK(ablate(space, X, y, "-C") == doctest::Approx(population_std(y)).epsilon(1e-10));
    }
    SUBCASE("only the method drives the delta: -A hurts most") {
        Eigen::VectorXd y(X.rows());
        for (std::size_t i = 0; i < inputs.size(); ++i)
            y(static_cast<Eigen::Index>(i)) =
                (inputs[i].method == Method::mlm ? 1.0 : inputs[i].method == Method::ds_seq ? -0.5 : 0.0) +
                0.05 * rng.normal();
        const auto fit = meta_regression(space, X, y);
        for (const auto& [code, rmse] : fit.ablation) {
            CHECK(rmse >= fit.rmse - 1e-12);
            if (code != "-A") CHECK(fit.ablation.at("-A") > rmse);
        }
    }
    SUBCASE("nested-model monotonicity on random targets") {
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::VectorXd y(X.rows());
            for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = rng.normal();
            const auto fit = meta_regression(space, X, y);
            for (const auto& [code, rmse] : fit.ablation) CHECK(rmse >= fit.rmse - 1e-12);
        }
    }
    CHECK_THROWS_AS(ablate(space, X, Eigen::VectorXd::Zero(X.rows()), "-Q"), Error);
}

TEST_CASE("fit invariances") {
    const FeatureSpace space;
    const auto inputs = factorial();
    const Eigen::MatrixXd X = space.encode(inputs);
    Rng rng(3);
    Eigen::VectorXd y(X.rows());
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = rng.normal();
    const auto fit = fit_regression(X, y);

    // Row order.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(X.rows()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
    rng.shuffle(std::span(order));
    const auto shuffled = fit_regression(X(order, Eigen::all), y(order));
    CHECK((shuffled.weights - fit.weights).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(shuffled.rmse == doctest::Approx(fit.rmse).epsilon(1e-12));

    // Duplicating the dataset.
    Eigen::MatrixXd X2(2 * X.rows(), X.cols());
    X2 << X, X;
    Eigen::VectorXd y2(2 * y.size());
    y2 << y, y;
    const auto doubled = fit_regression(X2, y2);
    CHECK((doubled.weights - fit.weights).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(doubled.rmse == doctest::Approx(fit.rmse).epsilon(1e-12));

    // Reference coding (one indicator per group dropped) predicts the same values.
    for (int variant = 0; variant < 2; ++variant) {
        std::vector<Eigen::Index> keep = {0};
        for (FeatureGroup g : kFeatureGroups) {
            const auto cols = space.columns(g);
            for (std::size_t k = 0; k < cols.size(); ++k)
                if (k != (variant == 0 ? 0 : cols.size() - 1)) keep.push_back(static_cast<Eigen::Index>(cols[k]));
        }
        const Eigen::MatrixXd R = X(Eigen::all, keep);
        const auto ref = fit_regression(R, y);
        CHECK(((R * ref.weights) - (X * fit.weights)).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("select_important") {
    RegressionFit fit;
    fit.names = {"intercept", "a", "b", "c"};
    fit.weights = Eigen::Vector4d(3.0, 1.0, 0.9, 0.4);
    auto picked = select_important(fit);
    REQUIRE(picked.size() == 2);
    CHECK(picked[0].first == "a");
    CHECK(picked[1].first == "b");

    fit.weights = Eigen::Vector4d(3.0, 0.5, 0.2, -1.0);
    CHECK(select_important(fit).empty());

    fit.names = {"intercept", "zeta", "alpha", "mid"};
    fit.weights = Eigen::Vector4d(0.0, 0.7, 0.7, 0.9);
    picked = select_important(fit);
    REQUIRE(picked.size() == 3);
    CHECK(picked[0].first == "mid");
    CHECK(picked[1].first == "alpha");
    CHECK(picked[2].first == "zeta");
}

TEST_CASE("meta report layout") {
    std::vector<ResultRecord> records;
    Rng rng(4);
    for (const char* country : {"DK", "US"})
        for (Dataset ds : {Dataset::ac_sa, Dataset::sa})
            for (Method m : {Method::vanilla, Method::mlm, Method::ds_tok})
                for (SpecDomain d : {SpecDomain::in_domain, SpecDomain::out_of_domain})
                    for (Subset s : all_values<Subset>()) {
                        if (task_of(ds) == Task::ac && s != Subset::mixed) continue;
                        if (m == Method::vanilla && d == SpecDomain::out_of_domain) continue;
                        if (task_of(ds) == Task::ac && d == SpecDomain::out_of_domain) continue;
                        ResultRecord r;
                        r.country = country;
                        r.dataset = ds;
                        r.task = task_of(ds);
                        r.method = m;
                        r.spec_domain = m == Method::vanilla ? SpecDomain::none : d;
                        r.subset = s;
                        r.f1 = 0.5 + 0.3 * rng.uniform();
                        records.push_back(r);
                    }
    const auto path = std::filesystem::temp_directory_path() / "demspec_meta.tsv";
    write_meta_report(records, path);
    std::ifstream in(path);
    std::string header, ac, sa;
    std::getline(in, header);
    std::getline(in, ac);
    std::getline(in, sa);
    CHECK(header == "dimension\ttask\tn\tselected_features\tall\t-D\t-M\t-S\t-C\t-A");
    CHECK(ac.rfind("gender\tAC-SA\t4\t", 0) == 0);
    // AC varies neither domain, base model nor subset here.
    CHECK(ac.find("\t-\t-\t-\t") != std::string::npos);
    CHECK(sa.rfind("gender\tSA\t24\t", 0) == 0);
    std::filesystem::remove(path);
}

#include "demspec/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "demspec/digest.hpp"
#include "demspec/model.hpp"
#include "demspec/rng.hpp"
#include "demspec/tokenizer.hpp"
#include "demspec/training.hpp"

namespace demspec {

namespace {

constexpr std::size_t kEmbedBatch = 64;

std::vector<int> label_indices(std::span<const std::string> labels, std::size_t& classes) {
    std::map<std::string, int> index;
    for (const auto& l : labels) index.emplace(l, 0);
    int next = 0;
    for (auto& [name, i] : index) i = next++;
    classes = index.size();
    std::vector<int> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(index.at(l));
    return out;
}

// Perplexity-calibrated conditional probabilities for one row of squared distances.
void calibrate_row(const Eigen::Ref<const Eigen::RowVectorXd>& d2, Eigen::Index self, double perplexity,
                   Eigen::Ref<Eigen::RowVectorXd> p) {
    const double target = std::log(perplexity);
    double lo = -INFINITY, hi = INFINITY, beta = 1.0;
    double min_d = INFINITY;
    for (Eigen::Index j = 0; j < d2.size(); ++j)
        if (j != self) min_d = std::min(min_d, d2(j));
    for (int iter = 0; iter < 100; ++iter) {
        double sum = 0.0, weighted = 0.0;
        for (Eigen::Index j = 0; j < d2.size(); ++j) {
            if (j == self) {
                p(j) = 0.0;
                continue;
            }
            const double shifted = d2(j) - min_d;
            p(j) = std::exp(-beta * shifted);
            sum += p(j);
            weighted += shifted * p(j);
        }
        const double entropy = std::log(sum) + beta * weighted / sum;
        p /= sum;
        const double diff = entropy - target;
        if (std::abs(diff) < 1e-5) break;
        if (diff > 0) {
            lo = beta;
            beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
        } else {
            hi = beta;
            beta = std::isinf(lo) ? beta / 2 : (beta + lo) / 2;
        }
    }
}

Matrix pca_2d(const Matrix& X) {
    const Matrix centered = X.rowwise() - X.colwise().mean();
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(X.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    const Eigen::Index d = cov.rows();
    Matrix out = Matrix::Zero(X.rows(), 2);
    for (int k = 0; k < 2 && k < d; ++k) {
        Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - k);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        out.col(k) = centered * v;
    }
    return out;
}

Matrix tsne(const Matrix& X, std::uint64_t seed, const TsneOptions& options);

}  // namespace

std::optional<std::string> probe_label(const LabeledDocument& doc, ProbeLabel label) {
    switch (label) {
        case ProbeLabel::gender:
        case ProbeLabel::age: {
            const Dimension dim = label == ProbeLabel::gender ? Dimension::gender : Dimension::age;
            const auto c = doc.demographic(dim);
            if (!c) return std::nullopt;
            return std::string(class_label(dim, *c));
        }
        case ProbeLabel::language:
            if (doc.language.empty()) return std::nullopt;
            return doc.language;
    }
    return std::nullopt;
}

Matrix embed_corpus(const Checkpoint& checkpoint, std::span<const LabeledDocument> docs) {
    require(!docs.empty(), ErrorCode::insufficient_data, "cannot embed an empty document set");
    const Model& model = checkpoint.model;
    const EncodedCorpus corpus =
        encode_corpus(checkpoint.tokenizer, docs, model.config().max_seq_len, std::nullopt);
    Matrix out(static_cast<Eigen::Index>(docs.size()), model.config().hidden_dim);
    for (const auto& rows : make_batches(corpus.size(), kEmbedBatch, 0, false)) {
        const EncodedBatch enc = encode(model, plain_batch(batch_ids(corpus, rows)), Mode::eval);
        for (std::size_t r = 0; r < rows.size(); ++r)
            out.row(static_cast<Eigen::Index>(rows[r])) = enc.sequence_state.row(static_cast<Eigen::Index>(r));
    }
    require(out.allFinite(), ErrorCode::non_finite, "embedding produced non-finite values");
    return out;
}

Matrix project_2d(const Matrix& X, std::uint64_t seed, const TsneOptions& options) {
    require(X.rows() >= 5, ErrorCode::insufficient_data,
            "project_2d needs at least 5 points, got " + std::to_string(X.rows()));
    require(options.iterations > 0 && options.perplexity > 0, ErrorCode::invalid_argument,
            "t-SNE needs positive iterations and perplexity");

    // Identical rows are embedded once and share their position.
    std::map<std::vector<double>, Eigen::Index> seen;
    std::vector<Eigen::Index> slot(static_cast<std::size_t>(X.rows()));
    std::vector<Eigen::Index> unique_rows;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        std::vector<double> key(X.row(i).begin(), X.row(i).end());
        auto [it, inserted] = seen.emplace(std::move(key), static_cast<Eigen::Index>(unique_rows.size()));
        if (inserted) unique_rows.push_back(i);
        slot[static_cast<std::size_t>(i)] = it->second;
    }
    const Matrix U = X(unique_rows, Eigen::all);
    const Matrix Yu = U.rows() >= 5 ? tsne(U, seed, options) : pca_2d(U);
    Matrix Y(X.rows(), 2);
    for (Eigen::Index i = 0; i < X.rows(); ++i) Y.row(i) = Yu.row(slot[static_cast<std::size_t>(i)]);
    return Y;
}

namespace {

Matrix tsne(const Matrix& X, std::uint64_t seed, const TsneOptions& options) {
    const Eigen::Index n = X.rows();
    const double perplexity = std::min(options.perplexity, static_cast<double>(n - 1) / 3.0);

    const Eigen::VectorXd sq = X.rowwise().squaredNorm();
    Matrix d2 = (-2.0 * X * X.transpose()).colwise() + sq;
    d2.rowwise() += sq.transpose();
    d2 = d2.cwiseMax(0.0);

    Matrix P(n, n);
    for (Eigen::Index i = 0; i < n; ++i) calibrate_row(d2.row(i), i, perplexity, P.row(i));
    P = (P + P.transpose()).eval() / (2.0 * static_cast<double>(n));
    P = P.cwiseMax(1e-12);
    P.diagonal().setZero();

    Matrix Y = pca_2d(X);
    const double scale = std::sqrt((Y.col(0).array() - Y.col(0).mean()).square().mean());
    Y *= scale > 0 ? 1e-4 / scale : 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        Digest row;
        for (Eigen::Index c = 0; c < X.cols(); ++c) row.update(X(i, c));
        Rng jitter(derive_seed(seed, row.value()));
        Y(i, 0) += 1e-6 * jitter.normal();
        Y(i, 1) += 1e-6 * jitter.normal();
    }

    const double lr = std::max(static_cast<double>(n) / options.exaggeration / 4.0, 50.0);
    Matrix update = Matrix::Zero(n, 2);
    Matrix gains = Matrix::Ones(n, 2);
    for (int iter = 0; iter < options.iterations; ++iter) {
        const bool early = iter < options.exaggeration_iterations;
        const double exaggeration = early ? options.exaggeration : 1.0;
        const double momentum = early ? 0.5 : 0.8;
        if (iter == options.exaggeration_iterations) {
            update.setZero();
            gains.setOnes();
        }

        const Eigen::VectorXd ysq = Y.rowwise().squaredNorm();
        Matrix num = (-2.0 * Y * Y.transpose()).colwise() + ysq;
        num.rowwise() += ysq.transpose();
        num = (1.0 + num.array().max(0.0)).inverse().matrix();
        num.diagonal().setZero();
        const double z = num.sum();
        const Matrix W = ((exaggeration * P.array() - num.array() / z) * num.array()).matrix();
        const Eigen::VectorXd row_sums = W.rowwise().sum();
        const Matrix grad = 4.0 * (row_sums.asDiagonal() * Y - W * Y);

        for (Eigen::Index i = 0; i < n; ++i)
            for (int c = 0; c < 2; ++c) {
                const bool same = (grad(i, c) > 0) == (update(i, c) > 0);
                gains(i, c) = std::max(same ? gains(i, c) * 0.8 : gains(i, c) + 0.2, 0.01);
            }
        update = momentum * update - lr * gains.cwiseProduct(grad);
        Y += update;
        const Eigen::RowVector2d centre = Y.colwise().mean();
        Y.rowwise() -= centre;
    }
    require(Y.allFinite(), ErrorCode::non_finite, "t-SNE diverged");
    return Y;
}

}  // namespace

Matrix pairwise_distances(const Matrix& X) {
    const Eigen::VectorXd sq = X.rowwise().squaredNorm();
    Matrix d = (-2.0 * X * X.transpose()).colwise() + sq;
    d.rowwise() += sq.transpose();
    d = d.cwiseMax(0.0).cwiseSqrt();
    d.diagonal().setZero();
    return d;
}

double silhouette_from_distances(const Matrix& distances, std::span<const int> labels) {
    const auto n = static_cast<Eigen::Index>(labels.size());
    require(distances.rows() == n && distances.cols() == n, ErrorCode::invalid_argument,
            "distance matrix does not match the label count");
    const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<double> sizes(static_cast<std::size_t>(k), 0.0);
    for (int l : labels) sizes[static_cast<std::size_t>(l)] += 1;
    require(std::count_if(sizes.begin(), sizes.end(), [](double s) { return s > 0; }) >= 2,
            ErrorCode::insufficient_data, "silhouette needs at least two classes");
    for (double s : sizes)
        require(s != 1, ErrorCode::insufficient_data, "silhouette is undefined for a singleton class");

    Matrix onehot = Matrix::Zero(n, k);
    for (Eigen::Index i = 0; i < n; ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;
    const Matrix sums = distances * onehot;

    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int own = labels[static_cast<std::size_t>(i)];
        const double a = sums(i, own) / (sizes[static_cast<std::size_t>(own)] - 1);
        double b = INFINITY;
        for (int c = 0; c < k; ++c)
            if (c != own && sizes[static_cast<std::size_t>(c)] > 0)
                b = std::min(b, sums(i, c) / sizes[static_cast<std::size_t>(c)]);
        const double m = std::max(a, b);
        total += m > 0 ? (b - a) / m : 0.0;
    }
    return total / static_cast<double>(n);
}

double separation_score(const Matrix& X, std::span<const std::string> labels) {
    require(static_cast<std::size_t>(X.rows()) == labels.size(), ErrorCode::invalid_argument,
            "one label per embedding row is required");
    std::size_t classes = 0;
    const auto idx = label_indices(labels, classes);
    return silhouette_from_distances(pairwise_distances(X), idx);
}

PermutationNull permutation_null(const Matrix& X, std::span<const std::string> labels, int shuffles,
                                 std::uint64_t seed) {
    require(shuffles >= 2, ErrorCode::invalid_argument, "permutation null needs at least 2 shuffles");
    require(static_cast<std::size_t>(X.rows()) == labels.size(), ErrorCode::invalid_argument,
            "one label per embedding row is required");
    std::size_t classes = 0;
    auto idx = label_indices(labels, classes);
    const Matrix d = pairwise_distances(X);
    Rng rng(seed);
    PermutationNull out;
    for (int s = 0; s < shuffles; ++s) {
        rng.shuffle(std::span(idx));
        out.scores.push_back(silhouette_from_distances(d, idx));
    }
    out.mean = std::accumulate(out.scores.begin(), out.scores.end(), 0.0) / shuffles;
    double var = 0.0;
    for (double v : out.scores) var += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(var / (shuffles - 1));
    return out;
}

nlohmann::json to_json(const ProbeScore& s) {
    return {{"checkpoint", s.checkpoint},
            {"label_dimension", to_string(s.label_dimension)},
            {"silhouette", s.silhouette},
            {"permutation_null_mean", s.permutation_null_mean},
            {"permutation_null_std", s.permutation_null_std},
            {"documents", s.documents},
            {"corpus_digest", s.corpus_digest}};
}

ProbeScore run_probe(const Checkpoint& checkpoint, std::span<const LabeledDocument> docs,
                     const ProbeOptions& options, const std::filesystem::path& out_dir) {
    std::vector<LabeledDocument> kept;
    std::vector<std::string> labels;
    for (const auto& d : docs)
        if (auto l = probe_label(d, options.label)) {
            kept.push_back(d);
            labels.push_back(*l);
        }
    require(!kept.empty(), ErrorCode::missing_label,
            "no document carries a " + to_string(options.label) + " label");
    if (options.max_points > 0 && kept.size() > options.max_points) {
        std::vector<std::size_t> order(kept.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(options.seed, 0x70726f6265));
        rng.shuffle(std::span(order));
        order.resize(options.max_points);
        std::sort(order.begin(), order.end());
        std::vector<LabeledDocument> sampled;
        std::vector<std::string> sampled_labels;
        for (auto i : order) {
            sampled.push_back(std::move(kept[i]));
            sampled_labels.push_back(std::move(labels[i]));
        }
        kept = std::move(sampled);
        labels = std::move(sampled_labels);
    }

    const Matrix X = embed_corpus(checkpoint, kept);
    ProbeScore score;
    score.checkpoint = checkpoint.digest();
    score.label_dimension = options.label;
    score.silhouette = separation_score(X, labels);
    const auto null = permutation_null(X, labels, options.shuffles, derive_seed(options.seed, 1));
    score.permutation_null_mean = null.mean;
    score.permutation_null_std = null.std;
    score.documents = kept.size();
    score.corpus_digest = corpus_digest(kept);

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        if (options.project) {
            const Matrix Y = project_2d(X, options.seed, options.tsne);
            std::ofstream csv(out_dir / "points.csv");
            if (!csv) fail(ErrorCode::io_error, "cannot write " + (out_dir / "points.csv").string());
            csv.precision(9);
            csv << "id,x,y,label\n";
            for (std::size_t i = 0; i < kept.size(); ++i)
                csv << kept[i].id << ',' << Y(static_cast<Eigen::Index>(i), 0) << ','
                    << Y(static_cast<Eigen::Index>(i), 1) << ',' << labels[i] << '\n';
        }
        std::ofstream js(out_dir / "score.json");
        if (!js) fail(ErrorCode::io_error, "cannot write " + (out_dir / "score.json").string());
        js << to_json(score).dump(2) << '\n';
    }
    return score;
}

}  // namespace demspec

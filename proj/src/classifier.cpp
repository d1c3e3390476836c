#include "tse/classifier.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "tse/error.hpp"

namespace tse {

namespace {
Eigen::VectorXd softmax(Eigen::VectorXd z) {
    const double mx = z.maxCoeff();
    z = (z.array() - mx).exp();
    return z / z.sum();
}
}  // namespace

SoftmaxClassifier::SoftmaxClassifier(std::shared_ptr<const MelStatsEmbedder> embedder,
                                     std::vector<std::string> labels, Eigen::MatrixXd weights,
                                     Eigen::VectorXd bias)
    : embedder_(std::move(embedder)),
      labels_(std::move(labels)),
      w_(std::move(weights)),
      b_(std::move(bias)) {
    if (!embedder_) throw ConfigError("classifier needs an embedder");
    if (w_.rows() != static_cast<Eigen::Index>(labels_.size()) || w_.rows() != b_.size())
        throw ConfigError("classifier weight shapes do not match the label set");
}

SoftmaxClassifier SoftmaxClassifier::fit(std::shared_ptr<const MelStatsEmbedder> embedder,
                                         const Eigen::MatrixXd& embeddings,
                                         const std::vector<int>& label_ids,
                                         std::vector<std::string> labels, int iters, double lr,
                                         double l2) {
    const Eigen::Index n = embeddings.rows(), d = embeddings.cols();
    const auto k = static_cast<Eigen::Index>(labels.size());
    if (n != static_cast<Eigen::Index>(label_ids.size()) || n == 0)
        throw ParameterError("classifier fit needs matching, non-empty data");

    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(k, d);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, k);
    for (Eigen::Index i = 0; i < n; ++i) onehot(i, label_ids[static_cast<size_t>(i)]) = 1.0;

    for (int it = 0; it < iters; ++it) {
        Eigen::MatrixXd z = embeddings * w.transpose();  // [n, k]
        z.rowwise() += b.transpose();
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mx = z.row(i).maxCoeff();
            z.row(i) = (z.row(i).array() - mx).exp();
            z.row(i) /= z.row(i).sum();
        }
        Eigen::MatrixXd diff = (z - onehot) / static_cast<double>(n);  // [n, k]
        w -= lr * (diff.transpose() * embeddings + l2 * w);
        b -= lr * diff.colwise().sum().transpose();
    }
    return SoftmaxClassifier(std::move(embedder), std::move(labels), std::move(w), std::move(b));
}

Eigen::VectorXd SoftmaxClassifier::feature(const Wave& w) const {
    return embedder_->embed_audio(w).data;
}

Eigen::VectorXd SoftmaxClassifier::posterior(const Wave& w) const {
    return posterior_from_embedding(feature(w));
}

Eigen::VectorXd SoftmaxClassifier::posterior_from_embedding(const Eigen::VectorXd& e) const {
    return softmax(w_ * e + b_);
}

void SoftmaxClassifier::save(const std::string& path) const {
    nlohmann::json j;
    j["version"] = 1;
    j["labels"] = labels_;
    std::vector<std::vector<double>> rows(static_cast<size_t>(w_.rows()),
                                          std::vector<double>(static_cast<size_t>(w_.cols())));
    for (Eigen::Index i = 0; i < w_.rows(); ++i)
        for (Eigen::Index c = 0; c < w_.cols(); ++c)
            rows[static_cast<size_t>(i)][static_cast<size_t>(c)] = w_(i, c);
    j["weights"] = rows;
    j["bias"] = std::vector<double>(b_.data(), b_.data() + b_.size());
    std::ofstream f(path);
    if (!f) throw IoError("cannot write classifier: " + path);
    f << j.dump() << "\n";
}

SoftmaxClassifier SoftmaxClassifier::load(const std::string& path,
                                          std::shared_ptr<const MelStatsEmbedder> embedder) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open classifier: " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    if (j.at("version").get<int>() != 1) throw ConfigError("unsupported classifier version");
    auto labels = j.at("labels").get<std::vector<std::string>>();
    auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
    auto bias = j.at("bias").get<std::vector<double>>();
    Eigen::MatrixXd w(static_cast<Eigen::Index>(rows.size()),
                      rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t c = 0; c < rows[i].size(); ++c)
            w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    Eigen::VectorXd b =
        Eigen::Map<Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    return SoftmaxClassifier(std::move(embedder), std::move(labels), std::move(w), std::move(b));
}

}  // namespace tse

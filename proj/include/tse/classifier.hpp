#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tse/audio.hpp"
#include "tse/embedding.hpp"

namespace tse {

// Audio classifier contract backing the FD/KL metrics: a feature vector
// per clip and a posterior over a fixed label set. A PANNs-style external
// model can implement this; the desk-scale default is a softmax classifier
// over the default embedder's space.
class ClassifierPlugin {
public:
    virtual ~ClassifierPlugin() = default;
    virtual std::string name() const = 0;
    virtual const std::vector<std::string>& labels() const = 0;
    virtual Eigen::VectorXd feature(const Wave& w) const = 0;
    virtual Eigen::VectorXd posterior(const Wave& w) const = 0;
};

// Multinomial logistic regression on 512-d embeddings, fitted with plain
// full-batch gradient descent (convex; zero init keeps it deterministic).
class SoftmaxClassifier : public ClassifierPlugin {
public:
    SoftmaxClassifier(std::shared_ptr<const MelStatsEmbedder> embedder,
                      std::vector<std::string> labels, Eigen::MatrixXd weights,
                      Eigen::VectorXd bias);

    static SoftmaxClassifier fit(std::shared_ptr<const MelStatsEmbedder> embedder,
                                 const Eigen::MatrixXd& embeddings,  // [n, 512]
                                 const std::vector<int>& label_ids,
                                 std::vector<std::string> labels, int iters = 400,
                                 double lr = 2.0, double l2 = 1e-4);

    std::string name() const override { return "softmax-embedding"; }
    const std::vector<std::string>& labels() const override { return labels_; }
    Eigen::VectorXd feature(const Wave& w) const override;
    Eigen::VectorXd posterior(const Wave& w) const override;
    Eigen::VectorXd posterior_from_embedding(const Eigen::VectorXd& e) const;

    void save(const std::string& path) const;
    static SoftmaxClassifier load(const std::string& path,
                                  std::shared_ptr<const MelStatsEmbedder> embedder);

private:
    std::shared_ptr<const MelStatsEmbedder> embedder_;
    std::vector<std::string> labels_;
    Eigen::MatrixXd w_;  // [K, 512]
    Eigen::VectorXd b_;  // [K]
};

}  // namespace tse

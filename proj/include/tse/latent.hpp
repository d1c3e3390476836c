#pragma once

#include <Eigen/Dense>

#include "tse/error.hpp"

namespace tse {

inline constexpr int kLatentChannels = 128;
inline constexpr int kLatentFrameRate = 50;

// N x C sequence of latent frames. Rows are frames at 50 Hz, columns the
// 128 latent channels. Holds x_0, x_t and x_m depending on context.
struct LatentSequence {
    Eigen::MatrixXd data;  // [N, C]

    LatentSequence() = default;
    explicit LatentSequence(Eigen::MatrixXd d) : data(std::move(d)) {}
    LatentSequence(Eigen::Index frames, Eigen::Index channels) : data(frames, channels) {}

    Eigen::Index frames() const { return data.rows(); }
    Eigen::Index channels() const { return data.cols(); }

    void require_valid() const {
        if (data.rows() < 1) throw ParameterError("latent sequence must have at least one frame");
        if (!data.allFinite()) throw NumericError("latent sequence contains non-finite values");
    }
};

// Velocity field over a latent sequence; same [N, C] shape contract.
struct Velocity {
    Eigen::MatrixXd data;  // [N, C]

    Velocity() = default;
    explicit Velocity(Eigen::MatrixXd d) : data(std::move(d)) {}

    Eigen::Index frames() const { return data.rows(); }
    Eigen::Index channels() const { return data.cols(); }
};

inline void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                               const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ParameterError(std::string("shape mismatch in ") + what);
}

}  // namespace tse

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tse/error.hpp"

namespace tse {

// The beta/alpha/alpha_bar ladder driving all diffusion arithmetic.
// Timesteps are 1-based: t in [1, T]. alpha_bar(0) == 1 by convention so
// the posterior is defined at t = 1.
class NoiseSchedule {
public:
    // Empty until assigned from build()/from_betas()/load().
    NoiseSchedule() = default;

    static NoiseSchedule build(int T, double beta_start, double beta_end);
    static NoiseSchedule from_betas(std::vector<double> betas);

    // Zero-terminal-SNR rescale: keeps sqrt(alpha_bar) at t=1 unchanged,
    // forces it to exactly zero at t=T and maps interior values linearly.
    // Betas are recomputed from consecutive alpha_bar ratios.
    NoiseSchedule rescaled_terminal() const;

    int T() const { return static_cast<int>(beta_.size()); }
    bool rescaled() const { return rescaled_; }

    double beta(int t) const { return beta_[check(t) - 1]; }
    double alpha(int t) const { return alpha_[t - 1]; }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_[check(t) - 1]; }
    double sqrt_alpha_bar(int t) const { return t == 0 ? 1.0 : sqrt_alpha_bar_[check(t) - 1]; }
    double sqrt_one_minus_alpha_bar(int t) const { return sqrt_one_minus_alpha_bar_[check(t) - 1]; }

    const std::vector<double>& betas() const { return beta_; }

    // Versioned human-readable table: {version, T, beta[], rescaled}.
    std::string to_json() const;
    static NoiseSchedule from_json(const std::string& text);
    void save(const std::string& path) const;
    static NoiseSchedule load(const std::string& path);

private:
    void derive_from_betas();
    int check(int t) const {
        if (t < 1 || t > T()) throw ParameterError("timestep out of range [1, T]");
        return t;
    }

    std::vector<double> beta_, alpha_, alpha_bar_, sqrt_alpha_bar_, sqrt_one_minus_alpha_bar_;
    bool rescaled_ = false;
};

}  // namespace tse

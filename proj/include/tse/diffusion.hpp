#pragma once

#include <cstdint>
#include <vector>

#include "tse/embedding.hpp"
#include "tse/latent.hpp"
#include "tse/schedule.hpp"

namespace tse {

// Forward-process posterior q(x_{t-1} | x_t, x_0): diagonal gaussian with
// shared scalar variance.
struct Posterior {
    Eigen::MatrixXd mean;  // [N, C]
    double variance = 0.0;
};

struct SamplerConfig {
    int steps = 50;
    double guidance_scale = 2.5;  // 3.0 for language-oriented references
    uint64_t seed = 0;
};

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
LatentSequence forward_sample(const LatentSequence& x0, const LatentSequence& eps, int t,
                              const NoiseSchedule& s);

// v_t = sqrt(alpha_bar_t) eps - sqrt(1 - alpha_bar_t) x0
Velocity velocity(const LatentSequence& x0, const LatentSequence& eps, int t,
                  const NoiseSchedule& s);

// x0 = sqrt(alpha_bar_t) x_t - sqrt(1 - alpha_bar_t) v
LatentSequence recover_x0(const LatentSequence& x_t, const Velocity& v, int t,
                          const NoiseSchedule& s);

// Posterior mean/variance from the schedule's beta_t (alpha_bar_0 := 1).
Posterior posterior(const LatentSequence& x_t, const LatentSequence& x0, int t,
                    const NoiseSchedule& s);

// Same posterior expressed through an (alpha_bar_cur, alpha_bar_prev) pair;
// used for subsequence stepping where adjacent inference steps are not
// adjacent schedule steps.
Posterior posterior_from_alpha_bars(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& x0,
                                    double alpha_bar_cur, double alpha_bar_prev);

// v = v_uncond + gamma * (v_cond - v_uncond)
Velocity cfg_combine(const Velocity& v_cond, const Velocity& v_uncond, double gamma);

// Model surface consumed by the sampler: maps (noisy latent, mixture latent,
// reference, timestep) to a velocity. Implementations must be safe for
// concurrent read-only evaluation.
class VelocityPredictor {
public:
    virtual ~VelocityPredictor() = default;
    virtual Velocity predict(const LatentSequence& x_t, const LatentSequence& x_m,
                             const ReferenceEmbedding& ref, int t) const = 0;
    virtual const ReferenceEmbedding& null_reference() const = 0;
};

// Uniform-stride inference subsequence over [1, T], always containing both
// endpoints, returned in descending order.
std::vector<int> sampling_timesteps(int T, int steps);

// Full classifier-free-guided ancestral sampling loop. Draws x_T from a
// seeded gaussian, then for each subsequence step evaluates the predictor
// with `ref` and with its null reference, combines with the guidance scale,
// recovers x0 and takes a posterior step (noiseless at the final step).
LatentSequence sample(const VelocityPredictor& predictor, const LatentSequence& mixture_latent,
                      const ReferenceEmbedding& ref, const NoiseSchedule& s,
                      const SamplerConfig& cfg);

}  // namespace tse

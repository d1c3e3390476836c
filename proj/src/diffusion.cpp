#include "tse/diffusion.hpp"

#include <cmath>

#include "tse/rng.hpp"

namespace tse {

LatentSequence forward_sample(const LatentSequence& x0, const LatentSequence& eps, int t,
                              const NoiseSchedule& s) {
    require_same_shape(x0.data, eps.data, "forward_sample");
    const double a = s.sqrt_alpha_bar(t);
    const double b = s.sqrt_one_minus_alpha_bar(t);
    return LatentSequence(a * x0.data + b * eps.data);
}

Velocity velocity(const LatentSequence& x0, const LatentSequence& eps, int t,
                  const NoiseSchedule& s) {
    require_same_shape(x0.data, eps.data, "velocity");
    const double a = s.sqrt_alpha_bar(t);
    const double b = s.sqrt_one_minus_alpha_bar(t);
    return Velocity(a * eps.data - b * x0.data);
}

LatentSequence recover_x0(const LatentSequence& x_t, const Velocity& v, int t,
                          const NoiseSchedule& s) {
    require_same_shape(x_t.data, v.data, "recover_x0");
    const double a = s.sqrt_alpha_bar(t);
    const double b = s.sqrt_one_minus_alpha_bar(t);
    return LatentSequence(a * x_t.data - b * v.data);
}

Posterior posterior(const LatentSequence& x_t, const LatentSequence& x0, int t,
                    const NoiseSchedule& s) {
    require_same_shape(x_t.data, x0.data, "posterior");
    const double ab_cur = s.alpha_bar(t);       // range-checks t
    const double ab_prev = s.alpha_bar(t - 1);  // alpha_bar(0) == 1
    const double one_minus = 1.0 - ab_cur;
    if (one_minus == 0.0) throw NumericError("posterior undefined: alpha_bar_t == 1");
    const double beta_t = s.beta(t);

    Posterior p;
    p.variance = (1.0 - ab_prev) / one_minus * beta_t;
    const double c0 = std::sqrt(ab_prev) * beta_t / one_minus;
    const double ct = std::sqrt(s.alpha(t)) * (1.0 - ab_prev) / one_minus;
    p.mean = c0 * x0.data + ct * x_t.data;
    return p;
}

Posterior posterior_from_alpha_bars(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& x0,
                                    double alpha_bar_cur, double alpha_bar_prev) {
    require_same_shape(x_t, x0, "posterior_from_alpha_bars");
    const double one_minus = 1.0 - alpha_bar_cur;
    if (one_minus == 0.0) throw NumericError("posterior undefined: alpha_bar == 1");
    const double beta_eff = 1.0 - alpha_bar_cur / alpha_bar_prev;

    Posterior p;
    p.variance = (1.0 - alpha_bar_prev) / one_minus * beta_eff;
    const double c0 = std::sqrt(alpha_bar_prev) * beta_eff / one_minus;
    const double ct = std::sqrt(alpha_bar_cur / alpha_bar_prev) * (1.0 - alpha_bar_prev) / one_minus;
    p.mean = c0 * x0 + ct * x_t;
    return p;
}

Velocity cfg_combine(const Velocity& v_cond, const Velocity& v_uncond, double gamma) {
    require_same_shape(v_cond.data, v_uncond.data, "cfg_combine");
    if (gamma < 0.0) throw ParameterError("guidance scale must be >= 0");
    return Velocity(v_uncond.data + gamma * (v_cond.data - v_uncond.data));
}

std::vector<int> sampling_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) throw ParameterError("step count must lie in [1, T]");
    std::vector<int> ts;
    ts.reserve(static_cast<size_t>(steps));
    if (steps == 1) {
        ts.push_back(T);
        return ts;
    }
    // Descending uniform stride, endpoints T and 1 included.
    for (int j = 0; j < steps; ++j) {
        const double u = static_cast<double>(j) / (steps - 1);
        int t = static_cast<int>(std::lround(T - u * (T - 1)));
        if (!ts.empty() && t >= ts.back()) t = ts.back() - 1;
        ts.push_back(t);
    }
    ts.front() = T;
    ts.back() = 1;
    return ts;
}

LatentSequence sample(const VelocityPredictor& predictor, const LatentSequence& mixture_latent,
                      const ReferenceEmbedding& ref, const NoiseSchedule& s,
                      const SamplerConfig& cfg) {
    if (!s.rescaled())
        throw ConfigError("sampler requires a terminal-rescaled schedule");
    if (cfg.guidance_scale < 0.0) throw ParameterError("guidance scale must be >= 0");
    mixture_latent.require_valid();

    const auto timesteps = sampling_timesteps(s.T(), cfg.steps);
    const Eigen::Index n = mixture_latent.frames(), c = mixture_latent.channels();

    Rng rng(cfg.seed);
    auto gaussian = [&](Eigen::MatrixXd& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
    };

    LatentSequence x_t(n, c);
    gaussian(x_t.data);  // x_T ~ N(0, I)

    LatentSequence x0_est;
    Eigen::MatrixXd noise(n, c);
    for (size_t k = 0; k < timesteps.size(); ++k) {
        const int t = timesteps[k];
        const bool final_step = (k + 1 == timesteps.size());
        const double ab_cur = s.alpha_bar(t);
        const double ab_prev = final_step ? 1.0 : s.alpha_bar(timesteps[k + 1]);

        const Velocity v_cond = predictor.predict(x_t, mixture_latent, ref, t);
        const Velocity v_uncond = predictor.predict(x_t, mixture_latent, predictor.null_reference(), t);
        const Velocity v = cfg_combine(v_cond, v_uncond, cfg.guidance_scale);
        x0_est = recover_x0(x_t, v, t, s);

        if (final_step) break;  // last transition is noiseless
        Posterior p = posterior_from_alpha_bars(x_t.data, x0_est.data, ab_cur, ab_prev);
        gaussian(noise);
        x_t.data = p.mean + std::sqrt(std::max(p.variance, 0.0)) * noise;
    }
    return x0_est;
}

}  // namespace tse

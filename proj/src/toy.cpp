#include "tse/toy.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "tse/error.hpp"

namespace fs = std::filesystem;

namespace tse::toy {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Attack/release envelope; sustain at 1.
std::vector<double> envelope(size_t n, double attack_s, double release_s) {
    std::vector<double> env(n, 1.0);
    const auto a = static_cast<size_t>(attack_s * kSampleRate);
    const auto r = static_cast<size_t>(release_s * kSampleRate);
    for (size_t i = 0; i < std::min(a, n); ++i) env[i] = static_cast<double>(i) / a;
    for (size_t i = 0; i < std::min(r, n); ++i)
        env[n - 1 - i] = std::min(env[n - 1 - i], static_cast<double>(i) / r);
    return env;
}

// Sum of constant-frequency partials via complex recurrence oscillators.
struct PartialBank {
    struct Osc {
        double re, im, cr, ci, amp;
    };
    std::vector<Osc> oscs;

    void add(double freq_hz, double amp, double phase) {
        const double w = kTwoPi * freq_hz / kSampleRate;
        oscs.push_back({std::cos(phase), std::sin(phase), std::cos(w), std::sin(w), amp});
    }
    double tick() {
        double acc = 0.0;
        for (auto& o : oscs) {
            acc += o.amp * o.im;
            const double re = o.re * o.cr - o.im * o.ci;
            o.im = o.re * o.ci + o.im * o.cr;
            o.re = re;
        }
        return acc;
    }
};

size_t draw_len(Rng& rng, double lo, double hi) {
    return static_cast<size_t>(rng.uniform(lo, hi) * kSampleRate);
}

}  // namespace

const std::vector<std::string>& class_names() {
    static const std::vector<std::string> names = {
        "tone_low", "tone_high", "harmonic_stack", "chirp_up",
        "chirp_down", "band_noise_low", "band_noise_high", "pulse_train"};
    return names;
}

Wave render_event(int class_index, Rng& rng, double dur_lo_s, double dur_hi_s) {
    if (class_index < 0 || class_index >= static_cast<int>(class_names().size()))
        throw ParameterError("toy class index out of range");
    const size_t n = draw_len(rng, dur_lo_s, dur_hi_s);
    std::vector<double> x(n, 0.0);
    const double amp = rng.uniform(0.25, 0.6);

    switch (class_index) {
        case 0: {  // tone_low: low sine with slow AM
            const double f0 = rng.uniform(110.0, 190.0);
            const double am_rate = rng.uniform(2.0, 4.0);
            const double am_depth = rng.uniform(0.2, 0.4);
            double ph = rng.uniform(0.0, kTwoPi);
            for (size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / kSampleRate;
                x[i] = amp * (1.0 - am_depth + am_depth * std::sin(kTwoPi * am_rate * t)) *
                       std::sin(kTwoPi * f0 * t + ph);
            }
            break;
        }
        case 1: {  // tone_high: high sine with tremolo
            const double f0 = rng.uniform(950.0, 1300.0);
            const double trem = rng.uniform(6.0, 9.0);
            double ph = rng.uniform(0.0, kTwoPi);
            for (size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / kSampleRate;
                x[i] = amp * (0.7 + 0.3 * std::sin(kTwoPi * trem * t)) *
                       std::sin(kTwoPi * f0 * t + ph);
            }
            break;
        }
        case 2: {  // harmonic_stack: f0 + 4 partials at 1/k amplitudes
            const double f0 = rng.uniform(140.0, 240.0);
            PartialBank bank;
            for (int k = 1; k <= 5; ++k)
                bank.add(f0 * k * rng.uniform(0.999, 1.001), amp / k, rng.uniform(0.0, kTwoPi));
            for (size_t i = 0; i < n; ++i) x[i] = bank.tick();
            break;
        }
        case 3:    // chirp_up
        case 4: {  // chirp_down
            double fa = rng.uniform(200.0, 350.0);
            double fb = rng.uniform(900.0, 1300.0);
            if (class_index == 4) std::swap(fa, fb);
            const double ph0 = rng.uniform(0.0, kTwoPi);
            for (size_t i = 0; i < n; ++i) {
                const double u = static_cast<double>(i) / static_cast<double>(n);
                const double t = static_cast<double>(i) / kSampleRate;
                // Linear sweep: instantaneous phase is the frequency integral.
                const double f_int = fa * t + 0.5 * (fb - fa) * u * t;
                x[i] = amp * std::sin(kTwoPi * f_int + ph0);
            }
            break;
        }
        case 5:    // band_noise_low
        case 6: {  // band_noise_high
            const double lo = class_index == 5 ? 230.0 : 900.0;
            const double hi = class_index == 5 ? 480.0 : 1350.0;
            PartialBank bank;
            for (int k = 0; k < 60; ++k)
                bank.add(rng.uniform(lo, hi), amp * rng.uniform(0.05, 0.2),
                         rng.uniform(0.0, kTwoPi));
            for (size_t i = 0; i < n; ++i) x[i] = bank.tick();
            break;
        }
        case 7: {  // pulse_train: decaying bursts on a carrier
            const double carrier = rng.uniform(480.0, 700.0);
            const double rate = rng.uniform(6.0, 10.0);
            const double decay = rng.uniform(0.02, 0.05);
            const double ph = rng.uniform(0.0, kTwoPi);
            const double period = kSampleRate / rate;
            for (size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / kSampleRate;
                const double tp = std::fmod(static_cast<double>(i), period) / kSampleRate;
                x[i] = amp * std::exp(-tp / decay) * std::sin(kTwoPi * carrier * t + ph);
            }
            break;
        }
        default: break;
    }

    const auto env = envelope(n, rng.uniform(0.02, 0.05), rng.uniform(0.06, 0.15));
    for (size_t i = 0; i < n; ++i) x[i] *= env[i];
    return {std::move(x), kSampleRate};
}

Wave render_background(Rng& rng, double seconds) {
    const auto n = static_cast<size_t>(seconds * kSampleRate);
    PartialBank bank;
    for (int k = 0; k < 120; ++k) {
        const double f = rng.uniform(60.0, 1450.0);
        bank.add(f, 0.03 / std::sqrt(f / 60.0), rng.uniform(0.0, kTwoPi));
    }
    std::vector<double> x(n);
    for (size_t i = 0; i < n; ++i) x[i] = bank.tick();
    return {std::move(x), kSampleRate};
}

void write_corpus(const std::string& dir, const CorpusSpec& spec) {
    std::vector<int> classes = spec.class_indices;
    if (classes.empty())
        for (int c = 0; c < static_cast<int>(class_names().size()); ++c) classes.push_back(c);

    char name[256];
    for (int c : classes) {
        const std::string& cls = class_names()[static_cast<size_t>(c)];
        fs::create_directories(fs::path(dir) / cls);
        for (int i = 0; i < spec.per_class; ++i) {
            Rng rng(derive_seed(spec.seed, 0x70c0ULL, static_cast<uint64_t>(c),
                                static_cast<uint64_t>(i)));
            Wave w = render_event(c, rng, spec.clip_lo_s, spec.clip_hi_s);
            std::snprintf(name, sizeof(name), "%s_%03d.wav", cls.c_str(), i);
            write_wav((fs::path(dir) / cls / name).string(), w, WavEncoding::Float32);
        }
    }
    fs::create_directories(fs::path(dir) / "background");
    for (int i = 0; i < spec.backgrounds; ++i) {
        Rng rng(derive_seed(spec.seed, 0xb6b6ULL, static_cast<uint64_t>(i)));
        Wave w = render_background(rng, spec.background_s);
        std::snprintf(name, sizeof(name), "background_%03d.wav", i);
        write_wav((fs::path(dir) / "background" / name).string(), w, WavEncoding::Float32);
    }
}

}  // namespace tse::toy

#include "tse/codec.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace tse {

namespace {
// Fixed latent gain; set once so toy-corpus latent RMS lands near unity.
constexpr double kLatentGain = 6.0;
// Floor for the overlap-add window sum; only the trailing boundary samples
// of the final hop ever reach it.
constexpr double kWsumFloor = 1e-3;
}  // namespace

SubbandCodec::SubbandCodec() {
    window_.resize(kWindow);
    for (int n = 0; n < kWindow; ++n)
        window_(n) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / kWindow);
    const double wsum = window_.sum();  // 480 for the periodic hann

    analysis_.resize(kWindow, 2 * kBands);
    synthesis_.resize(2 * kBands, kWindow);
    for (int k = 0; k < kBands; ++k) {
        const double ck = (k == 0 ? 1.0 : 2.0) / wsum * kLatentGain;
        for (int n = 0; n < kWindow; ++n) {
            const double th = 2.0 * std::numbers::pi * k * n / kWindow;
            analysis_(n, 2 * k) = std::cos(th) * ck;
            analysis_(n, 2 * k + 1) = -std::sin(th) * ck;
            synthesis_(2 * k, n) = 0.5 * std::cos(th) / kLatentGain;
            synthesis_(2 * k + 1, n) = -0.5 * std::sin(th) / kLatentGain;
        }
    }
}

LatentSequence SubbandCodec::encode(const Wave& y) const {
    if (y.sample_rate != sample_rate())
        throw InputError("codec expects 24 kHz input (resampling belongs to ingestion)");
    if (y.samples.empty()) throw InputError("cannot encode empty waveform");
    for (double s : y.samples)
        if (!std::isfinite(s)) throw InputError("waveform contains non-finite samples");

    const int n_samples = static_cast<int>(y.samples.size());
    const int n_frames = (n_samples + kHop - 1) / kHop;  // ceil(samples / 480)

    // Frame i covers samples [(i-1)*hop, (i+1)*hop), zero-padded outside.
    Eigen::MatrixXd frames = Eigen::MatrixXd::Zero(n_frames, kWindow);
    for (int i = 0; i < n_frames; ++i) {
        const int start = (i - 1) * kHop;
        for (int n = 0; n < kWindow; ++n) {
            const int s = start + n;
            if (s >= 0 && s < n_samples) frames(i, n) = y.samples[static_cast<size_t>(s)] * window_(n);
        }
    }
    return LatentSequence(frames * analysis_);
}

Wave SubbandCodec::decode(const LatentSequence& x) const {
    if (x.channels() != channels())
        throw ParameterError("latent channel count must be 128");
    x.require_valid();

    const int n_frames = static_cast<int>(x.frames());
    const int n_samples = n_frames * kHop;
    Eigen::MatrixXd frames = x.data * synthesis_;  // [N, 960]

    std::vector<double> ola(static_cast<size_t>(n_samples), 0.0);
    std::vector<double> wsum(static_cast<size_t>(n_samples), 0.0);
    for (int i = 0; i < n_frames; ++i) {
        const int start = (i - 1) * kHop;
        for (int n = 0; n < kWindow; ++n) {
            const int s = start + n;
            if (s >= 0 && s < n_samples) {
                ola[static_cast<size_t>(s)] += frames(i, n);
                wsum[static_cast<size_t>(s)] += window_(n);
            }
        }
    }
    Wave out;
    out.sample_rate = sample_rate();
    out.samples.resize(static_cast<size_t>(n_samples));
    for (int s = 0; s < n_samples; ++s)
        out.samples[static_cast<size_t>(s)] =
            ola[static_cast<size_t>(s)] / std::max(wsum[static_cast<size_t>(s)], kWsumFloor);
    return out;
}

void save_latent(const std::string& path, const LatentSequence& x) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open latent file for writing: " + path);
    const char magic[8] = {'T', 'S', 'E', 'L', 'A', 'T', '0', '1'};
    f.write(magic, 8);
    const uint32_t hdr[3] = {static_cast<uint32_t>(x.frames()), static_cast<uint32_t>(x.channels()),
                             static_cast<uint32_t>(kLatentFrameRate)};
    f.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    for (Eigen::Index i = 0; i < x.frames(); ++i)
        for (Eigen::Index j = 0; j < x.channels(); ++j) {
            const double v = x.data(i, j);
            f.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    if (!f) throw IoError("short write to latent file: " + path);
}

LatentSequence load_latent(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open latent file: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "TSELAT01", 8) != 0)
        throw IoError("bad latent file magic: " + path);
    uint32_t hdr[3];
    f.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
    if (!f) throw IoError("truncated latent file: " + path);
    LatentSequence x(static_cast<Eigen::Index>(hdr[0]), static_cast<Eigen::Index>(hdr[1]));
    for (Eigen::Index i = 0; i < x.frames(); ++i)
        for (Eigen::Index j = 0; j < x.channels(); ++j) {
            double v;
            f.read(reinterpret_cast<char*>(&v), sizeof(v));
            if (!f) throw IoError("truncated latent file: " + path);
            x.data(i, j) = v;
        }
    return x;
}

}  // namespace tse

#pragma once

#include <memory>
#include <string>

#include "tse/audio.hpp"
#include "tse/latent.hpp"

namespace tse {

// Waveform <-> latent transform contract. 24 kHz in, 50 Hz / 128-channel
// latents out; N = ceil(samples / 480). An external VAE can be swapped in
// behind this interface (encoding with its posterior mean).
class CodecPlugin {
public:
    virtual ~CodecPlugin() = default;
    virtual std::string name() const = 0;
    virtual int sample_rate() const { return kSampleRate; }
    virtual int frame_rate() const { return kLatentFrameRate; }
    virtual int channels() const { return kLatentChannels; }
    virtual LatentSequence encode(const Wave& y) const = 0;
    virtual Wave decode(const LatentSequence& x) const = 0;
};

// Training-free default codec: a 64-band complex DFT filterbank (hann
// window 960, hop 480) storing real/imaginary parts as 128 channels, with
// a fixed gain putting toy-corpus latents near unit scale. Linear and
// invertible up to boundary frames for signals inside its analysis band
// (roughly 0..1.5 kHz).
class SubbandCodec : public CodecPlugin {
public:
    static constexpr int kHop = 480;
    static constexpr int kWindow = 960;
    static constexpr int kBands = 64;

    SubbandCodec();
    std::string name() const override { return "subband-dft"; }
    LatentSequence encode(const Wave& y) const override;
    Wave decode(const LatentSequence& x) const override;

private:
    Eigen::MatrixXd analysis_;   // [960, 128]
    Eigen::MatrixXd synthesis_;  // [128, 960]
    Eigen::VectorXd window_;     // [960]
};

// Versioned binary latent dump with an (N, C, frame_rate) header.
void save_latent(const std::string& path, const LatentSequence& x);
LatentSequence load_latent(const std::string& path);

}  // namespace tse

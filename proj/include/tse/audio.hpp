#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tse/error.hpp"

namespace tse {

inline constexpr int kSampleRate = 24000;

// Mono waveform with its sample rate. Samples are nominally in [-1, 1].
struct Wave {
    std::vector<double> samples;
    int sample_rate = kSampleRate;

    double duration_s() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

// RIFF/WAVE reader: PCM 16/24/32-bit and IEEE float 32/64, any channel
// count (channels are averaged to mono).
Wave read_wav(const std::string& path);

enum class WavEncoding { Float32, Pcm16 };

void write_wav(const std::string& path, const Wave& w, WavEncoding enc = WavEncoding::Float32);

// Windowed-sinc resampling to `target_rate`. Returns the input unchanged
// when rates already match.
Wave resample(const Wave& w, int target_rate);

double rms(const std::vector<double>& samples);
double peak(const std::vector<double>& samples);

}  // namespace tse

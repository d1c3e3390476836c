#include "tse/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace tse {

namespace {

struct Reader {
    const uint8_t* p;
    size_t n;
    size_t pos = 0;

    void need(size_t k) const {
        if (pos + k > n) throw IoError("truncated WAV file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, p + pos, 4);
        pos += 4;
        return v;
    }
    uint16_t u16() {
        need(2);
        uint16_t v;
        std::memcpy(&v, p + pos, 2);
        pos += 2;
        return v;
    }
    void tag(char out[4]) {
        need(4);
        std::memcpy(out, p + pos, 4);
        pos += 4;
    }
};

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    b.insert(b.end(), {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)});
}
void put_u16(std::vector<uint8_t>& b, uint16_t v) {
    b.insert(b.end(), {uint8_t(v), uint8_t(v >> 8)});
}
void put_tag(std::vector<uint8_t>& b, const char* t) { b.insert(b.end(), t, t + 4); }

}  // namespace

Wave read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open WAV file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{bytes.data(), bytes.size()};

    char tag[4];
    r.tag(tag);
    if (std::memcmp(tag, "RIFF", 4) != 0) throw IoError("not a RIFF file: " + path);
    r.u32();
    r.tag(tag);
    if (std::memcmp(tag, "WAVE", 4) != 0) throw IoError("not a WAVE file: " + path);

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    bool have_fmt = false;
    Wave w;
    std::vector<double> interleaved;

    while (r.pos + 8 <= r.n) {
        r.tag(tag);
        uint32_t size = r.u32();
        size_t body = r.pos;
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            format = r.u16();
            channels = r.u16();
            rate = r.u32();
            r.u32();
            r.u16();
            bits = r.u16();
            if (format == 0xFFFE && size >= 40) {  // WAVE_FORMAT_EXTENSIBLE
                r.u16();
                r.u16();
                r.u32();
                format = r.u16();
            }
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw IoError("WAV data chunk before fmt chunk: " + path);
            if (channels == 0) throw IoError("WAV with zero channels: " + path);
            r.need(size);
            const uint8_t* d = r.p + r.pos;
            size_t count = 0;
            auto push = [&](double v) { interleaved.push_back(v); };
            if (format == 1 && bits == 16) {
                count = size / 2;
                for (size_t i = 0; i < count; ++i) {
                    int16_t v;
                    std::memcpy(&v, d + 2 * i, 2);
                    push(v / 32768.0);
                }
            } else if (format == 1 && bits == 24) {
                count = size / 3;
                for (size_t i = 0; i < count; ++i) {
                    int32_t v = (d[3 * i] << 8) | (d[3 * i + 1] << 16) | (d[3 * i + 2] << 24);
                    push((v >> 8) / 8388608.0);
                }
            } else if (format == 1 && bits == 32) {
                count = size / 4;
                for (size_t i = 0; i < count; ++i) {
                    int32_t v;
                    std::memcpy(&v, d + 4 * i, 4);
                    push(v / 2147483648.0);
                }
            } else if (format == 3 && bits == 32) {
                count = size / 4;
                for (size_t i = 0; i < count; ++i) {
                    float v;
                    std::memcpy(&v, d + 4 * i, 4);
                    push(v);
                }
            } else if (format == 3 && bits == 64) {
                count = size / 8;
                for (size_t i = 0; i < count; ++i) {
                    double v;
                    std::memcpy(&v, d + 8 * i, 8);
                    push(v);
                }
            } else {
                throw IoError("unsupported WAV encoding in " + path);
            }
        }
        r.pos = body + size + (size & 1);  // chunks are word-aligned
    }
    if (!have_fmt || interleaved.empty()) throw IoError("WAV missing fmt/data chunk: " + path);

    w.sample_rate = static_cast<int>(rate);
    const size_t frames = interleaved.size() / channels;
    w.samples.resize(frames);
    for (size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) acc += interleaved[i * channels + c];
        w.samples[i] = acc / channels;
    }
    return w;
}

void write_wav(const std::string& path, const Wave& w, WavEncoding enc) {
    std::vector<uint8_t> b;
    const uint32_t n = static_cast<uint32_t>(w.samples.size());
    const bool f32 = (enc == WavEncoding::Float32);
    const uint32_t bytes_per = f32 ? 4 : 2;
    const uint32_t data_size = n * bytes_per;

    put_tag(b, "RIFF");
    put_u32(b, 4 + (8 + 16) + (f32 ? 8 + 4 : 0) + 8 + data_size);
    put_tag(b, "WAVE");
    put_tag(b, "fmt ");
    put_u32(b, 16);
    put_u16(b, f32 ? 3 : 1);
    put_u16(b, 1);
    put_u32(b, static_cast<uint32_t>(w.sample_rate));
    put_u32(b, static_cast<uint32_t>(w.sample_rate) * bytes_per);
    put_u16(b, static_cast<uint16_t>(bytes_per));
    put_u16(b, static_cast<uint16_t>(8 * bytes_per));
    if (f32) {  // fact chunk is expected for non-PCM formats
        put_tag(b, "fact");
        put_u32(b, 4);
        put_u32(b, n);
    }
    put_tag(b, "data");
    put_u32(b, data_size);
    for (double s : w.samples) {
        if (f32) {
            float v = static_cast<float>(s);
            uint32_t u;
            std::memcpy(&u, &v, 4);
            put_u32(b, u);
        } else {
            double c = std::clamp(s, -1.0, 1.0);
            auto v = static_cast<int16_t>(std::lrint(c * 32767.0));
            put_u16(b, static_cast<uint16_t>(v));
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open WAV file for writing: " + path);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!f) throw IoError("short write to WAV file: " + path);
}

Wave resample(const Wave& w, int target_rate) {
    if (w.sample_rate <= 0) throw InputError("waveform has invalid sample rate");
    if (w.sample_rate == target_rate) return w;

    const double ratio = static_cast<double>(w.sample_rate) / target_rate;
    const double cutoff = 0.92 * std::min(1.0, 1.0 / ratio);  // of input Nyquist
    const int half_taps = 24;
    const size_t out_n = static_cast<size_t>(std::ceil(w.samples.size() / ratio));

    Wave out;
    out.sample_rate = target_rate;
    out.samples.resize(out_n);
    const auto& x = w.samples;
    const double in_n = static_cast<double>(x.size());

    for (size_t i = 0; i < out_n; ++i) {
        const double center = i * ratio;
        const int j0 = static_cast<int>(std::floor(center)) - half_taps + 1;
        const int j1 = static_cast<int>(std::floor(center)) + half_taps;
        double acc = 0.0;
        for (int j = j0; j <= j1; ++j) {
            if (j < 0 || j >= in_n) continue;
            const double d = center - j;
            double sinc = cutoff;
            if (d != 0.0) {
                const double a = std::numbers::pi * d;
                sinc = std::sin(cutoff * a) / a;
            }
            // Hann window over the tap span
            const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * d / half_taps);
            acc += x[static_cast<size_t>(j)] * sinc * win;
        }
        out.samples[i] = acc;
    }
    return out;
}

double rms(const std::vector<double>& samples) {
    if (samples.empty()) return 0.0;
    double acc = 0.0;
    for (double s : samples) acc += s * s;
    return std::sqrt(acc / static_cast<double>(samples.size()));
}

double peak(const std::vector<double>& samples) {
    double m = 0.0;
    for (double s : samples) m = std::max(m, std::abs(s));
    return m;
}

}  // namespace tse

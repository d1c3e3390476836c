#pragma once

#include <string>
#include <vector>

#include "tse/audio.hpp"
#include "tse/rng.hpp"

namespace tse::toy {

// Eight synthetic sound families, spectrally distinct and band-limited to
// the default codec's analysis band; plus a steady "background" texture.
// Desk-scale stand-in for a real event corpus.
const std::vector<std::string>& class_names();

// Renders one event of the given class with seeded per-clip variation.
Wave render_event(int class_index, Rng& rng, double dur_lo_s, double dur_hi_s);

Wave render_background(Rng& rng, double seconds);

struct CorpusSpec {
    int per_class = 32;
    int backgrounds = 16;
    double clip_lo_s = 0.6;
    double clip_hi_s = 1.8;
    double background_s = 2.5;
    uint64_t seed = 0;
    std::vector<int> class_indices;  // empty = all 8
};

// Writes <dir>/<class>/<class>_NNN.wav trees (plus <dir>/background/...).
void write_corpus(const std::string& dir, const CorpusSpec& spec);

}  // namespace tse::toy

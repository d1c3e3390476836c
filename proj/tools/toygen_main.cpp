// tse-toygen: generates the synthetic desk-scale corpus (8 event classes
// plus steady backgrounds) used by the examples and the acceptance runs.

#include <iostream>

#include "CLI11.hpp"

#include "tse/error.hpp"
#include "tse/toy.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Synthetic toy corpus generator (8 sound classes + backgrounds)"};
    std::string out_dir;
    tse::toy::CorpusSpec spec;
    app.add_option("--out", out_dir, "Output corpus directory")->required();
    app.add_option("--per-class", spec.per_class, "Clips per class (default 32)");
    app.add_option("--backgrounds", spec.backgrounds, "Background clips (default 16)");
    app.add_option("--clip-lo", spec.clip_lo_s, "Min clip length in seconds");
    app.add_option("--clip-hi", spec.clip_hi_s, "Max clip length in seconds");
    app.add_option("--background-seconds", spec.background_s, "Background clip length");
    app.add_option("--seed", spec.seed, "Generator seed");
    app.add_option("--classes", spec.class_indices, "Class indices to generate (default all)");

    CLI11_PARSE(app, argc, argv);
    try {
        tse::toy::write_corpus(out_dir, spec);
    } catch (const tse::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cout << "toy corpus written to " << out_dir << "\n";
    return 0;
}

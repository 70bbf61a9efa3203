#ifndef GRATMAG_TOOLS_REPRODUCE_HPP
#define GRATMAG_TOOLS_REPRODUCE_HPP

#include <cstdint>
#include <string>

#include "gratmag/fieldmodel.hpp"

struct ReproduceArgs {
    std::string figure;     // fig2 | fig3 | fig4
    std::string out_dir = ".";
    std::string cache_dir;  // defaults to out_dir
    std::string manifest;   // defaults to <out_dir>/<figure>.manifest.json
    std::uint64_t seed = 0;
    int threads = 1;
};

int run_reproduce(const ReproduceArgs& args);

// Rough (strength, offset, bias) seed read off the map itself, assuming the
// scan plane faces the sensor along z. Shared with the fit-tip subcommand.
gratmag::field::FitInit heuristic_fit_init(const gratmag::field::FieldMap& map,
                                           gratmag::field::TipVariant family);

#endif

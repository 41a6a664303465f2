#pragma once

#include <cstdint>
#include <string>

#include "volscreen/volume.hpp"

namespace volscreen {

struct GenConfig {
    std::uint64_t seed = 0;
    std::size_t n_good = 200;
    std::size_t n_bad_per_kind = 5;
    std::size_t slices = 8;
    std::size_t height = 64;
    std::size_t width = 64;
};

// Structured phantom: nested ellipses with seeded jitter in center (+-5% of
// extent), radii (+-10%) and ring intensity (+-0.1), an ellipsoid profile
// along the slice axis, plus additive noise of amplitude 0.02. Deterministic
// in the seed.
Volume gen_good(std::uint64_t seed, std::size_t slices, std::size_t height,
                std::size_t width);

// Applies one bad-data corruption:
//   blank_noise  - uniform noise of amplitude 0.05 around level 0.1, no structure
//   wrong_plane  - swaps the slice and height axes, then re-resizes slices to
//                  the original height x width (requires S >= 2)
//   out_of_fov   - translates content by 70% of width and height, zero-fill
//   low_quality  - 5x5 box blur applied 3 times plus noise of amplitude 0.15
Volume corrupt(const Volume& v, CorruptionKind kind, std::uint64_t seed);

// Writes n_good good volumes and n_bad_per_kind volumes per corruption kind
// under out_dir, plus manifest.csv. Item seeds derive from the config seed
// via hash64(cfg.seed, item_index) over the manifest order, so generation
// is reproducible item by item.
DatasetManifest gen_corpus(const GenConfig& cfg, const std::string& out_dir);

}  // namespace volscreen

#include "volscreen/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "volscreen/rng.hpp"

namespace fs = std::filesystem;

namespace volscreen {

namespace {

constexpr std::array<CorruptionKind, 4> kKindOrder = {
    CorruptionKind::blank_noise, CorruptionKind::wrong_plane,
    CorruptionKind::out_of_fov, CorruptionKind::low_quality};

// Ring radii as fractions of the slice extent, outermost first, with the
// matching base intensities. Intensities stay above 0.5 after the +-0.1
// jitter so "bright" (> 0.5) always means phantom structure.
constexpr std::array<double, 3> kBaseRadius = {0.36, 0.26, 0.15};
constexpr std::array<double, 3> kBaseIntensity = {0.62, 0.78, 0.92};

}  // namespace

Volume gen_good(std::uint64_t seed, std::size_t slices, std::size_t height,
                std::size_t width) {
    if (slices < 1 || height < 1 || width < 1)
        throw std::invalid_argument("gen_good: dimensions must be >= 1");

    Rng rng(seed);
    const double cx = 0.5 + rng.uniform(-0.05, 0.05);
    const double cy = 0.5 + rng.uniform(-0.05, 0.05);

    std::array<double, 3> radius{}, intensity{};
    for (std::size_t r = 0; r < 3; ++r) {
        radius[r] = kBaseRadius[r] * (1.0 + rng.uniform(-0.10, 0.10));
        intensity[r] = kBaseIntensity[r] + rng.uniform(-0.10, 0.10);
    }
    const double eccentricity = 0.80 + rng.uniform(-0.05, 0.05);  // ry/rx

    Volume v("", slices, height, width);
    for (std::size_t s = 0; s < slices; ++s) {
        // ellipsoid cross-section: rings shrink toward the outer slices
        const double t = (static_cast<double>(s) + 0.5) / static_cast<double>(slices);
        const double axial = std::sqrt(std::max(0.0, 1.0 - std::pow((t - 0.5) / 0.62, 2.0)));
        for (std::size_t y = 0; y < height; ++y) {
            const double vv = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
            for (std::size_t x = 0; x < width; ++x) {
                const double uu = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
                double value = 0.0;
                for (std::size_t r = 0; r < 3; ++r) {
                    const double rx = radius[r] * axial;
                    const double ry = radius[r] * eccentricity * axial;
                    if (rx <= 0.0 || ry <= 0.0) break;
                    const double dx = (uu - cx) / rx;
                    const double dy = (vv - cy) / ry;
                    if (dx * dx + dy * dy <= 1.0) value = intensity[r];
                }
                value += rng.uniform(-0.02, 0.02);
                v.at(s, y, x) = std::clamp(value, 0.0, 1.0);
            }
        }
    }
    return v;
}

Volume corrupt(const Volume& v, CorruptionKind kind, std::uint64_t seed) {
    Rng rng(seed);
    switch (kind) {
        case CorruptionKind::blank_noise: {
            Volume out(v.id, v.slices, v.height, v.width);
            for (double& vox : out.voxels) vox = 0.1 + rng.uniform(-0.05, 0.05);
            return out;
        }
        case CorruptionKind::wrong_plane: {
            if (v.slices < 2)
                throw std::invalid_argument("wrong_plane needs at least 2 slices");
            // swap slice and height axes: S x H x W -> H x S x W
            Volume t(v.id, v.height, v.slices, v.width);
            for (std::size_t s = 0; s < v.slices; ++s)
                for (std::size_t y = 0; y < v.height; ++y)
                    for (std::size_t x = 0; x < v.width; ++x)
                        t.at(y, s, x) = v.at(s, y, x);
            return preprocess(t, v.height, v.width);
        }
        case CorruptionKind::out_of_fov: {
            // diagonal shift; 0.64 per axis leaves a small corner remnant so the
            // bright centroid moves >= 0.6*W while most structure exits the FOV
            const long dx = (rng.below(2) ? 1 : -1) *
                            std::lround(0.64 * static_cast<double>(v.width));
            const long dy = (rng.below(2) ? 1 : -1) *
                            std::lround(0.64 * static_cast<double>(v.height));
            Volume out(v.id, v.slices, v.height, v.width);
            for (std::size_t s = 0; s < v.slices; ++s)
                for (std::size_t y = 0; y < v.height; ++y)
                    for (std::size_t x = 0; x < v.width; ++x) {
                        const long sy = static_cast<long>(y) - dy;
                        const long sx = static_cast<long>(x) - dx;
                        if (sy >= 0 && sy < static_cast<long>(v.height) && sx >= 0 &&
                            sx < static_cast<long>(v.width))
                            out.at(s, y, x) = v.at(s, static_cast<std::size_t>(sy),
                                                   static_cast<std::size_t>(sx));
                    }
            return out;
        }
        case CorruptionKind::low_quality: {
            Volume out = v;
            Volume tmp = v;
            for (int pass = 0; pass < 3; ++pass) {
                for (std::size_t s = 0; s < v.slices; ++s)
                    for (std::size_t y = 0; y < v.height; ++y)
                        for (std::size_t x = 0; x < v.width; ++x) {
                            double sum = 0.0;
                            std::size_t n = 0;
                            for (long ky = -2; ky <= 2; ++ky)
                                for (long kx = -2; kx <= 2; ++kx) {
                                    const long yy = static_cast<long>(y) + ky;
                                    const long xx = static_cast<long>(x) + kx;
                                    if (yy < 0 || yy >= static_cast<long>(v.height) ||
                                        xx < 0 || xx >= static_cast<long>(v.width))
                                        continue;
                                    sum += out.at(s, static_cast<std::size_t>(yy),
                                                  static_cast<std::size_t>(xx));
                                    ++n;
                                }
                            tmp.at(s, y, x) = sum / static_cast<double>(n);
                        }
                std::swap(out.voxels, tmp.voxels);
            }
            for (double& vox : out.voxels)
                vox = std::clamp(vox + rng.uniform(-0.15, 0.15), 0.0, 1.0);
            return out;
        }
    }
    throw std::logic_error("bad corruption kind value");
}

DatasetManifest gen_corpus(const GenConfig& cfg, const std::string& out_dir) {
    if (cfg.slices < 2)
        throw std::invalid_argument("gen_corpus: slices must be >= 2");
    fs::create_directories(out_dir);

    DatasetManifest m;
    m.root = out_dir;

    struct Item {
        std::string id;
        Label label;
        std::optional<CorruptionKind> kind;
    };
    std::vector<Item> items;
    items.reserve(cfg.n_good + 4 * cfg.n_bad_per_kind);
    for (std::size_t i = 0; i < cfg.n_good; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "good_%04zu", i);
        items.push_back({id, Label::good, std::nullopt});
    }
    for (CorruptionKind kind : kKindOrder) {
        for (std::size_t i = 0; i < cfg.n_bad_per_kind; ++i) {
            char id[48];
            std::snprintf(id, sizeof(id), "bad_%s_%04zu", to_string(kind).c_str(), i);
            items.push_back({id, Label::bad, kind});
        }
    }

    for (std::size_t index = 0; index < items.size(); ++index) {
        const Item& item = items[index];
        const std::uint64_t item_seed = hash64(cfg.seed, index);
        Volume v;
        if (item.label == Label::good) {
            v = gen_good(item_seed, cfg.slices, cfg.height, cfg.width);
        } else {
            const Volume phantom =
                gen_good(hash64(item_seed, 0), cfg.slices, cfg.height, cfg.width);
            v = corrupt(phantom, *item.kind, hash64(item_seed, 1));
        }
        v.id = item.id;
        save_volume(v, (fs::path(out_dir) / item.id).string());
        m.entries.push_back({item.id, item.id, item.label, item.kind});
    }

    save_manifest(m, (fs::path(out_dir) / "manifest.csv").string());
    return m;
}

}  // namespace volscreen

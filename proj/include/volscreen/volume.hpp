#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace volscreen {

// 3-D stack of grayscale slices, intensities in [0, 1]. The unit of screening.
struct Volume {
    std::string id;
    std::size_t slices = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> voxels;  // [slice][row][col], row-major
    std::string source_path;     // empty if not loaded from disk

    Volume() = default;
    Volume(std::string id_, std::size_t s, std::size_t h, std::size_t w)
        : id(std::move(id_)), slices(s), height(h), width(w), voxels(s * h * w, 0.0) {}

    double& at(std::size_t s, std::size_t y, std::size_t x) {
        return voxels[(s * height + y) * width + x];
    }
    double at(std::size_t s, std::size_t y, std::size_t x) const {
        return voxels[(s * height + y) * width + x];
    }
};

enum class Label { good, bad, unknown };

enum class CorruptionKind { blank_noise, wrong_plane, out_of_fov, low_quality };

std::string to_string(Label l);
std::string to_string(CorruptionKind k);
Label label_from_string(const std::string& s);
CorruptionKind corruption_from_string(const std::string& s);

struct DatasetEntry {
    std::string id;
    std::string path;  // volume directory, relative to manifest root
    Label label = Label::unknown;
    std::optional<CorruptionKind> corruption_kind;
};

struct DatasetManifest {
    std::vector<DatasetEntry> entries;  // order is stable
    std::string root;
};

// Loads a directory of slice_NNNN.pgm files (P5, maxval 255, contiguous
// indices from 0) into a Volume with intensities v/255.
Volume load_volume(const std::string& dir);

// Writes slice_NNNN.pgm files; round-trip error is bounded by the 8-bit
// quantization, |delta| <= 1/510 per voxel.
void save_volume(const Volume& v, const std::string& dir);

// CSV with header exactly `id,path,label,corruption_kind`.
DatasetManifest load_manifest(const std::string& csv_path);
void save_manifest(const DatasetManifest& m, const std::string& csv_path);

std::string resolve_entry_path(const DatasetManifest& m, const DatasetEntry& e);

// Bilinear per-slice resize with align-corners sampling (corner pixels map
// to corner pixels); slice count unchanged, values clamped to [0, 1].
Volume preprocess(const Volume& v, std::size_t target_h, std::size_t target_w);

}  // namespace volscreen

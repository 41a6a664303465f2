#include "volscreen/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace volscreen {

std::string to_string(Label l) {
    switch (l) {
        case Label::good: return "good";
        case Label::bad: return "bad";
        case Label::unknown: return "unknown";
    }
    throw std::logic_error("bad label value");
}

std::string to_string(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::blank_noise: return "blank_noise";
        case CorruptionKind::wrong_plane: return "wrong_plane";
        case CorruptionKind::out_of_fov: return "out_of_fov";
        case CorruptionKind::low_quality: return "low_quality";
    }
    throw std::logic_error("bad corruption kind value");
}

Label label_from_string(const std::string& s) {
    if (s == "good") return Label::good;
    if (s == "bad") return Label::bad;
    if (s == "unknown") return Label::unknown;
    throw std::runtime_error("unknown label token: '" + s + "'");
}

CorruptionKind corruption_from_string(const std::string& s) {
    if (s == "blank_noise") return CorruptionKind::blank_noise;
    if (s == "wrong_plane") return CorruptionKind::wrong_plane;
    if (s == "out_of_fov") return CorruptionKind::out_of_fov;
    if (s == "low_quality") return CorruptionKind::low_quality;
    throw std::runtime_error("unknown corruption kind: '" + s + "'");
}

namespace {

struct PgmImage {
    std::size_t height = 0, width = 0;
    std::vector<unsigned char> pixels;  // row-major
};

// P5 header: magic, then width/height/maxval separated by whitespace,
// '#' comments allowed, single whitespace byte before the raster.
PgmImage read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open slice file: " + path.string());

    auto next_token = [&in, &path]() {
        std::string tok;
        int ch = in.get();
        while (ch != EOF) {
            if (ch == '#') {
                while (ch != EOF && ch != '\n') ch = in.get();
            } else if (std::isspace(ch)) {
                ch = in.get();
            } else {
                break;
            }
        }
        while (ch != EOF && !std::isspace(ch)) {
            tok.push_back(static_cast<char>(ch));
            ch = in.get();
        }
        if (tok.empty())
            throw std::runtime_error("malformed PGM header in " + path.string());
        return tok;
    };

    if (next_token() != "P5")
        throw std::runtime_error("not a binary PGM (P5): " + path.string());

    auto parse_dim = [&path](const std::string& tok) {
        std::size_t pos = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(tok, &pos);
        } catch (const std::exception&) {
            throw std::runtime_error("malformed PGM header in " + path.string());
        }
        if (pos != tok.size() || v == 0)
            throw std::runtime_error("malformed PGM header in " + path.string());
        return static_cast<std::size_t>(v);
    };

    PgmImage img;
    img.width = parse_dim(next_token());
    img.height = parse_dim(next_token());
    const std::size_t maxval = parse_dim(next_token());
    if (maxval != 255)
        throw std::runtime_error("PGM maxval must be 255 in " + path.string());

    img.pixels.resize(img.width * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size())
        throw std::runtime_error("truncated PGM raster in " + path.string());
    return img;
}

void write_pgm(const fs::path& path, std::size_t height, std::size_t width,
               const std::vector<unsigned char>& pixels) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write slice file: " + path.string());
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) throw std::runtime_error("I/O failure writing " + path.string());
}

// slice_NNNN.pgm, at least four digits
std::optional<std::size_t> slice_index_of(const std::string& name) {
    constexpr const char* prefix = "slice_";
    constexpr const char* suffix = ".pgm";
    if (name.size() < 6 + 4 + 4) return std::nullopt;
    if (name.compare(0, 6, prefix) != 0) return std::nullopt;
    if (name.compare(name.size() - 4, 4, suffix) != 0) return std::nullopt;
    const std::string digits = name.substr(6, name.size() - 10);
    if (digits.size() < 4) return std::nullopt;
    for (char c : digits)
        if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    return static_cast<std::size_t>(std::stoul(digits));
}

}  // namespace

Volume load_volume(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::is_directory(root))
        throw std::runtime_error("volume directory not found: " + dir);

    std::map<std::size_t, fs::path> slices;
    for (const auto& de : fs::directory_iterator(root)) {
        const auto idx = slice_index_of(de.path().filename().string());
        if (!idx) continue;
        if (!slices.emplace(*idx, de.path()).second)
            throw std::runtime_error("duplicate slice index in " + dir);
    }
    if (slices.empty())
        throw std::runtime_error("no slice_NNNN.pgm files in " + dir);
    if (slices.begin()->first != 0 || slices.rbegin()->first != slices.size() - 1)
        throw std::runtime_error("non-contiguous slice indices in " + dir);

    Volume v;
    v.id = root.filename().string();
    v.source_path = dir;
    v.slices = slices.size();
    std::size_t si = 0;
    for (const auto& [idx, path] : slices) {
        const PgmImage img = read_pgm(path);
        if (si == 0) {
            v.height = img.height;
            v.width = img.width;
            v.voxels.assign(v.slices * v.height * v.width, 0.0);
        } else if (img.height != v.height || img.width != v.width) {
            throw std::runtime_error("slice dimension mismatch in " + dir);
        }
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
            v.voxels[si * v.height * v.width + i] = img.pixels[i] / 255.0;
        ++si;
    }
    return v;
}

void save_volume(const Volume& v, const std::string& dir) {
    if (v.slices == 0 || v.height == 0 || v.width == 0)
        throw std::runtime_error("cannot save empty volume");
    if (v.slices > 9999)
        throw std::runtime_error("slice count exceeds 4-digit file naming");
    const fs::path root(dir);
    fs::create_directories(root);

    std::vector<unsigned char> pixels(v.height * v.width);
    for (std::size_t s = 0; s < v.slices; ++s) {
        for (std::size_t i = 0; i < pixels.size(); ++i) {
            const double val = v.voxels[s * pixels.size() + i];
            const long q = std::lround(std::clamp(val, 0.0, 1.0) * 255.0);
            pixels[i] = static_cast<unsigned char>(q);
        }
        char name[32];
        std::snprintf(name, sizeof(name), "slice_%04zu.pgm", s);
        write_pgm(root / name, v.height, v.width, pixels);
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    out.push_back(field);
    return out;
}

}  // namespace

DatasetManifest load_manifest(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot open manifest: " + csv_path);

    auto read_line = [&in](std::string& line) {
        if (!std::getline(in, line)) return false;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    };

    std::string line;
    if (!read_line(line) || line != "id,path,label,corruption_kind")
        throw std::runtime_error("bad manifest header in " + csv_path);

    DatasetManifest m;
    m.root = fs::path(csv_path).parent_path().string();

    std::set<std::string> seen;
    std::size_t lineno = 1;
    while (read_line(line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 4)
            throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                     ": expected 4 fields");
        DatasetEntry e;
        e.id = fields[0];
        e.path = fields[1];
        e.label = label_from_string(fields[2]);
        if (!fields[3].empty())
            e.corruption_kind = corruption_from_string(fields[3]);
        if (e.id.empty())
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": empty id");
        if (!seen.insert(e.id).second)
            throw std::runtime_error("duplicate manifest id: " + e.id);
        if (e.label == Label::good && e.corruption_kind)
            throw std::runtime_error("manifest id " + e.id +
                                     ": good entries must not carry a corruption kind");
        m.entries.push_back(std::move(e));
    }
    return m;
}

void save_manifest(const DatasetManifest& m, const std::string& csv_path) {
    std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest: " + csv_path);
    out << "id,path,label,corruption_kind\n";
    for (const auto& e : m.entries) {
        out << e.id << ',' << e.path << ',' << to_string(e.label) << ','
            << (e.corruption_kind ? to_string(*e.corruption_kind) : "") << '\n';
    }
    if (!out) throw std::runtime_error("I/O failure writing " + csv_path);
}

std::string resolve_entry_path(const DatasetManifest& m, const DatasetEntry& e) {
    if (m.root.empty()) return e.path;
    return (fs::path(m.root) / e.path).string();
}

Volume preprocess(const Volume& v, std::size_t target_h, std::size_t target_w) {
    if (target_h < 1 || target_w < 1)
        throw std::invalid_argument("preprocess: target dimensions must be >= 1");

    Volume out(v.id, v.slices, target_h, target_w);
    out.source_path = v.source_path;

    // align-corners source coordinate for output index i
    auto src_coord = [](std::size_t i, std::size_t target, std::size_t source) {
        if (target == 1) return 0.0;
        return static_cast<double>(i) * static_cast<double>(source - 1) /
               static_cast<double>(target - 1);
    };

    for (std::size_t s = 0; s < v.slices; ++s) {
        for (std::size_t oy = 0; oy < target_h; ++oy) {
            const double fy = src_coord(oy, target_h, v.height);
            const std::size_t y0 = std::min(static_cast<std::size_t>(fy), v.height - 1);
            const std::size_t y1 = std::min(y0 + 1, v.height - 1);
            const double wy = fy - static_cast<double>(y0);
            for (std::size_t ox = 0; ox < target_w; ++ox) {
                const double fx = src_coord(ox, target_w, v.width);
                const std::size_t x0 = std::min(static_cast<std::size_t>(fx), v.width - 1);
                const std::size_t x1 = std::min(x0 + 1, v.width - 1);
                const double wx = fx - static_cast<double>(x0);
                const double top = v.at(s, y0, x0) * (1.0 - wx) + v.at(s, y0, x1) * wx;
                const double bot = v.at(s, y1, x0) * (1.0 - wx) + v.at(s, y1, x1) * wx;
                out.at(s, oy, ox) = std::clamp(top * (1.0 - wy) + bot * wy, 0.0, 1.0);
            }
        }
    }
    return out;
}

}  // namespace volscreen

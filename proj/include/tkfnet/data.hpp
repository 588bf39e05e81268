#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tkfnet/errors.hpp"
#include "tkfnet/parallel.hpp"
#include "tkfnet/random.hpp"
#include "tkfnet/serialize.hpp"
#include "tkfnet/tensor.hpp"

namespace tkfnet::data {

struct Sample {
    Tensor image;  // (1, H, W, 3)
    std::size_t label = 0;
    std::string source_path;
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<std::string> class_names;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
    std::size_t classes() const noexcept { return class_names.size(); }

    std::vector<std::size_t> label_histogram() const {
        std::vector<std::size_t> counts(classes(), 0);
        for (const Sample& s : samples) ++counts.at(s.label);
        return counts;
    }

    void validate() const {
        for (const Sample& s : samples) {
            if (s.label >= classes()) {
                throw ShapeError("sample label " + std::to_string(s.label) + " outside " + std::to_string(classes()) + " classes");
            }
            if (s.image.shape().n != 1 || s.image.shape().c != 3) {
                throw ShapeError("sample image must be (1,H,W,3), got " + s.image.shape().str());
            }
        }
    }
};

// ---------------------------------------------------------------------------
// PPM (binary P6, maxval 255)

namespace detail {

class PpmHeader {
public:
    explicit PpmHeader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const noexcept { return pos_; }

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (v > (1u << 24)) throw FormatError(std::string("ppm: ") + what + " too large at byte " + std::to_string(start));
            ++pos_;
        }
        if (pos_ == start) throw FormatError(std::string("ppm: expected ") + what + " at byte " + std::to_string(start));
        return v;
    }

    void single_whitespace() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
            throw FormatError("ppm: expected whitespace after maxval at byte " + std::to_string(pos_));
        }
        ++pos_;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Decodes binary P6 with maxval 255 into (1, H, W, 3) with values p / 255.
inline Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("ppm: bad magic at byte 0, expected P6");
    detail::PpmHeader header(bytes.subspan(2));
    const std::size_t width = header.number("width");
    const std::size_t height = header.number("height");
    const std::size_t at_maxval = header.offset() + 2;
    const std::size_t maxval = header.number("maxval");
    if (maxval != 255) {
        throw FormatError("ppm: maxval " + std::to_string(maxval) + " near byte " + std::to_string(at_maxval) + ", only 255 supported");
    }
    if (width == 0 || height == 0) throw FormatError("ppm: zero image extent");
    header.single_whitespace();
    const std::size_t start = header.offset() + 2;
    const std::size_t need = width * height * 3;
    if (bytes.size() - start < need) {
        throw FormatError("ppm: truncated payload at byte " + std::to_string(bytes.size()) + ", expected " +
                          std::to_string(start + need) + " bytes");
    }
    Tensor image(Shape{1, height, width, 3});
    for (std::size_t i = 0; i < need; ++i) image[i] = static_cast<float>(bytes[start + i]) / 255.0f;
    return image;
}

/// Encodes a (1, H, W, 3) image in [0, 1] as P6, quantising round(x * 255).
inline std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
    const Shape s = image.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("ppm: image must be (1,H,W,3), got " + s.str());
    const std::string header = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + image.size());
    for (const float v : image.data()) {
        const float q = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f);
        out.push_back(static_cast<std::uint8_t>(q));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Folder datasets: root/<class_name>/<file>.ppm|.rt32

inline std::string lower_extension(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext;
}

inline bool is_supported_image(const std::filesystem::path& p) {
    const std::string ext = lower_extension(p);
    return ext == ".ppm" || ext == ".rt32";
}

/// Reads a .ppm or .rt32 image; rt32 payloads must be (1, H, W, 3).
inline Tensor read_image(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    try {
        if (lower_extension(path) == ".rt32") {
            Tensor t = io::decode_rt32(bytes);
            if (t.shape().n != 1 || t.shape().c != 3 || t.shape().h == 0 || t.shape().w == 0) {
                throw FormatError("rt32 image must be (1,H,W,3), got " + t.shape().str());
            }
            return t;
        }
        return decode_ppm(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

struct FolderLoad {
    Dataset dataset;
    std::size_t skipped = 0;  // files with unsupported extensions
};

/// Loads one class per subdirectory. Class indices follow the lexicographic
/// order of subdirectory names; samples are ordered by class, then file name.
inline FolderLoad load_image_folder(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw IoError("dataset root is not a directory: " + root.string());

    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    }
    if (class_dirs.empty()) throw FormatError("dataset root has no class subdirectories: " + root.string());
    std::sort(class_dirs.begin(), class_dirs.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

    FolderLoad result;
    std::vector<std::pair<fs::path, std::size_t>> files;
    for (std::size_t label = 0; label < class_dirs.size(); ++label) {
        result.dataset.class_names.push_back(class_dirs[label].filename().string());
        std::vector<fs::path> members;
        for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
            if (!entry.is_regular_file()) continue;
            if (is_supported_image(entry.path())) {
                members.push_back(entry.path());
            } else {
                ++result.skipped;
            }
        }
        std::sort(members.begin(), members.end(),
                  [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
        for (auto& m : members) files.emplace_back(std::move(m), label);
    }

    result.dataset.samples.resize(files.size());
    parallel_for(files.size(), [&](std::size_t i) {
        Sample& s = result.dataset.samples[i];
        s.image = read_image(files[i].first);
        s.label = files[i].second;
        s.source_path = files[i].first.string();
    });
    return result;
}

/// Writes a dataset as root/<class_name>/<index>.ppm.
inline void write_image_folder(const Dataset& ds, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::error_code ec;
    for (const auto& name : ds.class_names) {
        fs::create_directories(root / name, ec);
        if (ec) throw IoError("cannot create " + (root / name).string() + ": " + ec.message());
    }
    std::vector<std::size_t> next(ds.classes(), 0);
    for (const Sample& s : ds.samples) {
        char file[32];
        std::snprintf(file, sizeof file, "%05zu.ppm", next[s.label]++);
        io::write_file(root / ds.class_names.at(s.label) / file, encode_ppm(s.image));
    }
}

// ---------------------------------------------------------------------------
// Preprocessing

inline constexpr float kNormMean = 0.5f;
inline constexpr float kNormStd = 0.5f;

/// Bilinear resize with aligned corners (corner pixels map onto corner
/// pixels), optionally followed by (x - 0.5) / 0.5.
inline Tensor preprocess(const Tensor& image, std::size_t out_h, std::size_t out_w, bool normalize) {
    const Shape s = image.shape();
    if (out_h == 0 || out_w == 0) throw std::invalid_argument("preprocess: zero target size");
    if (s.n != 1 || s.h == 0 || s.w == 0) throw ShapeError("preprocess: expected one non-empty image, got " + s.str());
    const auto source_coord = [](std::size_t o, std::size_t in, std::size_t out) {
        return out == 1 ? 0.0 : static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    };
    Tensor out(Shape{1, out_h, out_w, s.c});
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        const double sy = source_coord(oy, s.h, out_h);
        const std::size_t y0 = std::min(static_cast<std::size_t>(sy), s.h - 1);
        const std::size_t y1 = std::min(y0 + 1, s.h - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const double sx = source_coord(ox, s.w, out_w);
            const std::size_t x0 = std::min(static_cast<std::size_t>(sx), s.w - 1);
            const std::size_t x1 = std::min(x0 + 1, s.w - 1);
            const double fx = sx - static_cast<double>(x0);
            for (std::size_t c = 0; c < s.c; ++c) {
                const double top = (1.0 - fx) * image.at(0, y0, x0, c) + fx * image.at(0, y0, x1, c);
                const double bottom = (1.0 - fx) * image.at(0, y1, x0, c) + fx * image.at(0, y1, x1, c);
                double v = (1.0 - fy) * top + fy * bottom;
                if (normalize) v = (v - kNormMean) / kNormStd;
                out.at(0, oy, ox, c) = static_cast<float>(v);
            }
        }
    }
    return out;
}

/// Preprocesses every sample to (out_h, out_w).
inline Dataset prepare(const Dataset& ds, std::size_t out_h, std::size_t out_w, bool normalize) {
    Dataset out;
    out.class_names = ds.class_names;
    out.samples.resize(ds.size());
    parallel_for(ds.size(), [&](std::size_t i) {
        out.samples[i] = {preprocess(ds.samples[i].image, out_h, out_w, normalize), ds.samples[i].label,
                          ds.samples[i].source_path};
    });
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic oriented-grating textures

inline constexpr std::size_t kSynthFamilies = 7;

struct SynthSpec {
    std::size_t classes = 7;
    std::size_t per_class = 20;
    std::size_t height = 32;
    std::size_t width = 32;
    std::uint64_t seed = 0;
    double noise = 0.05;
};

/// Orientation of synthetic class k: k * pi / 7.
inline double synth_angle(std::size_t k) {
    return static_cast<double>(k) * std::numbers::pi / static_cast<double>(kSynthFamilies);
}

/// One sinusoidal grating family per class at a distinct orientation, with
/// per-sample random phase, amplitude jitter and Gaussian pixel noise, clamped
/// to [0, 1]. Samples are ordered class-major.
inline Dataset synth_dataset(const SynthSpec& spec) {
    if (spec.per_class == 0) throw std::invalid_argument("synth: per_class must be >= 1");
    if (spec.classes == 0 || spec.classes > kSynthFamilies) {
        throw std::invalid_argument("synth: classes must be in [1, " + std::to_string(kSynthFamilies) + "]");
    }
    if (spec.height == 0 || spec.width == 0) throw std::invalid_argument("synth: zero image size");

    Dataset ds;
    for (std::size_t k = 0; k < spec.classes; ++k) ds.class_names.push_back("texture_" + std::to_string(k));

    Rng rng(spec.seed);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> jitter(-0.15, 0.15);
    std::normal_distribution<double> unit_noise(0.0, 1.0);
    const double wavelength = static_cast<double>(std::min(spec.height, spec.width)) / 4.0;
    const double omega = 2.0 * std::numbers::pi / wavelength;

    for (std::size_t k = 0; k < spec.classes; ++k) {
        const double theta = synth_angle(k);
        const double cx = std::cos(theta), cy = std::sin(theta);
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            const double phase = phase_dist(rng);
            const double amplitude = 0.4 * (1.0 + jitter(rng));
            Tensor img(Shape{1, spec.height, spec.width, 3});
            for (std::size_t y = 0; y < spec.height; ++y)
                for (std::size_t x = 0; x < spec.width; ++x) {
                    const double base = 0.5 + amplitude * std::sin(omega * (cx * x + cy * y) + phase);
                    for (std::size_t c = 0; c < 3; ++c) {
                        const double v = spec.noise > 0.0 ? base + spec.noise * unit_noise(rng) : base;
                        img.at(0, y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                    }
                }
            ds.samples.push_back({img, k, {}});
        }
    }
    return ds;
}

/// Deterministic holdout: the last round(fraction * count) samples of every
/// class go to the second dataset.
inline std::pair<Dataset, Dataset> split_holdout(const Dataset& ds, double fraction) {
    if (fraction < 0.0 || fraction >= 1.0) throw ConfigError("holdout fraction must be in [0, 1)");
    const auto hist = ds.label_histogram();
    std::vector<std::size_t> keep(hist.size());
    for (std::size_t k = 0; k < hist.size(); ++k)
        keep[k] = hist[k] - static_cast<std::size_t>(std::llround(fraction * static_cast<double>(hist[k])));
    Dataset train, held;
    train.class_names = held.class_names = ds.class_names;
    std::vector<std::size_t> seen(hist.size(), 0);
    for (const Sample& s : ds.samples) (seen[s.label]++ < keep[s.label] ? train : held).samples.push_back(s);
    return {train, held};
}

}  // namespace tkfnet::data

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "tkfnet/data.hpp"
#include "tkfnet/serialize.hpp"

using namespace tkfnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("tkfnet_data_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::uint8_t> ppm_bytes(const std::string& header, std::vector<std::uint8_t> payload) {
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) { io::write_file(p, bytes); }

Tensor solid(std::size_t h, std::size_t w, float v) { return Tensor::filled(Shape{1, h, w, 3}, v); }

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

}  // namespace

// --- PPM ------------------------------------------------------------------

TEST(Ppm, WhitePixel) {
    const Tensor t = data::decode_ppm(ppm_bytes("P6\n1 1\n255\n", {255, 255, 255}));
    EXPECT_EQ(t.shape(), (Shape{1, 1, 1, 3}));
    for (float v : t.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Ppm, ScalesByMaxval) {
    const Tensor t = data::decode_ppm(ppm_bytes("P6\n1 1\n255\n", {0, 128, 255}));
    EXPECT_EQ(t[0], 0.0f);
    EXPECT_NEAR(t[1], 128.0 / 255.0, 1e-7);
    EXPECT_NEAR(t[1], 0.50196, 1e-5);
    EXPECT_EQ(t[2], 1.0f);
}

TEST(Ppm, WidthAxisKeepsLeftToRightOrder) {
    const Tensor t = data::decode_ppm(ppm_bytes("P6 2 1 255\n", {10, 10, 10, 200, 200, 200}));
    EXPECT_EQ(t.shape(), (Shape{1, 1, 2, 3}));
    EXPECT_LT(t.at(0, 0, 0, 0), t.at(0, 0, 1, 0));
}

TEST(Ppm, CommentsInHeader) {
    const Tensor t = data::decode_ppm(ppm_bytes("P6\n# made by hand\n1 # width done\n1\n255\n", {1, 2, 3}));
    EXPECT_NEAR(t[2], 3.0 / 255.0, 1e-7);
}

TEST(Ppm, RejectsMalformedInputWithOffset) {
    const std::string magic = error_of([] { data::decode_ppm(ppm_bytes("P3\n1 1\n255\n", {0, 0, 0})); });
    EXPECT_NE(magic.find("byte 0"), std::string::npos) << magic;
    const std::string maxval = error_of([] { data::decode_ppm(ppm_bytes("P6\n1 1\n65535\n", {0, 0, 0, 0, 0, 0})); });
    EXPECT_NE(maxval.find("maxval"), std::string::npos) << maxval;
    EXPECT_NE(maxval.find("byte"), std::string::npos) << maxval;
    const std::string truncated = error_of([] { data::decode_ppm(ppm_bytes("P6\n2 2\n255\n", {0, 0, 0})); });
    EXPECT_NE(truncated.find("truncated"), std::string::npos) << truncated;
    EXPECT_NE(truncated.find("byte"), std::string::npos) << truncated;
    EXPECT_THROW(data::decode_ppm(ppm_bytes("P6\n", {})), FormatError);
    EXPECT_THROW(data::decode_ppm(ppm_bytes("P6\n0 1\n255\n", {})), FormatError);
}

TEST(Ppm, EncodeDecodeQuantizes) {
    Tensor img(Shape{1, 2, 3, 3});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i) / 17.0f;
    const Tensor back = data::decode_ppm(data::encode_ppm(img));
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_LE(std::abs(back[i] - img[i]), 0.5f / 255.0f + 1e-7f);
}

// --- folder loading -------------------------------------------------------------

TEST(Folder, CountsClassesAndSamples) {
    const fs::path root = fresh_dir("counts");
    for (const char* cls : {"angry", "happy"}) {
        fs::create_directories(root / cls);
        for (int i = 0; i < 3; ++i) write_bytes(root / cls / ("img" + std::to_string(i) + ".ppm"), data::encode_ppm(solid(2, 2, 0.5f)));
    }
    const auto load = data::load_image_folder(root);
    EXPECT_EQ(load.dataset.size(), 6u);
    EXPECT_EQ(load.dataset.classes(), 2u);
    EXPECT_EQ(load.dataset.class_names, (std::vector<std::string>{"angry", "happy"}));
    EXPECT_EQ(load.dataset.label_histogram(), (std::vector<std::size_t>{3, 3}));
}

TEST(Folder, EmptyClassKeepsItsIndex) {
    const fs::path root = fresh_dir("empty_class");
    fs::create_directories(root / "a");
    fs::create_directories(root / "b");
    fs::create_directories(root / "c");
    write_bytes(root / "a" / "x.ppm", data::encode_ppm(solid(1, 1, 0.0f)));
    write_bytes(root / "c" / "y.ppm", data::encode_ppm(solid(1, 1, 1.0f)));
    const auto ds = data::load_image_folder(root).dataset;
    EXPECT_EQ(ds.classes(), 3u);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.samples[1].label, 2u);
}

TEST(Folder, OrderIsDeterministicAndSorted) {
    const fs::path root = fresh_dir("order");
    fs::create_directories(root / "k");
    for (const char* name : {"b.ppm", "c.ppm", "a.ppm"}) write_bytes(root / "k" / name, data::encode_ppm(solid(1, 1, 0.2f)));
    const auto a = data::load_image_folder(root).dataset;
    const auto b = data::load_image_folder(root).dataset;
    ASSERT_EQ(a.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.samples[i].source_path, b.samples[i].source_path);
    EXPECT_EQ(fs::path(a.samples[0].source_path).filename(), "a.ppm");
    EXPECT_EQ(fs::path(a.samples[2].source_path).filename(), "c.ppm");
}

TEST(Folder, SkipsUnsupportedAndReadsRt32) {
    const fs::path root = fresh_dir("mixed");
    fs::create_directories(root / "k");
    write_bytes(root / "k" / "notes.txt", {'h', 'i'});
    write_bytes(root / "k" / "photo.jpg", {0xff, 0xd8});
    Tensor t = solid(2, 2, 0.25f);
    t[5] = 0.9f;
    write_bytes(root / "k" / "raw.rt32", io::encode_rt32(t));
    const auto load = data::load_image_folder(root);
    EXPECT_EQ(load.skipped, 2u);
    ASSERT_EQ(load.dataset.size(), 1u);
    EXPECT_EQ(load.dataset.samples[0].image[5], 0.9f);
}

TEST(Folder, RejectsMissingRootNoClassesAndCorruptFiles) {
    EXPECT_THROW(data::load_image_folder("/nonexistent/tkfnet/root"), IoError);
    const fs::path flat = fresh_dir("flat");
    write_bytes(flat / "a.ppm", data::encode_ppm(solid(1, 1, 0.0f)));
    EXPECT_THROW(data::load_image_folder(flat), FormatError);

    const fs::path corrupt = fresh_dir("corrupt");
    fs::create_directories(corrupt / "k");
    write_bytes(corrupt / "k" / "bad.ppm", {'P', '6', '\n', '4'});
    const std::string msg = error_of([&] { data::load_image_folder(corrupt); });
    EXPECT_NE(msg.find("bad.ppm"), std::string::npos) << msg;

    write_bytes(corrupt / "k" / "bad.ppm", io::encode_rt32(Tensor(Shape{1, 2, 2, 1})));
    fs::rename(corrupt / "k" / "bad.ppm", corrupt / "k" / "bad.rt32");
    EXPECT_THROW(data::load_image_folder(corrupt), FormatError);
}

// --- preprocessing -------------------------------------------------------------------

TEST(Preprocess, SameSizeIsIdentity) {
    Tensor img(Shape{1, 3, 4, 3});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i % 11) / 10.0f;
    const Tensor out = data::preprocess(img, 3, 4, false);
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(out[i], img[i]);
}

TEST(Preprocess, ConstantStaysConstant) {
    const Tensor out = data::preprocess(solid(5, 7, 0.3f), 11, 4, false);
    for (float v : out.data()) EXPECT_NEAR(v, 0.3f, 1e-7);
    const Tensor norm = data::preprocess(solid(5, 7, 0.3f), 11, 4, true);
    for (float v : norm.data()) EXPECT_NEAR(v, (0.3f - 0.5f) / 0.5f, 1e-6);
}

TEST(Preprocess, BilinearCenter) {
    Tensor img(Shape{1, 2, 2, 3});
    const float pattern[4] = {0, 1, 1, 0};
    for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t c = 0; c < 3; ++c) img[p * 3 + c] = pattern[p];
    const Tensor out = data::preprocess(img, 3, 3, false);
    EXPECT_NEAR(out.at(0, 1, 1, 0), 0.5, 1e-7);
    EXPECT_EQ(out.at(0, 0, 0, 0), 0.0f);
    EXPECT_EQ(out.at(0, 0, 2, 0), 1.0f);
    EXPECT_NEAR(out.at(0, 0, 1, 0), 0.5, 1e-7);
}

TEST(Preprocess, RejectsZeroTarget) {
    EXPECT_THROW(data::preprocess(solid(2, 2, 0.0f), 0, 2, false), std::invalid_argument);
    EXPECT_THROW(data::preprocess(solid(2, 2, 0.0f), 2, 0, true), std::invalid_argument);
}

// --- synthetic data ---------------------------------------------------------------------

TEST(Synth, CountsAndBalance) {
    data::SynthSpec spec;
    spec.per_class = 20;
    const auto ds = data::synth_dataset(spec);
    EXPECT_EQ(ds.size(), 140u);
    EXPECT_EQ(ds.label_histogram(), std::vector<std::size_t>(7, 20));
    ds.validate();
}

TEST(Synth, SeedDeterminesPixels) {
    data::SynthSpec spec;
    spec.per_class = 2;
    spec.seed = 4;
    const auto a = data::synth_dataset(spec), b = data::synth_dataset(spec);
    spec.seed = 5;
    const auto c = data::synth_dataset(spec);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < a.samples[i].image.size(); ++k) {
            ASSERT_EQ(a.samples[i].image[k], b.samples[i].image[k]);
            differs = differs || a.samples[i].image[k] != c.samples[i].image[k];
        }
    EXPECT_TRUE(differs);
}

TEST(Synth, ClassesHaveDistinctDominantOrientation) {
    data::SynthSpec spec;
    spec.per_class = 3;
    spec.noise = 0.0;
    const auto ds = data::synth_dataset(spec);
    // Structure tensor from central differences; the dominant gradient
    // direction of a grating is its wave vector, k * pi / 7 modulo pi.
    for (const auto& s : ds.samples) {
        const Tensor& img = s.image;
        double jxx = 0, jyy = 0, jxy = 0;
        for (std::size_t y = 1; y + 1 < spec.height; ++y)
            for (std::size_t x = 1; x + 1 < spec.width; ++x) {
                const double gx = (img.at(0, y, x + 1, 0) - img.at(0, y, x - 1, 0)) / 2.0;
                const double gy = (img.at(0, y + 1, x, 0) - img.at(0, y - 1, x, 0)) / 2.0;
                jxx += gx * gx;
                jyy += gy * gy;
                jxy += gx * gy;
            }
        double angle = 0.5 * std::atan2(2.0 * jxy, jxx - jyy);
        if (angle < 0) angle += std::numbers::pi;
        const double expected = data::synth_angle(s.label);
        double diff = std::abs(angle - expected);
        diff = std::min(diff, std::numbers::pi - diff);
        EXPECT_LT(diff, 0.1) << "class " << s.label << " estimated " << angle;
    }
}

TEST(Synth, RejectsBadSpecs) {
    data::SynthSpec spec;
    spec.per_class = 0;
    EXPECT_THROW(data::synth_dataset(spec), std::invalid_argument);
    spec.per_class = 1;
    spec.classes = 8;
    EXPECT_THROW(data::synth_dataset(spec), std::invalid_argument);
}

TEST(Synth, FolderRoundTripWithinQuantization) {
    data::SynthSpec spec;
    spec.per_class = 2;
    spec.height = spec.width = 16;
    const auto ds = data::synth_dataset(spec);
    const fs::path root = fresh_dir("synth_roundtrip");
    data::write_image_folder(ds, root);
    const auto back = data::load_image_folder(root).dataset;
    ASSERT_EQ(back.size(), ds.size());
    EXPECT_EQ(back.class_names, ds.class_names);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
        for (std::size_t k = 0; k < ds.samples[i].image.size(); ++k)
            ASSERT_LE(std::abs(back.samples[i].image[k] - ds.samples[i].image[k]), 1.0f / 255.0f);
    }
}

TEST(Holdout, SplitsEachClassFromTheEnd) {
    data::SynthSpec spec;
    spec.classes = 3;
    spec.per_class = 10;
    spec.height = spec.width = 4;
    const auto ds = data::synth_dataset(spec);
    const auto [train, held] = data::split_holdout(ds, 0.2);
    EXPECT_EQ(train.label_histogram(), (std::vector<std::size_t>{8, 8, 8}));
    EXPECT_EQ(held.label_histogram(), (std::vector<std::size_t>{2, 2, 2}));
    EXPECT_EQ(held.samples[0].image[0], ds.samples[8].image[0]);
    EXPECT_THROW(data::split_holdout(ds, 1.0), ConfigError);
}

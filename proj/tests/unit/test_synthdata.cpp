#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "patchalign/synthdata.hpp"

namespace pa = patchalign;
namespace fs = std::filesystem;

namespace {

pa::SceneConfig small_config() {
    pa::SceneConfig c;
    c.height = 16;
    c.width = 12;
    c.object_size_range = {2, 5};
    return c;
}

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("patchalign_synth_" + name);
    fs::remove_all(dir);
    return dir;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(SceneConfig, Validation) {
    auto c = small_config();
    EXPECT_NO_THROW(c.validate());
    c.band_fractions = {0.5, 0.5, 0.25, -0.25};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small_config();
    c.band_fractions = {0.3, 0.3, 0.3, 0.3};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small_config();
    c.num_classes = 256;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small_config();
    c.num_classes = 1;
    c.band_fractions = {1.0};
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Generate, CountsGuard) {
    const auto c = small_config();
    EXPECT_THROW(pa::generate_domain_pair(c, 0, 1, 1), std::invalid_argument);
    EXPECT_THROW(pa::generate_domain_pair(c, 1, 100001, 1), std::invalid_argument);
}

TEST(Generate, SplitsAndLabels) {
    const auto pair = pa::generate_domain_pair(small_config(), 3, 4, 2);
    EXPECT_EQ(pair.source_train.size(), 3u);
    EXPECT_EQ(pair.target_train.size(), 4u);
    EXPECT_EQ(pair.target_test.size(), 2u);
    EXPECT_TRUE(pair.source_train.labels.has_value());
    EXPECT_FALSE(pair.target_train.labels.has_value());
    EXPECT_TRUE(pair.target_test.labels.has_value());
    EXPECT_EQ(pair.target_train_oracle_labels.size(), 4u);
    EXPECT_NO_THROW(pair.source_train.validate());
    EXPECT_EQ(pair.source_train.split, "train");
    EXPECT_EQ(pair.target_test.split, "test");
}

TEST(Generate, Deterministic) {
    auto c = small_config();
    c.shift = {3, 0.8, 0.1, 0.05};
    const auto a = pa::generate_domain_pair(c, 5, 5, 3);
    const auto b = pa::generate_domain_pair(c, 5, 5, 3);
    EXPECT_TRUE(a.source_train == b.source_train);
    EXPECT_TRUE(a.target_train == b.target_train);
    EXPECT_TRUE(a.target_test == b.target_test);
    EXPECT_EQ(a.target_train_oracle_labels, b.target_train_oracle_labels);
}

TEST(Generate, SceneDependsOnlyOnItsIndex) {
    const auto c = small_config();
    const auto small = pa::generate_domain_pair(c, 2, 2, 1);
    const auto large = pa::generate_domain_pair(c, 6, 6, 3);
    EXPECT_TRUE(small.source_train.labels->at(1) == large.source_train.labels->at(1));
    EXPECT_EQ(std::vector<float>(small.target_train.images[1].data().begin(), small.target_train.images[1].data().end()),
              std::vector<float>(large.target_train.images[1].data().begin(), large.target_train.images[1].data().end()));
}

TEST(Generate, NullShiftWithSameSeedReproducesSource) {
    auto c = small_config();
    c.target_seed = c.source_seed;
    const auto pair = pa::generate_domain_pair(c, 4, 4, 1);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_TRUE(pair.source_train.labels->at(i) == pair.target_train_oracle_labels[i]);
        const auto s = pair.source_train.images[i].data();
        const auto t = pair.target_train.images[i].data();
        EXPECT_TRUE(std::equal(s.begin(), s.end(), t.begin()));
    }
}

TEST(Generate, VerticalOffsetIsPureTranslation) {
    auto c = small_config();
    c.shift = {4, 1.0, 0.0, 0.0};
    for (std::uint64_t key : {1u, 2u, 3u}) {
        const auto plain = pa::render_scene(c, key, false);
        const auto moved = pa::render_scene(c, key, true);
        for (std::size_t y = 0; y < c.height; ++y)
            for (std::size_t x = 0; x < c.width; ++x) {
                if (y < 4) {
                    EXPECT_EQ(moved.labels.at(y, x), 0) << "entering rows take the top band class";
                } else {
                    EXPECT_EQ(moved.labels.at(y, x), plain.labels.at(y - 4, x));
                    EXPECT_EQ(moved.image[y * c.width + x], plain.image[(y - 4) * c.width + x]);
                }
            }
    }
}

TEST(Generate, NegativeOffsetFillsWithBottomBand) {
    auto c = small_config();
    c.shift = {-3, 1.0, 0.0, 0.0};
    c.object_count_range = {0, 0};
    const auto moved = pa::render_scene(c, 9, true);
    for (std::size_t y = c.height - 3; y < c.height; ++y)
        for (std::size_t x = 0; x < c.width; ++x) EXPECT_EQ(moved.labels.at(y, x), 3);
}

TEST(Generate, EqualBandsSpanSixteenRows) {
    pa::SceneConfig c;
    c.object_count_range = {0, 0};
    const auto scene = pa::render_scene(c, 42, false);
    for (int k = 0; k < 4; ++k) {
        std::size_t rows = 0;
        for (std::size_t y = 0; y < 64; ++y) {
            bool all = true;
            for (std::size_t x = 0; x < 64; ++x) all = all && scene.labels.at(y, x) == k;
            rows += all;
        }
        EXPECT_EQ(rows, 16u) << "class " << k;
    }
    const auto b = pa::band_boundaries(c);
    EXPECT_EQ(b, (std::vector<std::size_t>{0, 16, 32, 48, 64}));
}

TEST(Generate, ObjectsStampTheObjectClass) {
    auto c = small_config();
    c.base_noise_sigma = 0.0;
    c.object_count_range = {3, 3};
    for (std::uint64_t key = 0; key < 20; ++key) {
        const auto s = pa::render_scene(c, key, false);
        // every pixel's intensity matches its label exactly without noise
        for (std::size_t i = 0; i < s.labels.values.size(); ++i)
            EXPECT_EQ(s.image[i], static_cast<float>(pa::class_intensity(s.labels.values[i], c.num_classes)));
    }
}

TEST(Generate, AppearanceShiftTouchesImagesOnly) {
    auto c = small_config();
    c.shift = {0, 0.5, 0.2, 0.0};
    const auto plain = pa::render_scene(c, 7, false);
    const auto moved = pa::render_scene(c, 7, true);
    EXPECT_TRUE(plain.labels == moved.labels);
    for (std::size_t i = 0; i < plain.labels.values.size(); ++i)
        EXPECT_FLOAT_EQ(moved.image[i], static_cast<float>(0.5 * plain.image[i] + 0.2));
}

TEST(Dataset, RoundTripOneImage) {
    const auto pair = pa::generate_domain_pair(small_config(), 1, 1, 1);
    const auto dir = temp_dir("one");
    pa::write_dataset(pair.source_train, dir);
    const auto back = pa::read_dataset(dir);
    EXPECT_TRUE(back == pair.source_train);
}

TEST(Dataset, RoundTripUnlabeledAndManifest) {
    auto c = small_config();
    c.shift = {2, 0.9, 0.05, 0.02};
    const auto pair = pa::generate_domain_pair(c, 2, 5, 1);
    const auto dir = temp_dir("unlabeled");
    pa::write_dataset(pair.target_train, dir);
    const auto back = pa::read_dataset(dir);
    EXPECT_TRUE(back == pair.target_train);
    std::ifstream is(dir / "manifest.json");
    const auto m = nlohmann::json::parse(is);
    EXPECT_EQ(m.at("files").size(), 5u);
    EXPECT_EQ(m.at("counts").at("images").get<int>(), 5);
    EXPECT_EQ(m.at("num_classes").get<int>(), 4);
    EXPECT_EQ(m.at("shift").at("vertical_offset_px").get<int>(), 2);
    EXPECT_TRUE(m.at("files")[0].at("label").is_null());
}

TEST(Dataset, SerializationIsByteIdentical) {
    const auto a = temp_dir("bytes_a"), b = temp_dir("bytes_b");
    pa::write_dataset(pa::generate_domain_pair(small_config(), 3, 1, 1).source_train, a);
    pa::write_dataset(pa::generate_domain_pair(small_config(), 3, 1, 1).source_train, b);
    for (const auto& entry : fs::directory_iterator(a))
        EXPECT_EQ(slurp(entry.path()), slurp(b / entry.path().filename())) << entry.path();
}

TEST(Dataset, TruncatedPayloadIsParseError) {
    const auto pair = pa::generate_domain_pair(small_config(), 2, 1, 1);
    const auto dir = temp_dir("truncated");
    pa::write_dataset(pair.source_train, dir);
    const auto victim = dir / "img_00001.pten";
    fs::resize_file(victim, fs::file_size(victim) - 3);
    try {
        pa::read_dataset(dir);
        FAIL() << "expected a parse error";
    } catch (const pa::ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("img_00001.pten"), std::string::npos);
    }
}

TEST(Dataset, BadMagicIsParseError) {
    const auto pair = pa::generate_domain_pair(small_config(), 1, 1, 1);
    const auto dir = temp_dir("magic");
    pa::write_dataset(pair.source_train, dir);
    {
        std::fstream f(dir / "lbl_00000.pten", std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
    }
    EXPECT_THROW(pa::read_dataset(dir), pa::ParseError);
}

TEST(Dataset, MissingDirectoryIsIoError) { EXPECT_THROW(pa::read_dataset("/nonexistent/patchalign"), pa::IoError); }

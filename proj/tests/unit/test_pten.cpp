#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "patchalign/pten.hpp"

namespace pa = patchalign;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("patchalign_pten_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(Pten, HeaderLayout) {
    pa::pten::Array a;
    a.dtype = pa::pten::DType::f32;
    a.dims = {2, 1};
    a.f32 = {1.0f, -2.5f};
    const auto bytes = pa::pten::encode(a);
    ASSERT_EQ(bytes.size(), 7u + 8u + 8u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PTEN");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5], 2);
    EXPECT_EQ(bytes[6], 2);
    EXPECT_EQ(bytes[7], 2);  // little-endian dim 0
    EXPECT_EQ(bytes[8], 0);
    // 1.0f = 0x3F800000
    EXPECT_EQ(bytes[15], 0x00);
    EXPECT_EQ(bytes[17], 0x80);
    EXPECT_EQ(bytes[18], 0x3F);
}

TEST(Pten, RoundTripBothDtypes) {
    pa::pten::Array f;
    f.dtype = pa::pten::DType::f32;
    f.dims = {2, 3};
    f.f32 = {0.1f, -0.0f, 3e38f, 1e-40f, 7.f, -1.f};
    const auto f2 = pa::pten::decode(pa::pten::encode(f), "f");
    EXPECT_EQ(f2.dims, f.dims);
    ASSERT_EQ(f2.f32.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(std::bit_cast<std::uint32_t>(f2.f32[i]), std::bit_cast<std::uint32_t>(f.f32[i]));

    pa::pten::Array u;
    u.dtype = pa::pten::DType::u8;
    u.dims = {4};
    u.u8 = {0, 1, 254, 255};
    const auto u2 = pa::pten::decode(pa::pten::encode(u), "u");
    EXPECT_EQ(u2.u8, u.u8);
}

TEST(Pten, TensorFileRoundTrip) {
    const auto dir = temp_dir("tensor");
    const auto t = pa::Tensor<float>::from_data({1, 2, 2}, {1.f, 2.f, 3.f, 4.f});
    pa::write_tensor(dir / "t.pten", t);
    const auto r = pa::read_tensor<float>(dir / "t.pten");
    EXPECT_EQ(r.shape(), t.shape());
    EXPECT_EQ(std::vector<float>(r.data().begin(), r.data().end()), std::vector<float>(t.data().begin(), t.data().end()));
}

TEST(Pten, ErrorsNameTheFile) {
    pa::pten::Array a;
    a.dtype = pa::pten::DType::f32;
    a.dims = {4};
    a.f32 = {1, 2, 3, 4};
    auto good = pa::pten::encode(a);

    auto expect_parse_error = [](std::vector<std::uint8_t> bytes, const std::string& what) {
        try {
            pa::pten::decode(bytes, "bad_file.pten");
            ADD_FAILURE() << "no error for " << what;
        } catch (const pa::ParseError& e) {
            EXPECT_NE(std::string(e.what()).find("bad_file.pten"), std::string::npos) << what;
        }
    };
    auto magic = good;
    magic[0] = 'X';
    expect_parse_error(magic, "magic");
    auto version = good;
    version[4] = 2;
    expect_parse_error(version, "version");
    auto dtype = good;
    dtype[5] = 7;
    expect_parse_error(dtype, "dtype");
    expect_parse_error(std::vector<std::uint8_t>(good.begin(), good.end() - 1), "truncated payload");
    expect_parse_error(std::vector<std::uint8_t>(good.begin(), good.begin() + 9), "truncated dims");
    expect_parse_error({}, "empty");
    auto trailing = good;
    trailing.push_back(0);
    expect_parse_error(trailing, "trailing bytes");
}

TEST(Pten, MissingFileIsIoError) {
    EXPECT_THROW(pa::pten::read_file("/nonexistent/dir/x.pten"), pa::IoError);
}

TEST(Pten, DtypeMismatchOnTensorRead) {
    const auto dir = temp_dir("dtype");
    pa::pten::Array u;
    u.dtype = pa::pten::DType::u8;
    u.dims = {1};
    u.u8 = {3};
    pa::pten::write_file(dir / "u.pten", u);
    EXPECT_THROW(pa::read_tensor<float>(dir / "u.pten"), pa::ParseError);
}

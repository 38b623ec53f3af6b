#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include <gtest/gtest.h>
#include <png.h>

#include "hpnp/image.hpp"
#include "hpnp/rng.hpp"

namespace fs = std::filesystem;
using hpnp::Errc;
using hpnp::Image;

namespace {

fs::path temp_path(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / "hpnp_test_image";
    fs::create_directories(dir);
    return dir / name;
}

void write_bytes(const fs::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary);
    out << bytes;
}

Errc error_code_of(const fs::path& path)
{
    try {
        hpnp::load_image(path);
    } catch (const hpnp::Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error for " << path;
    return Errc::io;
}

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed)
{
    hpnp::Xoshiro256pp rng(seed);
    Image img(h, w);
    for (double& v : img.data())
        v = rng.uniform(0.0, 255.0);
    return img;
}

} // namespace

TEST(LoadImage, BinaryPgmMapsBytesDirectly)
{
    const auto path = temp_path("tiny.pgm");
    write_bytes(path, std::string("P5\n# comment\n2 2\n255\n") + std::string("\x00\x80\xff\x40", 4));
    const Image img = hpnp::load_image(path);
    EXPECT_EQ(img, Image(2, 2, {0, 128, 255, 64}));
}

TEST(LoadImage, PngMatchesPgm)
{
    const Image img(2, 2, {0, 128, 255, 64});
    hpnp::save_image(img, temp_path("tiny.png"));
    hpnp::save_image(img, temp_path("tiny2.pgm"));
    EXPECT_EQ(hpnp::load_image(temp_path("tiny.png")), hpnp::load_image(temp_path("tiny2.pgm")));
    EXPECT_EQ(hpnp::load_image(temp_path("tiny.png")), img);
}

TEST(LoadImage, SixteenBitPgmIsUnsupportedDepth)
{
    const auto path = temp_path("deep.pgm");
    write_bytes(path, std::string("P5\n1 1\n65535\n") + std::string("\x01\x02", 2));
    EXPECT_EQ(error_code_of(path), Errc::unsupported_depth);
}

TEST(LoadImage, TruncatedRaster)
{
    const auto path = temp_path("short.pgm");
    write_bytes(path, std::string("P5\n4 4\n255\n") + std::string(7, '\x10'));
    EXPECT_EQ(error_code_of(path), Errc::truncated_file);
}

TEST(LoadImage, UnknownFormat)
{
    const auto path = temp_path("ascii.pgm");
    write_bytes(path, "P2\n1 1\n255\n7\n");
    EXPECT_EQ(error_code_of(path), Errc::unsupported_format);
}

TEST(LoadImage, ColorPngRejected)
{
    const auto path = temp_path("rgb.png");
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = 2;
    png.height = 1;
    png.format = PNG_FORMAT_RGB;
    const unsigned char px[6] = {1, 2, 3, 4, 5, 6};
    ASSERT_TRUE(png_image_write_to_file(&png, path.c_str(), 0, px, 0, nullptr));
    EXPECT_EQ(error_code_of(path), Errc::non_grayscale);
}

TEST(LoadImage, MissingFile)
{
    EXPECT_EQ(error_code_of(temp_path("does_not_exist.pgm")), Errc::io);
}

TEST(SaveImage, ClampsAndRoundsHalfAwayFromZero)
{
    const auto path = temp_path("round.pgm");
    hpnp::save_image(Image(1, 5, {255.7, 127.5, -3.0, 0.5, 12.49}), path);
    EXPECT_EQ(hpnp::load_image(path), Image(1, 5, {255, 128, 0, 1, 12}));
}

TEST(SaveImage, IntegerRoundTripIsExact)
{
    hpnp::Xoshiro256pp rng(3);
    Image img(17, 9);
    for (double& v : img.data())
        v = static_cast<double>(rng() % 256);
    for (const char* name : {"rt.pgm", "rt.png"}) {
        hpnp::save_image(img, temp_path(name));
        EXPECT_EQ(hpnp::load_image(temp_path(name)), img) << name;
    }
}

TEST(SaveImage, UnwritablePath)
{
    try {
        hpnp::save_image(Image(1, 1), "/nonexistent_dir_hpnp/x.pgm");
        FAIL();
    } catch (const hpnp::Error& e) {
        EXPECT_EQ(e.code(), Errc::io);
    }
}

TEST(Psnr, IdenticalImagesGiveInfinity)
{
    const Image a = random_image(8, 8, 1);
    EXPECT_EQ(hpnp::psnr(a, a), std::numeric_limits<double>::infinity());
}

TEST(Psnr, BlackVersusWhiteIsZero)
{
    EXPECT_DOUBLE_EQ(hpnp::psnr(Image(4, 4, 0.0), Image(4, 4, 255.0)), 0.0);
}

TEST(Psnr, SinglePixelOffset)
{
    Image a(8, 8, 100.0);
    Image b = a;
    b(3, 5) += 16.0;
    // MSE = 256 / 64 = 4
    EXPECT_NEAR(hpnp::psnr(a, b), 42.11, 0.01);
    EXPECT_NEAR(hpnp::psnr(a, b), 10.0 * std::log10(65025.0 / 4.0), 1e-12);
}

TEST(Psnr, DimensionMismatch)
{
    EXPECT_THROW(hpnp::psnr(Image(2, 3), Image(3, 2)), hpnp::Error);
}

TEST(Psnr, SymmetricAndOffsetDependsOnMagnitudeOnly)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Image a = random_image(6, 7, seed);
        const Image b = random_image(6, 7, seed + 100);
        EXPECT_DOUBLE_EQ(hpnp::psnr(a, b), hpnp::psnr(b, a));
        const double c = 1.0 + static_cast<double>(seed);
        Image up = a, down = a;
        for (std::size_t i = 0; i < a.size(); ++i) {
            up[i] += c;
            down[i] -= c;
        }
        EXPECT_NEAR(hpnp::psnr(a, up), hpnp::psnr(a, down), 1e-9);
    }
}

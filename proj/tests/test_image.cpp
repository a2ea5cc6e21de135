#include <gtest/gtest.h>

#include <promptfuse/image.hpp>

#include "test_util.hpp"

using namespace promptfuse;

namespace {
Image gradient_image(int w, int h) {
    Image img{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<std::uint8_t>((x * 17 + y * 31 + c * 80) % 256);
    return img;
}
}  // namespace

TEST(Image, PpmAndPngRoundTrip) {
    testutil::TempDir dir;
    const auto img = gradient_image(7, 5);
    save_ppm(img, dir / "a.ppm");
    save_png(img, dir / "a.png");
    for (const char* name : {"a.ppm", "a.png"}) {
        const auto back = load_image(dir / name);
        EXPECT_EQ(back.width, 7);
        EXPECT_EQ(back.height, 5);
        EXPECT_EQ(back.rgb, img.rgb) << name;
    }
}

TEST(Image, GreyscalePgmExpandsToRgb) {
    testutil::TempDir dir;
    testutil::write_file(dir / "g.pgm", std::string("P5\n# comment\n2 1\n255\n") + char(10) + char(200));
    const auto img = load_image(dir / "g.pgm");
    ASSERT_EQ(img.rgb.size(), 6u);
    EXPECT_EQ(img.at(0, 0, 0), 10);
    EXPECT_EQ(img.at(0, 0, 2), 10);
    EXPECT_EQ(img.at(0, 1, 1), 200);
}

TEST(Image, Errors) {
    testutil::TempDir dir;
    testutil::write_file(dir / "t.ppm", "P6\n4 4\n255\nabc");
    EXPECT_THROW(load_image(dir / "t.ppm"), ParseError);
    testutil::write_file(dir / "ascii.ppm", "P3\n1 1\n255\n0 0 0\n");
    EXPECT_THROW(load_image(dir / "ascii.ppm"), ParseError);
    testutil::write_file(dir / "bad.png", "not a png");
    EXPECT_THROW(load_image(dir / "bad.png"), ParseError);
    EXPECT_THROW(load_image(dir / "x.bmp"), ValidationError);
    EXPECT_THROW(load_image(dir / "missing.ppm"), IoError);
    EXPECT_TRUE(is_frame_file("a/B.PNG"));
    EXPECT_FALSE(is_frame_file("a/audio.wav"));
}

TEST(Resize, IdentitySizeIsExactScaling) {
    const auto img = gradient_image(6, 6);
    const auto out = resize_to_planar(img, 6);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x)
                ASSERT_FLOAT_EQ(out[(static_cast<std::size_t>(c) * 6 + y) * 6 + x], img.at(y, x, c) / 255.0f);
}

TEST(Resize, DownsampleByTwoAveragesBlocks) {
    const auto img = gradient_image(8, 8);
    const auto out = resize_to_planar(img, 4);
    // Half-pixel centres land exactly between source pixels 2x and 2x+1.
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                double s = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) s += img.at(2 * y + dy, 2 * x + dx, c);
                ASSERT_NEAR(out[(static_cast<std::size_t>(c) * 4 + y) * 4 + x], s / 4 / 255.0, 1e-6);
            }
}

TEST(Resize, ConstantImageStaysConstant) {
    Image img{3, 9, std::vector<std::uint8_t>(81, 51)};
    for (float v : resize_to_planar(img, 16)) ASSERT_FLOAT_EQ(v, 0.2f);
}

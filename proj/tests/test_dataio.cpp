#include "gradcheck.hpp"

#include <dynaseg/dataio.hpp>
#include <dynaseg/model.hpp>

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <random>
#include <set>

using namespace dynaseg;
using namespace dynaseg::testing;

namespace {

class DataIo : public ::testing::Test
{
protected:
    void SetUp() override
    {
        dir_ = fs::temp_directory_path() /
               ("dynaseg_dataio_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    void write_bytes(const std::string& name, const std::string& bytes) const
    {
        std::ofstream out(path(name), std::ios::binary);
        out << bytes;
    }

    static std::string read_bytes(const std::string& p)
    {
        std::ifstream in(p, std::ios::binary);
        return {std::istreambuf_iterator<char>(in), {}};
    }

    fs::path dir_;
};

} // namespace

TEST_F(DataIo, PpmScalesToUnitRange)
{
    // red, green / blue, white
    write_bytes("rgbw.ppm", std::string("P6\n# test\n2 2\n255\n") +
                                std::string("\xff\x00\x00\x00\xff\x00\x00\x00\xff\xff\xff\xff", 12));
    const Tensor img = load_image(path("rgbw.ppm"));
    const Tensor expected({3, 2, 2}, {1, 0, 0, 1, 0, 1, 0, 1, 0, 0, 1, 1});
    EXPECT_EQ(img, expected);
}

TEST_F(DataIo, ImageRoundTripWithinQuantization)
{
    std::mt19937_64 rng(3);
    const Tensor img = random_tensor({3, 7, 5}, rng, 0.0, 1.0);
    for (const char* name : {"r.png", "r.ppm"}) {
        save_image(img, path(name));
        const Tensor back = load_image(path(name));
        ASSERT_EQ(back.shape(), img.shape());
        for (std::size_t i = 0; i < img.size(); ++i)
            EXPECT_LE(std::abs(back[i] - img[i]), 1.0 / 255.0) << name;
    }
}

TEST_F(DataIo, GrayscaleImageExpandsToThreeChannels)
{
    RawRaster gray;
    gray.width = 3;
    gray.height = 2;
    gray.channels = 1;
    gray.bytes = {0, 51, 102, 153, 204, 255};
    detail::write_png(path("g.png"), gray);
    const Tensor img = load_image(path("g.png"));
    ASSERT_EQ(img.shape(), (Tensor::Shape{3, 2, 3}));
    for (std::size_t c = 0; c < 3; ++c)
        EXPECT_DOUBLE_EQ(img.at(c, 1, 0), 0.6);
}

TEST_F(DataIo, UnsupportedAndTinyImagesAreDecodeErrors)
{
    write_bytes("junk.jpg", "\xff\xd8\xff\xe0 not really a jpeg");
    try {
        load_image(path("junk.jpg"));
        FAIL();
    } catch (const DecodeError& e) {
        EXPECT_NE(std::string(e.what()).find("junk.jpg"), std::string::npos);
    }
    write_bytes("one.ppm", std::string("P6 1 1 255\n") + std::string("\x01\x02\x03", 3));
    EXPECT_THROW(load_image(path("one.ppm")), DecodeError);
    write_bytes("short.ppm", "P6 4 4 255\n\x01\x02");
    EXPECT_THROW(load_image(path("short.ppm")), DecodeError);
    EXPECT_THROW(load_image(path("absent.png")), DecodeError);
}

TEST_F(DataIo, PgmLabelMaps)
{
    write_bytes("zero.pgm", std::string("P5 3 2 255\n") + std::string(6, '\0'));
    EXPECT_EQ(count_clusters(load_label_map(path("zero.pgm"))), 1u);

    write_bytes("three.pgm", std::string("P5\n3 1\n2\n") + std::string("\x00\x01\x02", 3));
    const LabelMap m = load_label_map(path("three.pgm"));
    EXPECT_EQ(m.labels, (std::vector<std::int32_t>{0, 1, 2}));
    EXPECT_EQ(count_clusters(m), 3u);

    write_bytes("void.pgm", std::string("P5 2 1 255\n") + std::string("\x04\xff", 2));
    EXPECT_EQ(load_label_map(path("void.pgm")).labels, (std::vector<std::int32_t>{4, kVoidLabel}));
}

TEST_F(DataIo, SixteenBitLabelsArePreserved)
{
    LabelMap labels(2, 2, {300, 0, 255, 65535});
    save_label_map(labels, path("raw.png"), LabelOutput::Raw);
    EXPECT_EQ(load_label_map(path("raw.png")), labels);
}

TEST_F(DataIo, RawLabelRoundTripIsExact)
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> pick(0, 65535);
    for (int trial = 0; trial < 10; ++trial) {
        LabelMap labels(3 + trial, 4);
        for (auto& l : labels.labels)
            l = pick(rng);
        save_label_map(labels, path("rt.png"), LabelOutput::Raw);
        EXPECT_EQ(load_label_map(path("rt.png")), labels);
    }
    EXPECT_THROW(save_label_map(LabelMap(1, 2, 70000), path("big.png"), LabelOutput::Raw), ContractViolation);
}

TEST_F(DataIo, PaletteIndexedLabelMapsReadAsIndices)
{
    std::vector<std::uint8_t> colormap(256 * 3, 0);
    for (int i = 0; i < 256; ++i)
        colormap[3 * i] = static_cast<std::uint8_t>(i);
    const std::vector<std::uint8_t> indices{0, 1, 1, 2, 255, 2};
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = 3;
    image.height = 2;
    image.format = PNG_FORMAT_RGB_COLORMAP;
    image.colormap_entries = 256;
    ASSERT_TRUE(png_image_write_to_file(&image, path("pal.png").c_str(), 0, indices.data(), 0, colormap.data()));
    EXPECT_EQ(load_label_map(path("pal.png")).labels, (std::vector<std::int32_t>{0, 1, 1, 2, kVoidLabel, 2}));
}

TEST_F(DataIo, MultiChannelLabelMapIsRejected)
{
    save_image(Tensor({3, 2, 2}, 0.5), path("rgb.png"));
    try {
        load_label_map(path("rgb.png"));
        FAIL();
    } catch (const DecodeError& e) {
        EXPECT_NE(std::string(e.what()).find("single-channel"), std::string::npos);
    }
    save_image(Tensor({3, 2, 2}, 0.5), path("rgb.ppm"));
    EXPECT_THROW(load_label_map(path("rgb.ppm")), DecodeError);
}

TEST_F(DataIo, ColorizedOutputIsStable)
{
    LabelMap labels(4, 4);
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels.labels[i] = static_cast<std::int32_t>(i % 5);
    save_label_map(labels, path("a.png"), LabelOutput::Colorized);
    save_label_map(labels, path("b.png"), LabelOutput::Colorized);
    EXPECT_EQ(read_bytes(path("a.png")), read_bytes(path("b.png")));

    const Tensor img = load_image(path("a.png"));
    const auto c3 = palette_color(3);
    EXPECT_DOUBLE_EQ(img.at(0, 0, 3), c3[0] / 255.0);
}

TEST(Palette, NoCollisionsBelow1024)
{
    std::set<std::array<std::uint8_t, 3>> seen;
    for (std::int32_t l = 0; l < 1024; ++l)
        EXPECT_TRUE(seen.insert(palette_color(l)).second) << "label " << l;
}

TEST_F(DataIo, ManifestParsing)
{
    write_bytes("img.ppm", std::string("P6 2 2 255\n") + std::string(12, '\x10'));
    write_bytes("b.ppm", std::string("P6 2 2 255\n") + std::string(12, '\x10'));
    for (int i = 0; i < 5; ++i)
        write_bytes("gt" + std::to_string(i) + ".pgm", std::string("P5 2 2 255\n") + std::string(4, '\0'));

    write_bytes("one.txt", "img.ppm\tgt0.pgm\n");
    DatasetManifest m = load_manifest(path("one.txt"));
    ASSERT_EQ(m.entries.size(), 1u);
    EXPECT_EQ(m.entries[0].image, path("img.ppm"));
    EXPECT_EQ(m.entries[0].ground_truth, std::vector<std::string>{path("gt0.pgm")});

    write_bytes("five.txt", "# comment\n\nimg.ppm\tgt0.pgm\tgt1.pgm\tgt2.pgm\tgt3.pgm\tgt4.pgm\r\nb.ppm\n");
    m = load_manifest(path("five.txt"));
    ASSERT_EQ(m.entries.size(), 2u);
    EXPECT_EQ(m.entries[0].ground_truth.size(), 5u);
    EXPECT_TRUE(m.entries[1].ground_truth.empty());
    EXPECT_EQ(m.entries[1].line, 4u);
}

TEST_F(DataIo, ManifestErrorsCarryLineNumbers)
{
    write_bytes("empty.txt", "");
    EXPECT_THROW(load_manifest(path("empty.txt")), ManifestError);
    EXPECT_THROW(load_manifest(path("nope.txt")), ManifestError);

    write_bytes("img.ppm", std::string("P6 2 2 255\n") + std::string(12, '\x10'));
    write_bytes("bad.txt", "img.ppm\tmissing_gt.pgm\nghost.ppm\n\tgt.pgm\nimg.ppm\n");
    try {
        load_manifest(path("bad.txt"));
        FAIL();
    } catch (const ManifestError& e) {
        const auto& d = e.diagnostics();
        ASSERT_EQ(d.size(), 4u);
        EXPECT_EQ(d[0].rfind("line 1:", 0), 0u);
        EXPECT_EQ(d[1].rfind("line 2:", 0), 0u);
        EXPECT_EQ(d[2].rfind("line 3:", 0), 0u);
        EXPECT_NE(d[3].find("already used on line 1"), std::string::npos);
    }
}

#pragma once

// Image and label-map codecs (PNG via libpng, binary PPM/PGM), the dataset
// manifest format, and the seeded palette used for colorized label output.

#include <dynaseg/error.hpp>
#include <dynaseg/tensor.hpp>

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace dynaseg {

namespace fs = std::filesystem;

/// Decoded raster before interpretation: interleaved samples, big-endian pairs when 16-bit.
struct RawRaster
{
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    int bit_depth = 8;
    bool palette = false;
    std::vector<std::uint8_t> bytes;

    std::uint32_t sample(std::size_t y, std::size_t x, std::size_t c) const
    {
        const std::size_t idx = (y * width + x) * channels + c;
        if (bit_depth == 16)
            return (std::uint32_t{bytes[2 * idx]} << 8) | bytes[2 * idx + 1];
        return bytes[idx];
    }

    std::uint32_t max_value() const { return bit_depth == 16 ? 65535u : 255u; }
};

enum class LabelOutput
{
    Raw,
    Colorized,
};

namespace detail {

struct FileCloser
{
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline bool has_png_signature(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    std::array<unsigned char, 8> sig{};
    in.read(reinterpret_cast<char*>(sig.data()), sig.size());
    return in.gcount() == 8 && png_sig_cmp(sig.data(), 0, 8) == 0;
}

struct PngErrorContext
{
    char message[256] = "unknown libpng error";
};

extern "C" inline void png_error_to_context(png_structp png, png_const_charp msg)
{
    auto* ctx = static_cast<PngErrorContext*>(png_get_error_ptr(png));
    std::snprintf(ctx->message, sizeof ctx->message, "%s", msg);
    png_longjmp(png, 1);
}

extern "C" inline void png_ignore_warning(png_structp, png_const_charp) {}

// Only trivially destructible locals are created after setjmp below; the raster
// and row table belong to the caller or are sized before the jump point.
inline bool read_png_raster(std::FILE* file, bool keep_palette_indices, RawRaster& out, PngErrorContext& ctx)
{
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &ctx, png_error_to_context, png_ignore_warning);
    if (!png)
        return false;
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        return false;
    }
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, file);
    png_read_info(png, info);

    const int color_type = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    out.palette = color_type == PNG_COLOR_TYPE_PALETTE;
    if (out.palette && !keep_palette_indices)
        png_set_palette_to_rgb(png);
    if (depth < 8) {
        if (color_type == PNG_COLOR_TYPE_GRAY && !keep_palette_indices)
            png_set_expand_gray_1_2_4_to_8(png);
        else
            png_set_packing(png);
    }
    if (png_get_interlace_type(png, info) != PNG_INTERLACE_NONE)
        png_set_interlace_handling(png);
    png_read_update_info(png, info);

    out.width = png_get_image_width(png, info);
    out.height = png_get_image_height(png, info);
    out.channels = png_get_channels(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    out.bytes.resize(row_bytes * out.height);
    rows.resize(out.height);
    for (std::size_t y = 0; y < out.height; ++y)
        rows[y] = out.bytes.data() + y * row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

inline bool write_png_raster(std::FILE* file, const RawRaster& raster, PngErrorContext& ctx)
{
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &ctx, png_error_to_context, png_ignore_warning);
    if (!png)
        return false;
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        return false;
    }
    std::vector<png_bytep> rows(raster.height);
    const std::size_t row_bytes = raster.width * raster.channels * (raster.bit_depth == 16 ? 2 : 1);
    for (std::size_t y = 0; y < raster.height; ++y)
        rows[y] = const_cast<png_bytep>(raster.bytes.data() + y * row_bytes);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_init_io(png, file);
    const int color_type = raster.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width), static_cast<png_uint_32>(raster.height),
                 raster.bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

inline RawRaster read_png(const std::string& path, bool keep_palette_indices)
{
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file)
        throw DecodeError(path, "cannot open file");
    RawRaster raster;
    PngErrorContext ctx;
    if (!read_png_raster(file.get(), keep_palette_indices, raster, ctx))
        throw DecodeError(path, std::string("invalid PNG: ") + ctx.message);
    return raster;
}

inline void write_png(const std::string& path, const RawRaster& raster)
{
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file)
        throw WriteError(path, "cannot open file for writing");
    PngErrorContext ctx;
    if (!write_png_raster(file.get(), raster, ctx))
        throw WriteError(path, std::string("PNG encoding failed: ") + ctx.message);
    if (std::fflush(file.get()) != 0)
        throw WriteError(path, "flush failed");
}

// Binary PNM (P5 / P6). Header tokens are separated by whitespace and may be
// interleaved with '#' comments; exactly one whitespace byte precedes the data.
inline RawRaster read_pnm(const std::string& path, bool rescale_to_container = true)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DecodeError(path, "cannot open file");

    auto next_token = [&]() -> std::string {
        std::string token;
        int ch;
        while ((ch = in.get()) != EOF) {
            if (ch == '#') {
                while ((ch = in.get()) != EOF && ch != '\n') {
                }
                continue;
            }
            if (std::isspace(ch)) {
                if (!token.empty())
                    break;
                continue;
            }
            token.push_back(static_cast<char>(ch));
        }
        return token;
    };
    auto parse_positive = [&](const std::string& token, const char* what) {
        std::size_t value = 0;
        try {
            std::size_t used = 0;
            value = std::stoul(token, &used);
            if (used != token.size())
                throw std::invalid_argument(token);
        } catch (const std::exception&) {
            throw DecodeError(path, std::string("malformed PNM ") + what + " '" + token + "'");
        }
        if (value == 0)
            throw DecodeError(path, std::string("PNM ") + what + " must be positive");
        return value;
    };

    const std::string magic = next_token();
    if (magic != "P5" && magic != "P6")
        throw DecodeError(path, "unsupported format (expected PNG, binary PGM P5 or binary PPM P6)");
    RawRaster raster;
    raster.channels = magic == "P6" ? 3 : 1;
    raster.width = parse_positive(next_token(), "width");
    raster.height = parse_positive(next_token(), "height");
    const std::size_t maxval = parse_positive(next_token(), "maxval");
    if (maxval > 65535)
        throw DecodeError(path, "PNM maxval exceeds 65535");
    raster.bit_depth = maxval > 255 ? 16 : 8;

    const std::size_t bytes = raster.width * raster.height * raster.channels * (raster.bit_depth == 16 ? 2 : 1);
    raster.bytes.resize(bytes);
    in.read(reinterpret_cast<char*>(raster.bytes.data()), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in.gcount()) != bytes)
        throw DecodeError(path, "truncated PNM pixel data");

    if (rescale_to_container && maxval != 255 && maxval != 65535) {
        // Rescale to the full range of the container so callers see one convention.
        const std::uint32_t full = raster.max_value();
        for (std::size_t i = 0; i < raster.width * raster.height * raster.channels; ++i) {
            const std::uint32_t v = raster.bit_depth == 16
                                        ? (std::uint32_t{raster.bytes[2 * i]} << 8) | raster.bytes[2 * i + 1]
                                        : raster.bytes[i];
            if (v > maxval)
                throw DecodeError(path, "PNM sample exceeds maxval");
            const auto scaled = static_cast<std::uint32_t>((v * full + maxval / 2) / maxval);
            if (raster.bit_depth == 16) {
                raster.bytes[2 * i] = static_cast<std::uint8_t>(scaled >> 8);
                raster.bytes[2 * i + 1] = static_cast<std::uint8_t>(scaled & 0xff);
            } else {
                raster.bytes[i] = static_cast<std::uint8_t>(scaled);
            }
        }
    }
    return raster;
}

inline void write_pnm(const std::string& path, const RawRaster& raster)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw WriteError(path, "cannot open file for writing");
    out << (raster.channels == 3 ? "P6" : "P5") << '\n'
        << raster.width << ' ' << raster.height << '\n'
        << raster.max_value() << '\n';
    out.write(reinterpret_cast<const char*>(raster.bytes.data()), static_cast<std::streamsize>(raster.bytes.size()));
    if (!out)
        throw WriteError(path, "write failed");
}

inline bool wants_pnm(const std::string& path)
{
    const std::string ext = fs::path(path).extension().string();
    return ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace detail

/// Loads an 8-bit (or 16-bit) PNG, P6 PPM or P5 PGM as a [3, H, W] tensor in [0, 1].
/// Grayscale inputs are replicated to three channels; alpha is dropped.
inline Tensor load_image(const std::string& path)
{
    RawRaster raster = detail::has_png_signature(path) ? detail::read_png(path, false) : detail::read_pnm(path);
    if (raster.width < 2 || raster.height < 2)
        throw DecodeError(path, "image must be at least 2x2 pixels");

    const std::size_t colour_channels = raster.channels >= 3 ? 3 : 1;
    const double scale = 1.0 / static_cast<double>(raster.max_value());
    Tensor image({3, raster.height, raster.width});
    for (std::size_t y = 0; y < raster.height; ++y)
        for (std::size_t x = 0; x < raster.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const std::size_t src = colour_channels == 3 ? c : 0;
                image.at(c, y, x) = raster.sample(y, x, src) * scale;
            }
    return image;
}

/// Writes a [3, H, W] tensor with values in [0, 1] as 8-bit PNG, or PPM when the
/// path ends in .ppm / .pnm.
inline void save_image(const Tensor& image, const std::string& path)
{
    detail::require(image.rank() == 3 && image.dim(0) == 3, "save_image expects a [3, H, W] tensor");
    RawRaster raster;
    raster.height = image.dim(1);
    raster.width = image.dim(2);
    raster.channels = 3;
    raster.bytes.resize(raster.width * raster.height * 3);
    for (std::size_t y = 0; y < raster.height; ++y)
        for (std::size_t x = 0; x < raster.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
                raster.bytes[(y * raster.width + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    if (detail::wants_pnm(path))
        detail::write_pnm(path, raster);
    else
        detail::write_png(path, raster);
}

/// Loads a single-channel label map (8/16-bit grayscale or palette PNG, or P5 PGM).
/// In 8-bit inputs the value 255 marks void pixels and becomes kVoidLabel.
inline LabelMap load_label_map(const std::string& path)
{
    RawRaster raster;
    if (detail::has_png_signature(path)) {
        raster = detail::read_png(path, true);
    } else {
        // Label ids are stored verbatim; maxval only selects the sample width.
        raster = detail::read_pnm(path, false);
    }
    if (raster.channels != 1)
        throw DecodeError(path, "label map has " + std::to_string(raster.channels) +
                                    " channels; convert it to a single-channel image of integer ids");

    LabelMap labels(raster.height, raster.width);
    for (std::size_t y = 0; y < raster.height; ++y)
        for (std::size_t x = 0; x < raster.width; ++x) {
            const std::uint32_t v = raster.sample(y, x, 0);
            labels.at(y, x) = (raster.bit_depth == 8 && v == 255) ? kVoidLabel : static_cast<std::int32_t>(v);
        }
    return labels;
}

/// Stable pseudo-random colour for a label id.
inline std::array<std::uint8_t, 3> palette_color(std::int32_t label)
{
    if (label < 0)
        return {0, 0, 0};
    constexpr std::uint64_t kPaletteSeed = 0x5eed'0f'c0'10'75ULL;
    const std::uint64_t h = detail::splitmix64(kPaletteSeed ^ static_cast<std::uint64_t>(label));
    return {static_cast<std::uint8_t>(h >> 40), static_cast<std::uint8_t>(h >> 48), static_cast<std::uint8_t>(h >> 56)};
}

/// Raw: 16-bit grayscale PNG of label ids. Colorized: RGB PNG using palette_color.
inline void save_label_map(const LabelMap& labels, const std::string& path, LabelOutput mode)
{
    RawRaster raster;
    raster.height = labels.height;
    raster.width = labels.width;
    if (mode == LabelOutput::Raw) {
        raster.channels = 1;
        raster.bit_depth = 16;
        raster.bytes.resize(labels.size() * 2);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const std::int32_t v = labels.labels[i];
            detail::require(v >= 0 && v < 65536, "raw label output supports ids in [0, 65536)");
            raster.bytes[2 * i] = static_cast<std::uint8_t>(v >> 8);
            raster.bytes[2 * i + 1] = static_cast<std::uint8_t>(v & 0xff);
        }
    } else {
        raster.channels = 3;
        raster.bytes.resize(labels.size() * 3);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const auto rgb = palette_color(labels.labels[i]);
            std::copy(rgb.begin(), rgb.end(), raster.bytes.begin() + static_cast<std::ptrdiff_t>(3 * i));
        }
    }
    detail::write_png(path, raster);
}

struct ManifestEntry
{
    std::string image;
    std::vector<std::string> ground_truth;
    std::size_t line = 0;
};

struct DatasetManifest
{
    std::vector<ManifestEntry> entries;
};

class ManifestError : public Error
{
public:
    ManifestError(const std::string& path, std::vector<std::string> diagnostics)
        : Error(format(path, diagnostics))
        , diagnostics_(std::move(diagnostics))
    {
    }

    const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }

private:
    static std::string format(const std::string& path, const std::vector<std::string>& diagnostics)
    {
        std::string msg = path + ": invalid manifest";
        for (const auto& d : diagnostics)
            msg += "\n  " + d;
        return msg;
    }

    std::vector<std::string> diagnostics_;
};

inline std::string image_stem(const std::string& path)
{
    return fs::path(path).stem().string();
}

/// One entry per line: image path, then tab-separated ground-truth paths.
/// Blank lines and lines starting with '#' are skipped. Relative paths resolve
/// against the manifest's directory. Every problem is reported with its line number.
inline DatasetManifest load_manifest(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ManifestError(path, {"cannot open manifest"});
    const fs::path base = fs::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        const fs::path fp(p);
        return (fp.is_absolute() ? fp : base / fp).lexically_normal().string();
    };

    DatasetManifest manifest;
    std::vector<std::string> diagnostics;
    std::vector<std::pair<std::string, std::size_t>> stems;
    std::string line;
    for (std::size_t number = 1; std::getline(in, line); ++number) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos || line.front() == '#')
            continue;

        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string field; std::getline(ss, field, '\t');)
            fields.push_back(field);
        const std::string where = "line " + std::to_string(number) + ": ";
        if (fields.empty() || fields[0].empty()) {
            diagnostics.push_back(where + "missing image path");
            continue;
        }

        ManifestEntry entry{resolve(fields[0]), {}, number};
        bool ok = true;
        if (!fs::is_regular_file(entry.image)) {
            diagnostics.push_back(where + "image not found: " + entry.image);
            ok = false;
        }
        for (std::size_t i = 1; i < fields.size(); ++i) {
            if (fields[i].empty()) {
                diagnostics.push_back(where + "empty ground-truth field " + std::to_string(i));
                ok = false;
                continue;
            }
            const std::string gt = resolve(fields[i]);
            if (!fs::is_regular_file(gt)) {
                diagnostics.push_back(where + "ground truth not found: " + gt);
                ok = false;
            }
            entry.ground_truth.push_back(gt);
        }
        const std::string stem = image_stem(entry.image);
        for (const auto& [other, other_line] : stems)
            if (other == stem) {
                diagnostics.push_back(where + "image stem '" + stem + "' already used on line " +
                                      std::to_string(other_line));
                ok = false;
            }
        stems.emplace_back(stem, number);
        if (ok)
            manifest.entries.push_back(std::move(entry));
    }
    if (manifest.entries.empty() && diagnostics.empty())
        diagnostics.push_back("manifest has no entries");
    if (!diagnostics.empty())
        throw ManifestError(path, std::move(diagnostics));
    return manifest;
}

} // namespace dynaseg

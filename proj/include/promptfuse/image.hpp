#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "promptfuse/audio.hpp"
#include "promptfuse/error.hpp"

namespace promptfuse {

/// 8-bit RGB image, row-major, interleaved.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    std::uint8_t at(int y, int x, int c) const noexcept {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

namespace detail {

inline Image decode_png(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        throw ParseError("png: " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    Image out;
    out.width = static_cast<int>(img.width);
    out.height = static_cast<int>(img.height);
    out.rgb.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw ParseError("png: " + path.string() + ": " + msg);
    }
    return out;
}

inline Image decode_pnm(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t pos = 0;
    const auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    const auto number = [&] {
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw ParseError("pnm: bad header in " + path.string());
        long v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5'))
        throw ParseError("pnm: only binary P5/P6 is supported: " + path.string());
    const int channels = bytes[1] == '6' ? 3 : 1;
    pos = 2;
    const long w = number(), h = number(), maxval = number();
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw ParseError("pnm: unsupported header in " + path.string());
    ++pos;  // single whitespace after maxval
    const auto count = static_cast<std::size_t>(w * h * channels);
    if (bytes.size() < pos + count) throw ParseError("pnm: truncated pixel data in " + path.string());

    Image out;
    out.width = static_cast<int>(w);
    out.height = static_cast<int>(h);
    out.rgb.resize(static_cast<std::size_t>(w * h * 3));
    for (std::size_t i = 0; i < static_cast<std::size_t>(w * h); ++i)
        for (int c = 0; c < 3; ++c) {
            const auto v = bytes[pos + i * channels + (channels == 3 ? c : 0)];
            out.rgb[i * 3 + c] = static_cast<std::uint8_t>(v * 255 / maxval);
        }
    return out;
}

inline std::string lower_extension(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

}  // namespace detail

inline bool is_frame_file(const std::filesystem::path& p) {
    const auto ext = detail::lower_extension(p);
    return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

inline Image load_image(const std::filesystem::path& path) {
    const auto ext = detail::lower_extension(path);
    if (ext == ".png") return detail::decode_png(path);
    if (ext == ".ppm" || ext == ".pgm") return detail::decode_pnm(path);
    throw ValidationError("unsupported image format: " + path.string());
}

inline void save_ppm(const Image& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!out) throw IoError("write error on " + path.string());
}

inline void save_png(const Image& img, const std::filesystem::path& path) {
    png_image p{};
    p.version = PNG_IMAGE_VERSION;
    p.width = static_cast<png_uint_32>(img.width);
    p.height = static_cast<png_uint_32>(img.height);
    p.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&p, path.string().c_str(), 0, img.rgb.data(), 0, nullptr))
        throw IoError("png: cannot write " + path.string() + ": " + p.message);
}

/// Bilinear resize to size x size with half-pixel centres, returning planar
/// [3 x size x size] floats in [0, 1].
inline std::vector<float> resize_to_planar(const Image& img, int size) {
    std::vector<float> out(static_cast<std::size_t>(3 * size * size));
    const double sx = static_cast<double>(img.width) / size;
    const double sy = static_cast<double>(img.height) / size;
    for (int y = 0; y < size; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < size; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
                const double bot = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
                out[(static_cast<std::size_t>(c) * size + y) * size + x] =
                    static_cast<float>((top * (1 - wy) + bot * wy) / 255.0);
            }
        }
    }
    return out;
}

}  // namespace promptfuse

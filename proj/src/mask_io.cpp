#include "granseg/mask_io.hpp"

#include <png.h>

#include <csetjmp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace granseg {

namespace {

struct ReadCursor {
    const std::vector<std::uint8_t>* bytes;
    size_t offset;
};

void png_read_from_memory(png_structp png, png_bytep out, png_size_t n) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->offset + n > cur->bytes->size()) png_error(png, "truncated PNG stream");
    std::memcpy(out, cur->bytes->data() + cur->offset, n);
    cur->offset += n;
}

void png_write_to_memory(png_structp png, png_bytep data, png_size_t n) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + n);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    if (err) *err = msg;
    png_longjmp(png, 1);
}

void png_warn_ignore(png_structp, png_const_charp) {}

/// Encodes 8-bit rows with the given libpng colour type (GRAY or RGB).
std::vector<std::uint8_t> encode_png(const std::uint8_t* data, int height, int width, int channels) {
    std::vector<std::uint8_t> out;
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn_ignore);
    if (!png) throw IoError("png: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: " + err);
    }
    {
        png_set_write_fn(png, &out, png_write_to_memory, png_flush_noop);
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                     channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int r = 0; r < height; ++r)
            png_write_row(png, const_cast<png_bytep>(data + static_cast<size_t>(r) * width * channels));
        png_write_end(png, nullptr);
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

struct DecodedPng {
    int height = 0, width = 0, channels = 0;
    std::vector<std::uint8_t> data;
};

DecodedPng decode_png(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw IoError("png: not a PNG stream");
    DecodedPng out;
    ReadCursor cursor{&bytes, 0};
    std::vector<png_bytep> rows;
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn_ignore);
    if (!png) throw IoError("png: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: " + err);
    }
    {
        png_set_read_fn(png, &cursor, png_read_from_memory);
        png_read_info(png, info);
        const auto color = png_get_color_type(png, info);
        const auto depth = png_get_bit_depth(png, info);
        if (depth == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        png_set_strip_alpha(png);
        png_read_update_info(png, info);
        out.width = static_cast<int>(png_get_image_width(png, info));
        out.height = static_cast<int>(png_get_image_height(png, info));
        out.channels = png_get_channels(png, info);
        const size_t stride = png_get_rowbytes(png, info);
        out.data.resize(stride * out.height);
        rows.resize(out.height);
        for (int r = 0; r < out.height; ++r) rows[r] = out.data.data() + r * stride;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

} // namespace

std::vector<std::uint8_t> encode_mask_png(const BinaryMask& m) {
    std::vector<std::uint8_t> gray(m.pixels.size());
    std::transform(m.pixels.begin(), m.pixels.end(), gray.begin(), [](auto v) { return v ? 255 : 0; });
    return encode_png(gray.data(), m.height, m.width, 1);
}

BinaryMask decode_mask_png(const std::vector<std::uint8_t>& bytes, MaskRole role) {
    const auto png = decode_png(bytes);
    BinaryMask m(png.height, png.width, role);
    for (size_t i = 0; i < m.pixels.size(); ++i) {
        // Colour masks: any channel above mid-grey counts as foreground.
        bool fg = false;
        for (int c = 0; c < png.channels; ++c) fg = fg || png.data[i * png.channels + c] > 127;
        m.pixels[i] = fg ? 1 : 0;
    }
    return m;
}

void write_mask_png(const std::filesystem::path& path, const BinaryMask& m) {
    write_file_bytes(path, encode_mask_png(m));
}

BinaryMask read_mask_png(const std::filesystem::path& path, MaskRole role) {
    return decode_mask_png(read_file_bytes(path), role);
}

std::vector<std::uint8_t> encode_image_png(const Image& img) {
    std::vector<std::uint8_t> rgb(img.pixels.size());
    std::transform(img.pixels.begin(), img.pixels.end(), rgb.begin(), [](float v) {
        return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    });
    return encode_png(rgb.data(), img.height, img.width, 3);
}

Image decode_image_png(const std::vector<std::uint8_t>& bytes, std::string id) {
    const auto png = decode_png(bytes);
    Image img(std::move(id), png.height, png.width);
    for (size_t i = 0; i < static_cast<size_t>(png.height) * png.width; ++i)
        for (int c = 0; c < 3; ++c) {
            const int src = png.channels >= 3 ? c : 0;
            img.pixels[i * 3 + c] = png.data[i * png.channels + src] / 255.0f;
        }
    return img;
}

void write_image_png(const std::filesystem::path& path, const Image& img) {
    write_file_bytes(path, encode_image_png(img));
}

Image read_image_png(const std::filesystem::path& path, std::string id) {
    return decode_image_png(read_file_bytes(path), id.empty() ? path.stem().string() : std::move(id));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

std::vector<std::uint32_t> rle_encode(const BinaryMask& m) {
    std::vector<std::uint32_t> counts;
    std::uint8_t current = 0;
    std::uint32_t run = 0;
    for (auto v : m.pixels) {
        const std::uint8_t b = v ? 1 : 0;
        if (b != current) {
            counts.push_back(run);
            run = 0;
            current = b;
        }
        ++run;
    }
    counts.push_back(run);
    return counts;
}

BinaryMask rle_decode(const std::vector<std::uint32_t>& counts, int height, int width, MaskRole role) {
    if (height <= 0 || width <= 0) throw ContractViolation("rle_decode: non-positive shape");
    BinaryMask m(height, width, role);
    size_t pos = 0;
    std::uint8_t value = 0;
    for (auto run : counts) {
        if (pos + run > m.pixels.size()) throw ContractViolation("rle_decode: runs exceed mask size");
        std::fill_n(m.pixels.begin() + static_cast<std::ptrdiff_t>(pos), run, value);
        pos += run;
        value ^= 1;
    }
    if (pos != m.pixels.size()) throw ContractViolation("rle_decode: runs do not cover the mask");
    return m;
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += kB64[v & 63];
    }
    if (i < bytes.size()) {
        std::uint32_t v = bytes[i] << 16;
        if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? kB64[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    // Tolerate data-URL prefixes ("data:image/png;base64,...").
    if (auto comma = text.find(','); text.starts_with("data:") && comma != std::string_view::npos)
        text.remove_prefix(comma + 1);
    std::array<int, 256> table;
    table.fill(-1);
    for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(kB64[i])] = i;
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char ch : text) {
        if (ch == '=' ) break;
        if (ch == '\n' || ch == '\r' || ch == ' ') continue;
        const int v = table[static_cast<unsigned char>(ch)];
        if (v < 0) throw ContractViolation("base64: invalid character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

BinaryMask resize_nearest(const BinaryMask& m, int height, int width) {
    BinaryMask out(height, width, m.role);
    for (int r = 0; r < height; ++r) {
        const int sr = std::min(m.height - 1, static_cast<int>((r + 0.5) * m.height / height));
        for (int c = 0; c < width; ++c) {
            const int sc = std::min(m.width - 1, static_cast<int>((c + 0.5) * m.width / width));
            out.set(r, c, m.at(sr, sc));
        }
    }
    return out;
}

Image resize_bilinear(const Image& img, int height, int width) {
    Image out(img.id, height, width);
    for (int r = 0; r < height; ++r) {
        const double sy = std::clamp((r + 0.5) * img.height / height - 0.5, 0.0, img.height - 1.0);
        const int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, img.height - 1);
        const double fy = sy - y0;
        for (int c = 0; c < width; ++c) {
            const double sx = std::clamp((c + 0.5) * img.width / width - 0.5, 0.0, img.width - 1.0);
            const int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, img.width - 1);
            const double fx = sx - x0;
            for (int ch = 0; ch < 3; ++ch) {
                const double v = (1 - fy) * ((1 - fx) * img.at(y0, x0, ch) + fx * img.at(y0, x1, ch)) +
                                 fy * ((1 - fx) * img.at(y1, x0, ch) + fx * img.at(y1, x1, ch));
                out.at(r, c, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return out;
}

} // namespace granseg

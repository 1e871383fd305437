#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clora/tensor.hpp"

namespace clora {

// Minimal 8-bit RGB PNG codec (no alpha, no interlace). zlib handles the IDAT
// stream; chunk layout, CRCs, and scanline filters are done here.

namespace pngdetail {

inline void put_u32be(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

inline uint32_t get_u32be(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void write_chunk(std::vector<unsigned char>& out, const char type[4],
                        const unsigned char* data, size_t len) {
    put_u32be(out, static_cast<uint32_t>(len));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (len) out.insert(out.end(), data, data + len);
    uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, out.data() + start, static_cast<uInt>(4 + len)));
    put_u32be(out, crc);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace pngdetail

inline void png_write(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.shape()[2] != 3)
        throw std::invalid_argument("png_write: image must be [H,W,3], got " + shape_str(image.shape()));
    const int H = image.shape()[0], W = image.shape()[1];

    // filter type 0 per row
    std::vector<unsigned char> raw(static_cast<size_t>(H) * (1 + static_cast<size_t>(W) * 3));
    size_t p = 0;
    for (int y = 0; y < H; ++y) {
        raw[p++] = 0;
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = image.values()[(static_cast<size_t>(y) * W + x) * 3 + c];
                v        = std::min(1.0, std::max(0.0, v));
                raw[p++] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
    }

    uLongf comp_cap = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_cap);
    if (::compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw std::runtime_error("png_write: deflate failed for " + path);
    comp.resize(comp_cap);

    std::vector<unsigned char> out;
    static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);
    unsigned char ihdr[13];
    ihdr[0] = static_cast<unsigned char>(W >> 24); ihdr[1] = static_cast<unsigned char>(W >> 16);
    ihdr[2] = static_cast<unsigned char>(W >> 8);  ihdr[3] = static_cast<unsigned char>(W);
    ihdr[4] = static_cast<unsigned char>(H >> 24); ihdr[5] = static_cast<unsigned char>(H >> 16);
    ihdr[6] = static_cast<unsigned char>(H >> 8);  ihdr[7] = static_cast<unsigned char>(H);
    ihdr[8]  = 8;  // bit depth
    ihdr[9]  = 2;  // color type: truecolor RGB
    ihdr[10] = 0;  // compression
    ihdr[11] = 0;  // filter
    ihdr[12] = 0;  // no interlace
    pngdetail::write_chunk(out, "IHDR", ihdr, 13);
    pngdetail::write_chunk(out, "IDAT", comp.data(), comp.size());
    pngdetail::write_chunk(out, "IEND", nullptr, 0);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("png_write: cannot open " + path);
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) throw std::runtime_error("png_write: write failed for " + path);
}

inline Tensor png_read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("png_read: cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
        throw std::runtime_error("png_read: " + path + " is not a PNG file");

    int W = 0, H = 0;
    bool saw_ihdr = false, saw_iend = false;
    std::vector<unsigned char> idat;
    size_t p = 8;
    while (p + 12 <= buf.size()) {
        uint32_t len = pngdetail::get_u32be(&buf[p]);
        if (p + 12 + len > buf.size())
            throw std::runtime_error("png_read: truncated chunk in " + path);
        std::string type(reinterpret_cast<const char*>(&buf[p + 4]), 4);
        const unsigned char* data = &buf[p + 8];
        if (type == "IHDR") {
            if (len != 13) throw std::runtime_error("png_read: bad IHDR in " + path);
            W = static_cast<int>(pngdetail::get_u32be(data));
            H = static_cast<int>(pngdetail::get_u32be(data + 4));
            if (data[8] != 8 || data[9] != 2)
                throw std::runtime_error("png_read: " + path + " is not 8-bit RGB");
            if (data[12] != 0)
                throw std::runtime_error("png_read: interlaced PNG not supported: " + path);
            saw_ihdr = true;
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (type == "IEND") {
            saw_iend = true;
            break;
        }
        p += 12 + len;
    }
    if (!saw_ihdr || !saw_iend || idat.empty() || W <= 0 || H <= 0)
        throw std::runtime_error("png_read: malformed or truncated file " + path);

    const size_t stride = static_cast<size_t>(W) * 3;
    std::vector<unsigned char> raw(static_cast<size_t>(H) * (1 + stride));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (::uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("png_read: corrupt image data in " + path);

    // undo scanline filters
    std::vector<unsigned char> img(static_cast<size_t>(H) * stride);
    for (int y = 0; y < H; ++y) {
        const unsigned char filter = raw[static_cast<size_t>(y) * (1 + stride)];
        const unsigned char* src   = &raw[static_cast<size_t>(y) * (1 + stride) + 1];
        unsigned char* dst         = &img[static_cast<size_t>(y) * stride];
        const unsigned char* up    = y > 0 ? &img[(static_cast<size_t>(y) - 1) * stride] : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= 3 ? dst[i - 3] : 0;
            int b = up ? up[i] : 0;
            int c = (up && i >= 3) ? up[i - 3] : 0;
            int v;
            switch (filter) {
                case 0: v = src[i]; break;
                case 1: v = src[i] + a; break;
                case 2: v = src[i] + b; break;
                case 3: v = src[i] + (a + b) / 2; break;
                case 4: v = src[i] + pngdetail::paeth(a, b, c); break;
                default: throw std::runtime_error("png_read: bad filter type in " + path);
            }
            dst[i] = static_cast<unsigned char>(v & 0xff);
        }
    }

    std::vector<double> vals(static_cast<size_t>(H) * W * 3);
    for (size_t i = 0; i < vals.size(); ++i) vals[i] = img[i] / 255.0;
    return Tensor({H, W, 3}, std::move(vals));
}

}  // namespace clora

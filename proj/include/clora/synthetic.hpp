#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "clora/tensor.hpp"

namespace clora {

// Procedural stand-ins for collected photos: content images are one hard-edged
// silhouette on a plain background (exactly two colors), style images are
// full-frame two-color textures from a different palette slice.

namespace synth {

struct Color {
    double r, g, b;
};

// Content palette first (two dark, two bright), style palette second half
// (same split). Every image pairs a dark with a bright color so structure
// survives grayscale pooling.
inline const Color kPalette[8] = {
    {0.08, 0.10, 0.35}, {0.55, 0.08, 0.10},   // content darks
    {0.95, 0.85, 0.20}, {0.70, 0.95, 0.90},   // content brights
    {0.15, 0.05, 0.30}, {0.05, 0.25, 0.10},   // style darks
    {0.95, 0.55, 0.15}, {0.30, 0.85, 0.90},   // style brights
};

inline void put_pixel(Tensor& img, int y, int x, const Color& c) {
    const int w  = img.shape()[1];
    size_t base  = (static_cast<size_t>(y) * w + x) * 3;
    auto& v      = img.values();
    v[base]      = c.r;
    v[base + 1]  = c.g;
    v[base + 2]  = c.b;
}

}  // namespace synth

inline Tensor synthetic_content_image(int h, int w, Rng& rng) {
    using synth::Color;
    int dark   = rng.uniform_int(0, 1);
    int bright = rng.uniform_int(2, 3);
    bool dark_bg = rng.uniform() < 0.5;
    const Color bg = synth::kPalette[dark_bg ? dark : bright];
    const Color fg = synth::kPalette[dark_bg ? bright : dark];

    Tensor img = Tensor::zeros({h, w, 3});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) synth::put_pixel(img, y, x, bg);

    const int kind = rng.uniform_int(0, 2);  // 0 circle, 1 square, 2 triangle
    const int r    = rng.uniform_int(3, std::min(h, w) / 3);
    const int cy   = rng.uniform_int(r, h - 1 - r);
    const int cx   = rng.uniform_int(r, w - 1 - r);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool inside = false;
            if (kind == 0) {
                inside = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r;
            } else if (kind == 1) {
                inside = std::abs(y - cy) <= r && std::abs(x - cx) <= r;
            } else {
                // downward triangle: apex row cy - r, base row cy + r
                int dy = y - (cy - r);
                inside = dy >= 0 && dy <= 2 * r && std::abs(x - cx) <= dy / 2;
            }
            if (inside) synth::put_pixel(img, y, x, fg);
        }
    return img;
}

inline Tensor synthetic_style_image(int h, int w, Rng& rng) {
    using synth::Color;
    const Color ca = synth::kPalette[rng.uniform_int(4, 5)];  // dark
    const Color cb = synth::kPalette[rng.uniform_int(6, 7)];  // bright

    Tensor img     = Tensor::zeros({h, w, 3});
    const int kind = rng.uniform_int(0, 2);  // 0 stripes, 1 checker, 2 two-color noise
    const int cell = rng.uniform_int(2, 4);
    const int axis = rng.uniform_int(0, 2);  // stripes: 0 horizontal, 1 vertical, 2 diagonal
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool pick_a;
            if (kind == 0) {
                int u  = axis == 0 ? y : (axis == 1 ? x : x + y);
                pick_a = (u / cell) % 2 == 0;
            } else if (kind == 1) {
                pick_a = ((y / cell) + (x / cell)) % 2 == 0;
            } else {
                pick_a = rng.uniform() < 0.5;
            }
            synth::put_pixel(img, y, x, pick_a ? ca : cb);
        }
    return img;
}

inline std::pair<Tensor, Tensor> generate_synthetic_pair(uint64_t seed, int h = 16, int w = 16) {
    Rng rng(seed);
    Tensor content = synthetic_content_image(h, w, rng);
    Tensor style   = synthetic_style_image(h, w, rng);
    return {content, style};
}

// Training corpus for the base denoiser: alternating silhouettes and textures.
inline std::vector<Tensor> synthetic_dataset(uint64_t seed, int n, int h = 16, int w = 16) {
    Rng rng(seed);
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        out.push_back(i % 2 == 0 ? synthetic_content_image(h, w, rng)
                                 : synthetic_style_image(h, w, rng));
    return out;
}

}  // namespace clora

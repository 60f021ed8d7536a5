#include "fewcount/render.hpp"

#include <algorithm>
#include <cmath>

#include "fewcount/errors.hpp"

namespace fewcount {

Tensor<uint8_t> density_to_gray(const Tensor<float>& density) {
    if (density.rank() != 2) throw ShapeError("density_to_gray: expected (H,W)");
    float lo = density[0], hi = density[0];
    for (long long i = 0; i < density.size(); ++i) {
        lo = std::min(lo, density[i]);
        hi = std::max(hi, density[i]);
    }
    float span = hi - lo;
    Tensor<uint8_t> out(density.shape());
    for (long long i = 0; i < density.size(); ++i) {
        double v = span > 0.0f ? (density[i] - lo) / span : 0.0;
        out[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

namespace {

void draw_box(Tensor<uint8_t>& rgb, const BoundingBox& b) {
    int h = rgb.dim(1), w = rgb.dim(2);
    int x0 = std::clamp(static_cast<int>(std::lround(b.x)), 0, w - 1);
    int y0 = std::clamp(static_cast<int>(std::lround(b.y)), 0, h - 1);
    int x1 = std::clamp(static_cast<int>(std::lround(b.x + b.w)) - 1, 0, w - 1);
    int y1 = std::clamp(static_cast<int>(std::lround(b.y + b.h)) - 1, 0, h - 1);
    auto put = [&](int y, int x) {
        rgb.at(0, y, x) = 255; // yellow
        rgb.at(1, y, x) = 220;
        rgb.at(2, y, x) = 0;
    };
    for (int t = 0; t < 2; ++t) {
        int yt = std::min(y0 + t, h - 1), yb = std::max(y1 - t, 0);
        for (int x = x0; x <= x1; ++x) {
            put(yt, x);
            put(yb, x);
        }
        int xl = std::min(x0 + t, w - 1), xr = std::max(x1 - t, 0);
        for (int y = y0; y <= y1; ++y) {
            put(y, xl);
            put(y, xr);
        }
    }
}

} // namespace

Tensor<uint8_t> render_overlay(const Tensor<uint8_t>& rgb, const std::vector<BoundingBox>& boxes,
                               const Tensor<float>& density) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("render_overlay: expected (3,H,W)");
    Tensor<uint8_t> left = rgb;
    for (const BoundingBox& b : boxes) draw_box(left, b);
    Tensor<uint8_t> gray = density_to_gray(density);
    int h = std::max(left.dim(1), gray.dim(0));
    const int gap = 8;
    int w = left.dim(2) + gap + gray.dim(1);
    Tensor<uint8_t> canvas(Shape{3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < left.dim(1); ++y)
            for (int x = 0; x < left.dim(2); ++x) canvas.at(c, y, x) = left.at(c, y, x);
    int off = left.dim(2) + gap;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < gray.dim(0); ++y)
            for (int x = 0; x < gray.dim(1); ++x) canvas.at(c, y, off + x) = gray.at(y, x);
    return canvas;
}

} // namespace fewcount

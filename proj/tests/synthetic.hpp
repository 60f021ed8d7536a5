#pragma once

// Synthetic dot-image generator for training-loop tests: Gaussian blobs on a
// dark background, with one annotated box per blob.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fewcount/dataset.hpp"
#include "fewcount/rng.hpp"

namespace testutil {

inline fewcount::ImageSample make_dot_image(const std::string& id, int w, int h, int n_dots,
                                            fewcount::Rng& rng) {
    using namespace fewcount;
    ImageSample s;
    s.id = id;
    s.pixels = Tensor<uint8_t>(Shape{3, h, w});
    std::vector<double> canvas(static_cast<size_t>(h) * w, 25.0);
    for (int d = 0; d < n_dots; ++d) {
        double margin = 6.0;
        Point p{rng.uniform(margin, w - margin), rng.uniform(margin, h - margin)};
        double radius = rng.uniform(1.8, 3.2);
        double peak = rng.uniform(120.0, 220.0);
        int reach = static_cast<int>(std::ceil(radius * 3.0));
        int cy = static_cast<int>(std::lround(p.y));
        int cx = static_cast<int>(std::lround(p.x));
        for (int y = std::max(0, cy - reach); y <= std::min(h - 1, cy + reach); ++y)
            for (int x = std::max(0, cx - reach); x <= std::min(w - 1, cx + reach); ++x) {
                double dy = y - p.y, dx = x - p.x;
                canvas[static_cast<size_t>(y) * w + x] +=
                    peak * std::exp(-(dy * dy + dx * dx) / (2.0 * radius * radius));
            }
        s.dots.push_back(p);
        double half = radius * 2.0;
        BoundingBox b{p.x - half, p.y - half, 2.0 * half, 2.0 * half};
        b = clip_to(b, w, h);
        s.boxes.push_back(b);
    }
    for (int c = 0; c < 3; ++c) {
        double tint = 0.85 + 0.1 * c;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double v = canvas[static_cast<size_t>(y) * w + x] * tint;
                s.pixels.at(c, y, x) =
                    static_cast<uint8_t>(std::clamp(v + rng.uniform(-2.0, 2.0), 0.0, 255.0));
            }
    }
    return s;
}

inline std::vector<fewcount::ImageSample> make_dot_dataset(int n, int w, int h, int min_dots,
                                                           int max_dots, uint64_t seed) {
    fewcount::Rng rng(seed);
    std::vector<fewcount::ImageSample> out;
    for (int i = 0; i < n; ++i) {
        int dots = min_dots +
                   static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_dots - min_dots + 1)));
        char buf[32];
        std::snprintf(buf, sizeof(buf), "synth_%03d", i);
        out.push_back(make_dot_image(buf, w, h, dots, rng));
    }
    return out;
}

} // namespace testutil

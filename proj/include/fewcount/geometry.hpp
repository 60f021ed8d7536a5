#pragma once

#include <algorithm>
#include <string>

#include "fewcount/errors.hpp"

namespace fewcount {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

// Axis-aligned box: (x,y) is the top-left corner, y points down.
// Coordinates are continuous pixels, in whatever space the box lives in
// (image space or feature space).
struct BoundingBox {
    double x = 0.0;
    double y = 0.0;
    double h = 0.0;
    double w = 0.0;
};

inline std::string box_str(const BoundingBox& b) {
    return "(x=" + std::to_string(b.x) + ", y=" + std::to_string(b.y) +
           ", h=" + std::to_string(b.h) + ", w=" + std::to_string(b.w) + ")";
}

// Rescales width/height by `s` keeping the box centre fixed.
inline BoundingBox scale_about_center(const BoundingBox& b, double s) {
    double cx = b.x + b.w / 2.0;
    double cy = b.y + b.h / 2.0;
    BoundingBox out;
    out.w = b.w * s;
    out.h = b.h * s;
    out.x = cx - out.w / 2.0;
    out.y = cy - out.h / 2.0;
    return out;
}

// Intersects the box with [0,w_limit] x [0,h_limit]. The result may be
// degenerate (h or w <= 0) when the box lies fully outside.
inline BoundingBox clip_to(const BoundingBox& b, double w_limit, double h_limit) {
    double x0 = std::max(0.0, b.x);
    double y0 = std::max(0.0, b.y);
    double x1 = std::min(w_limit, b.x + b.w);
    double y1 = std::min(h_limit, b.y + b.h);
    return BoundingBox{x0, y0, y1 - y0, x1 - x0};
}

// Projects an image-space box to feature space: all four parameters are
// halved, with no rounding.
inline BoundingBox project_half(const BoundingBox& b) {
    return BoundingBox{b.x * 0.5, b.y * 0.5, b.h * 0.5, b.w * 0.5};
}

inline bool box_in_bounds(const BoundingBox& b, double w_limit, double h_limit) {
    return b.h > 0 && b.w > 0 && b.x >= 0 && b.y >= 0 && b.x + b.w <= w_limit &&
           b.y + b.h <= h_limit;
}

} // namespace fewcount

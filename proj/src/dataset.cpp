#include "fewcount/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

#include <json.hpp>

#include "fewcount/errors.hpp"
#include "fewcount/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fewcount {

void validate_sample(const ImageSample& s) {
    if (s.pixels.rank() != 3 || s.pixels.dim(0) != 3)
        throw ValidationError("sample " + s.id + ": pixels must be (3,H,W)");
    double H = s.height();
    double W = s.width();
    if (H <= 0 || W <= 0) throw ValidationError("sample " + s.id + ": empty image");
    for (size_t i = 0; i < s.dots.size(); ++i) {
        const Point& d = s.dots[i];
        if (!(d.x >= 0 && d.x <= W && d.y >= 0 && d.y <= H))
            throw ValidationError("sample " + s.id + ": dot " + std::to_string(i) +
                                  " out of bounds (" + std::to_string(d.x) + ", " +
                                  std::to_string(d.y) + ")");
    }
    for (size_t i = 0; i < s.boxes.size(); ++i) {
        const BoundingBox& b = s.boxes[i];
        if (!(b.h > 0 && b.w > 0))
            throw ValidationError("sample " + s.id + ": box " + std::to_string(i) +
                                  " degenerate " + box_str(b));
        if (!(b.x >= 0 && b.y >= 0 && b.x + b.w <= W && b.y + b.h <= H))
            throw ValidationError("sample " + s.id + ": box " + std::to_string(i) +
                                  " out of bounds " + box_str(b));
    }
}

namespace {

ImageSample load_one(const fs::path& image_path, const fs::path& sidecar) {
    ImageSample s;
    s.id = image_path.stem().string();
    s.pixels = read_image(image_path.string());
    std::ifstream in(sidecar);
    if (!in) throw ValidationError("sample " + s.id + ": missing annotation file " +
                                   sidecar.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("sample " + s.id + ": bad annotation file: " + e.what());
    }
    if (!j.contains("dots") || !j["dots"].is_array())
        throw ValidationError("sample " + s.id + ": annotation missing 'dots' array");
    if (!j.contains("boxes") || !j["boxes"].is_array())
        throw ValidationError("sample " + s.id + ": annotation missing 'boxes' array");
    for (const auto& d : j["dots"]) {
        if (!d.is_array() || d.size() != 2)
            throw ValidationError("sample " + s.id + ": dot entries must be [x,y]");
        s.dots.push_back(Point{d[0].get<double>(), d[1].get<double>()});
    }
    for (const auto& b : j["boxes"]) {
        if (!b.is_array() || b.size() != 4)
            throw ValidationError("sample " + s.id + ": box entries must be [x,y,h,w]");
        s.boxes.push_back(BoundingBox{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                                      b[3].get<double>()});
    }
    validate_sample(s);
    return s;
}

} // namespace

DatasetReport load_dataset_report(const std::string& root) {
    DatasetReport report;
    if (!fs::is_directory(root)) throw ValidationError("dataset root is not a directory: " + root);
    std::vector<fs::path> images;
    for (const auto& e : fs::directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        if (has_image_extension(e.path().filename().string())) images.push_back(e.path());
    }
    std::sort(images.begin(), images.end(),
              [](const fs::path& a, const fs::path& b) { return a.stem() < b.stem(); });
    if (images.empty()) {
        report.empty_root = true;
        return report;
    }
    for (const fs::path& p : images) {
        fs::path sidecar = p;
        sidecar.replace_extension(".json");
        try {
            report.samples.push_back(load_one(p, sidecar));
        } catch (const Error& e) {
            report.issues.push_back(SampleIssue{p.stem().string(), e.what()});
        }
    }
    return report;
}

std::vector<ImageSample> load_dataset(const std::string& root) {
    DatasetReport report = load_dataset_report(root);
    if (!report.issues.empty()) throw ValidationError(report.issues.front().message);
    if (report.empty_root)
        std::cerr << "warning: no images found under " << root << "\n";
    return std::move(report.samples);
}

SplitResult split_train_test(std::vector<ImageSample> samples, double ratio, uint64_t seed) {
    if (samples.size() < 2) throw ValidationError("split_train_test: need at least 2 samples");
    if (!(ratio > 0.0 && ratio < 1.0))
        throw ValidationError("split_train_test: ratio must be in (0,1)");
    std::sort(samples.begin(), samples.end(),
              [](const ImageSample& a, const ImageSample& b) { return a.id < b.id; });
    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
    size_t n_train = static_cast<size_t>(std::lround(ratio * static_cast<double>(samples.size())));
    SplitResult out;
    for (size_t i = 0; i < order.size(); ++i) {
        if (i < n_train) out.train.push_back(std::move(samples[order[i]]));
        else out.test.push_back(std::move(samples[order[i]]));
    }
    return out;
}

FoldSplit make_folds(const std::vector<ImageSample>& train, int k, uint64_t seed) {
    if (k < 2) throw ValidationError("make_folds: k must be >= 2");
    if (static_cast<size_t>(k) > train.size())
        throw ValidationError("make_folds: k exceeds the number of training samples");
    std::vector<std::string> ids;
    ids.reserve(train.size());
    for (const ImageSample& s : train) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    Rng rng(seed);
    rng.shuffle(ids.begin(), ids.end());
    FoldSplit split;
    split.k = k;
    for (size_t i = 0; i < ids.size(); ++i)
        split.fold_assignments[ids[i]] = static_cast<int>(i % static_cast<size_t>(k));
    return split;
}

NormStats compute_norm_stats(const std::vector<ImageSample>& samples) {
    if (samples.empty()) throw ValidationError("compute_norm_stats: empty sample list");
    double sum[3] = {0, 0, 0};
    double sum_sq[3] = {0, 0, 0};
    long long count = 0;
    for (const ImageSample& s : samples) {
        long long hw = static_cast<long long>(s.height()) * s.width();
        for (int c = 0; c < 3; ++c) {
            const uint8_t* px = s.pixels.data() + c * hw;
            for (long long i = 0; i < hw; ++i) {
                double v = static_cast<double>(px[i]);
                sum[c] += v;
                sum_sq[c] += v * v;
            }
        }
        count += hw;
    }
    NormStats stats;
    for (int c = 0; c < 3; ++c) {
        stats.mean[c] = sum[c] / static_cast<double>(count);
        double var = sum_sq[c] / static_cast<double>(count) - stats.mean[c] * stats.mean[c];
        if (var <= 0.0)
            throw ValidationError("compute_norm_stats: degenerate (zero variance) channel " +
                                  std::to_string(c));
        stats.std[c] = std::sqrt(var);
    }
    return stats;
}

GaussianKernelSpec gaussian_window(const std::vector<Point>& dots) {
    if (dots.empty()) throw ValidationError("gaussian_window: no dots");
    GaussianKernelSpec spec;
    if (dots.size() == 1) {
        spec.window = 15;
    } else {
        double total = 0.0;
        for (size_t i = 0; i < dots.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (size_t j = 0; j < dots.size(); ++j) {
                if (i == j) continue;
                double dx = dots[i].x - dots[j].x;
                double dy = dots[i].y - dots[j].y;
                best = std::min(best, std::sqrt(dx * dx + dy * dy));
            }
            total += best;
        }
        double avg = total / static_cast<double>(dots.size());
        long half = std::lround((avg - 1.0) / 2.0); // nearest odd, ties up
        spec.window = static_cast<int>(std::max(1l, half) * 2 + 1);
        spec.window = std::max(spec.window, 3);
    }
    spec.sigma = spec.window / 4.0;
    return spec;
}

Tensor<double> gt_density(const std::vector<Point>& dots, int h, int w) {
    if (dots.empty()) throw ValidationError("gt_density: at least one dot required");
    if (h <= 0 || w <= 0) throw ValidationError("gt_density: empty map");
    for (const Point& d : dots)
        if (!(d.x >= 0 && d.x <= w && d.y >= 0 && d.y <= h))
            throw ValidationError("gt_density: dot out of bounds");
    GaussianKernelSpec spec = gaussian_window(dots);
    int half = (spec.window - 1) / 2;
    double inv_2s2 = 1.0 / (2.0 * spec.sigma * spec.sigma);
    Tensor<double> map(Shape{h, w});
    for (const Point& d : dots) {
        int cy = std::clamp(static_cast<int>(std::lround(d.y)), 0, h - 1);
        int cx = std::clamp(static_cast<int>(std::lround(d.x)), 0, w - 1);
        int y0 = std::max(0, cy - half), y1 = std::min(h - 1, cy + half);
        int x0 = std::max(0, cx - half), x1 = std::min(w - 1, cx + half);
        // clip, then renormalise so every dot contributes exactly unit mass
        double mass = 0.0;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double dy = y - cy, dx = x - cx;
                mass += std::exp(-(dy * dy + dx * dx) * inv_2s2);
            }
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double dy = y - cy, dx = x - cx;
                map.at(y, x) += std::exp(-(dy * dy + dx * dx) * inv_2s2) / mass;
            }
    }
    return map;
}

void write_split_file(const std::string& path, const SplitFile& split) {
    json j;
    j["ratio"] = split.ratio;
    j["seed"] = split.seed;
    j["k"] = split.k;
    json entries = json::object();
    for (const auto& [id, e] : split.entries) {
        entries[id] = {{"split", e.is_train ? "train" : "test"}, {"fold", e.fold}};
    }
    j["entries"] = entries;
    std::ofstream out(path);
    if (!out) throw Error("cannot write split file: " + path);
    out << j.dump(2) << "\n";
}

SplitFile read_split_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open split file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad split file: ") + e.what());
    }
    SplitFile split;
    split.ratio = j.value("ratio", 0.8);
    split.seed = j.value("seed", 0ull);
    split.k = j.value("k", 0);
    if (!j.contains("entries") || !j["entries"].is_object())
        throw ValidationError("split file missing 'entries'");
    for (auto it = j["entries"].begin(); it != j["entries"].end(); ++it) {
        SplitEntry e;
        std::string which = it.value().value("split", "");
        if (which != "train" && which != "test")
            throw ValidationError("split file entry " + it.key() + " has bad 'split'");
        e.is_train = which == "train";
        e.fold = it.value().value("fold", -1);
        split.entries[it.key()] = e;
    }
    return split;
}

} // namespace fewcount

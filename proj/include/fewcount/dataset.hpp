#pragma once

#include <map>
#include <string>
#include <vector>

#include "fewcount/geometry.hpp"
#include "fewcount/rng.hpp"
#include "fewcount/tensor.hpp"

namespace fewcount {

// One annotated plate image: planar 8-bit RGB pixels, dot annotations at
// colony centres, and the full set of annotated bounding boxes (exemplars
// are drawn from these at training time).
struct ImageSample {
    std::string id;
    Tensor<uint8_t> pixels; // (3,H,W)
    std::vector<Point> dots;
    std::vector<BoundingBox> boxes;

    int height() const { return pixels.dim(1); }
    int width() const { return pixels.dim(2); }
};

// Validates the ImageSample invariants; throws ValidationError naming the id.
void validate_sample(const ImageSample& s);

struct SampleIssue {
    std::string id;
    std::string message;
};

struct DatasetReport {
    std::vector<ImageSample> samples; // valid samples, ordered by id
    std::vector<SampleIssue> issues;
    bool empty_root = false;
};

// Scans `root` for images (PNG/JPEG/PPM) with a same-basename `.json`
// annotation sidecar. Collects one issue per invalid sample.
DatasetReport load_dataset_report(const std::string& root);

// Strict variant: throws ValidationError on the first invalid sample.
// An empty directory yields an empty list and a warning on stderr.
std::vector<ImageSample> load_dataset(const std::string& root);

struct SplitResult {
    std::vector<ImageSample> train;
    std::vector<ImageSample> test;
};

// Deterministic shuffled split; |train| = round(ratio * N).
SplitResult split_train_test(std::vector<ImageSample> samples, double ratio, uint64_t seed);

struct FoldSplit {
    std::map<std::string, int> fold_assignments; // sample id -> fold in [0,k)
    int k = 0;
};

// Balanced k-fold partition of the training ids; fold sizes differ by at
// most one. Deterministic given the seed.
FoldSplit make_folds(const std::vector<ImageSample>& train, int k, uint64_t seed);

struct NormStats {
    double mean[3] = {0, 0, 0};
    double std[3] = {1, 1, 1};
};

// Per-channel mean and standard deviation over every pixel of every sample.
// std is the square root of the population variance.
NormStats compute_norm_stats(const std::vector<ImageSample>& samples);

template <typename T>
Tensor<T> normalize(const ImageSample& s, const NormStats& stats) {
    for (double sd : stats.std)
        if (!(sd > 0.0)) throw ValidationError("normalize: std must be positive");
    const Tensor<uint8_t>& px = s.pixels;
    Tensor<T> out(px.shape());
    long long hw = static_cast<long long>(px.dim(1)) * px.dim(2);
    for (int c = 0; c < 3; ++c) {
        double mean = stats.mean[c];
        double inv = 1.0 / stats.std[c];
        const uint8_t* src = px.data() + c * hw;
        T* dst = out.data() + c * hw;
        for (long long i = 0; i < hw; ++i)
            dst[i] = static_cast<T>((static_cast<double>(src[i]) - mean) * inv);
    }
    return out;
}

// Adaptive Gaussian kernel geometry: the window is the average
// nearest-neighbour distance over all dots, rounded to the nearest odd
// integer (ties up) and clamped to >= 3; sigma is a quarter of the window.
// A single dot has no neighbour and falls back to a 15 px window.
struct GaussianKernelSpec {
    int window = 15;
    double sigma = 15.0 / 4.0;
};
GaussianKernelSpec gaussian_window(const std::vector<Point>& dots);

// Ground-truth density map: one Gaussian stamped per dot, each kernel
// renormalised to unit mass after boundary clipping, so the map sums to the
// dot count.
Tensor<double> gt_density(const std::vector<Point>& dots, int h, int w);

// ---- split file (external interface) ---------------------------------------

struct SplitEntry {
    bool is_train = true;
    int fold = -1; // -1 for test entries
};

struct SplitFile {
    double ratio = 0.8;
    uint64_t seed = 0;
    int k = 0;
    std::map<std::string, SplitEntry> entries;
};

void write_split_file(const std::string& path, const SplitFile& split);
SplitFile read_split_file(const std::string& path);

} // namespace fewcount

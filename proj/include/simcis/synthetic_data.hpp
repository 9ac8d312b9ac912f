#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "simcis/tensor.hpp"

namespace simcis {

enum class ShapeKind { Square = 0, Circle = 1, Triangle = 2, Plus = 3 };

struct ClassSpec {
    ShapeKind kind;
    int color;  // palette index
};

// Catalog is kind-major: class k = shape (k / num_colors), color (k % num_colors).
ClassSpec class_spec(int class_id, int num_colors = 4);

struct ShapeWorldConfig {
    int image_size = 32;
    int num_classes = 16;
    int min_instances = 1;
    int max_instances = 3;
    uint64_t seed = 0;
    // sampling weight per class; empty -> uniform
    std::vector<double> class_freq;
};

struct Segment {
    int class_id = -1;
    std::vector<uint8_t> mask;  // H*W, row-major, 1 = inside

    int64_t area() const {
        int64_t n = 0;
        for (uint8_t v : mask) n += v;
        return n;
    }
};

struct Annotation {
    int height = 0, width = 0;
    std::vector<Segment> segments;  // pairwise disjoint masks
};

struct Sample {
    Tensor image;  // [3,H,W], values in [0,1]
    Annotation annotation;
};

// Pure function of (config, index): the same pair always yields bit-identical
// pixels and masks. Shapes never overlap and never touch the image border.
Sample generate(const ShapeWorldConfig& config, int64_t index);

// Keeps only segments whose class is visible; everything else becomes
// background. The image itself is untouched, so hidden objects still appear
// in the pixels (background shift by construction).
Annotation stage_view(const Annotation& full, const std::set<int>& visible);

// Per-pixel class map; -1 where no segment covers the pixel.
std::vector<int> semantic_map(const Annotation& ann);

// Exact or near-exact pixel count for an unclipped shape of half-extent a,
// used as the rasterization oracle. Returns {area, perimeter_bound}.
struct AreaBound {
    double area;
    double tolerance;
};
AreaBound analytic_area(ShapeKind kind, int a);

// Quantizes pixels to 8-bit RGB, packed H*W*3; the raw-byte form used by the
// image-replay storage comparison.
std::vector<uint8_t> image_to_u8(const Tensor& image);

}  // namespace simcis

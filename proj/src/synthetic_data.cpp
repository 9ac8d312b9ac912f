#include "simcis/synthetic_data.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace simcis {

namespace {

constexpr std::array<std::array<double, 3>, 4> kPalette = {{
    {0.85, 0.15, 0.15},
    {0.15, 0.80, 0.20},
    {0.20, 0.25, 0.90},
    {0.90, 0.85, 0.15},
}};

// Rasterizes one shape centered at (cy,cx) with half-extent a into a fresh
// mask; callers guarantee the bounding box stays inside the image.
std::vector<uint8_t> rasterize(ShapeKind kind, int cy, int cx, int a, int H, int W) {
    std::vector<uint8_t> m(static_cast<size_t>(H) * W, 0);
    auto put = [&](int y, int x) { m[static_cast<size_t>(y) * W + x] = 1; };
    switch (kind) {
        case ShapeKind::Square:
            for (int dy = -a; dy <= a; ++dy)
                for (int dx = -a; dx <= a; ++dx) put(cy + dy, cx + dx);
            break;
        case ShapeKind::Circle:
            for (int dy = -a; dy <= a; ++dy)
                for (int dx = -a; dx <= a; ++dx)
                    if (dy * dy + dx * dx <= a * a) put(cy + dy, cx + dx);
            break;
        case ShapeKind::Triangle:
            // apex up; row k (0-based from apex) spans half-width k/2
            for (int k = 0; k <= 2 * a; ++k) {
                const int hw = k / 2;
                for (int dx = -hw; dx <= hw; ++dx) put(cy - a + k, cx + dx);
            }
            break;
        case ShapeKind::Plus: {
            const int t = std::max(1, a / 3);
            for (int dy = -t; dy <= t; ++dy)
                for (int dx = -a; dx <= a; ++dx) put(cy + dy, cx + dx);
            for (int dy = -a; dy <= a; ++dy)
                for (int dx = -t; dx <= t; ++dx) put(cy + dy, cx + dx);
            break;
        }
    }
    return m;
}

bool disjoint(const std::vector<uint8_t>& a, const std::vector<uint8_t>& occupied) {
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] && occupied[i]) return false;
    return true;
}

}  // namespace

ClassSpec class_spec(int class_id, int num_colors) {
    return ClassSpec{static_cast<ShapeKind>((class_id / num_colors) % 4), class_id % num_colors};
}

AreaBound analytic_area(ShapeKind kind, int a) {
    const double s = 2.0 * a + 1.0;
    switch (kind) {
        case ShapeKind::Square:
            return {s * s, 0.0};
        case ShapeKind::Circle:
            return {M_PI * a * a, 2.0 * M_PI * a + 4.0};
        case ShapeKind::Triangle:
            return {0.5 * s * s, 2.0 * s + 2.0};
        case ShapeKind::Plus: {
            const double t = 2.0 * std::max(1, a / 3) + 1.0;
            return {2.0 * s * t - t * t, 0.0};
        }
    }
    throw std::invalid_argument("analytic_area: bad kind");
}

Sample generate(const ShapeWorldConfig& config, int64_t index) {
    if (index < 0) throw std::invalid_argument("generate: index must be >= 0");
    const int H = config.image_size, W = config.image_size;
    Rng rng(mix_seed(config.seed, static_cast<uint64_t>(index)));

    Sample out;
    out.image = Tensor({3, H, W});
    out.annotation.height = H;
    out.annotation.width = W;

    // muted gray background with mild texture
    for (int64_t i = 0; i < out.image.numel(); ++i)
        out.image[i] = 0.42 + 0.06 * rng.uniform();

    std::vector<double> freq = config.class_freq;
    if (freq.empty()) freq.assign(static_cast<size_t>(config.num_classes), 1.0);
    if (static_cast<int>(freq.size()) != config.num_classes)
        throw std::invalid_argument("generate: class_freq size mismatch");
    double fsum = 0;
    for (double f : freq) fsum += f;
    if (fsum <= 0) throw std::invalid_argument("generate: class_freq sums to zero");

    const int n = static_cast<int>(rng.uniform_int(config.min_instances, config.max_instances));
    std::vector<uint8_t> occupied(static_cast<size_t>(H) * W, 0);

    for (int inst = 0; inst < n; ++inst) {
        // weighted class draw
        double r = rng.uniform() * fsum;
        int cls = config.num_classes - 1;
        for (int c = 0; c < config.num_classes; ++c) {
            r -= freq[static_cast<size_t>(c)];
            if (r < 0) {
                cls = c;
                break;
            }
        }
        const ClassSpec spec = class_spec(cls);

        std::vector<uint8_t> mask;
        int a = 0;
        // Largest half-extent that still leaves a one-pixel border at any
        // placement: a+1 <= H-a-2. Small canvases bind before the H/6 rule.
        const int a_hi = std::min(std::max(3, H / 6), (H - 3) / 2);
        for (int attempt = 0; attempt < 200; ++attempt) {
            a = static_cast<int>(rng.uniform_int(2, std::max(2, a_hi - attempt / 50)));
            const int cy = static_cast<int>(rng.uniform_int(a + 1, H - a - 2));
            const int cx = static_cast<int>(rng.uniform_int(a + 1, W - a - 2));
            std::vector<uint8_t> cand = rasterize(spec.kind, cy, cx, a, H, W);
            if (disjoint(cand, occupied)) {
                mask = std::move(cand);
                break;
            }
        }
        if (mask.empty()) {
            // deterministic fallback: first free spot at the smallest extent
            a = 2;
            for (int cy = a + 1; cy < H - a - 1 && mask.empty(); ++cy)
                for (int cx = a + 1; cx < W - a - 1 && mask.empty(); ++cx) {
                    std::vector<uint8_t> cand = rasterize(spec.kind, cy, cx, a, H, W);
                    if (disjoint(cand, occupied)) mask = std::move(cand);
                }
        }
        if (mask.empty()) break;  // image genuinely full

        const std::array<double, 3>& base = kPalette[static_cast<size_t>(spec.color)];
        const double jitter = 0.9 + 0.1 * rng.uniform();
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const size_t i = static_cast<size_t>(y) * W + x;
                if (!mask[i]) continue;
                occupied[i] = 1;
                for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = base[static_cast<size_t>(c)] * jitter;
            }

        Segment seg;
        seg.class_id = cls;
        seg.mask = std::move(mask);
        out.annotation.segments.push_back(std::move(seg));
    }
    return out;
}

Annotation stage_view(const Annotation& full, const std::set<int>& visible) {
    Annotation out;
    out.height = full.height;
    out.width = full.width;
    for (const Segment& s : full.segments)
        if (visible.count(s.class_id)) out.segments.push_back(s);
    return out;
}

std::vector<int> semantic_map(const Annotation& ann) {
    std::vector<int> map(static_cast<size_t>(ann.height) * ann.width, -1);
    for (const Segment& s : ann.segments)
        for (size_t i = 0; i < s.mask.size(); ++i)
            if (s.mask[i]) map[i] = s.class_id;
    return map;
}

std::vector<uint8_t> image_to_u8(const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("image_to_u8: want [3,H,W]");
    const int64_t H = image.dim(1), W = image.dim(2);
    std::vector<uint8_t> out(static_cast<size_t>(H * W * 3));
    size_t k = 0;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                double v = image.at(c, y, x);
                v = std::min(1.0, std::max(0.0, v));
                out[k++] = static_cast<uint8_t>(std::lround(v * 255.0));
            }
    return out;
}

}  // namespace simcis

#pragma once

#include <cstdint>

namespace simcis {

// Closed-form byte accounting for the two replay strategies. The CLI's
// storage-report command and the arithmetic tests both call these, so the
// numbers printed to users and the numbers asserted in tests cannot drift
// apart.

// Capacity bound of a virtual-query bank: every per-class queue filled.
constexpr int64_t vq_storage_bytes(int64_t capacity_per_class, int64_t num_classes,
                                   int64_t dim, int64_t bytes_per_real) {
    return capacity_per_class * num_classes * dim * bytes_per_real;
}

// Raw image buffer holding `num_images` images of `bytes_per_image` each.
constexpr int64_t image_replay_bytes(int64_t num_images, int64_t bytes_per_image) {
    return num_images * bytes_per_image;
}

// Reference comparison at realistic dimensions: replaying query vectors at
// the best-performing bank size (80 vectors for each of 150 classes, D=256,
// half-precision) against the best-performing raw-image buffer (600 images
// of ~36 KiB each). The interesting output is the ratio: vectors need only
// about a quarter of the image buffer's bytes.
struct StorageComparison {
    int64_t vq_bytes = 0;
    int64_t image_bytes = 0;
    double ratio = 0.0;  // vq_bytes / image_bytes
};

constexpr int64_t kRefVqPerClass = 80;
constexpr int64_t kRefClasses = 150;
constexpr int64_t kRefDim = 256;
constexpr int64_t kRefBytesPerReal = 2;
constexpr int64_t kRefImages = 600;
constexpr int64_t kRefBytesPerImage = 36864;

inline StorageComparison reference_scale_storage() {
    StorageComparison out;
    out.vq_bytes = vq_storage_bytes(kRefVqPerClass, kRefClasses, kRefDim, kRefBytesPerReal);
    out.image_bytes = image_replay_bytes(kRefImages, kRefBytesPerImage);
    out.ratio = static_cast<double>(out.vq_bytes) / static_cast<double>(out.image_bytes);
    return out;
}

}  // namespace simcis

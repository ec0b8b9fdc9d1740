#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace chbr {

/// Interleaved 8-bit raster, row-major, `channels` samples per pixel.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 3;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
    bool operator==(const Image&) const = default;
};

/// Binary or ASCII netpbm (P2, P3, P5, P6) with maxval <= 255.
Image decode_netpbm(std::string_view bytes);
Image load_image(const std::string& path);
std::string encode_ppm(const Image& image);  // P6 (or P5 for one channel)
void save_image(const Image& image, const std::string& path);

struct CropBox {
    std::size_t x = 0, y = 0, width = 0, height = 0;
};

Image crop(const Image& image, const CropBox& box);
/// Keys cubic convolution (a = -0.5) with clamped borders.
Image resize_bicubic(const Image& image, std::size_t width, std::size_t height);
/// Shorter side resized to `size`, then the central size x size square.
Image center_resize(const Image& image, std::size_t size);

struct RandomResizedCropParams {
    std::size_t resolution = 224;
    double scale_min = 0.08, scale_max = 1.0;
    double ratio_min = 3.0 / 4.0, ratio_max = 4.0 / 3.0;
};

class Augmenter {
   public:
    virtual ~Augmenter() = default;
    /// N views; view 0 is the unaugmented image. Deterministic under `seed`.
    virtual std::vector<Image> augment(const Image& image, std::size_t num_views, std::uint64_t seed) const = 0;
};

class RandomResizedCropAugmenter : public Augmenter {
   public:
    explicit RandomResizedCropAugmenter(RandomResizedCropParams params = {}) : params_(params) {}
    std::vector<Image> augment(const Image& image, std::size_t num_views, std::uint64_t seed) const override;

    const RandomResizedCropParams& params() const { return params_; }

   private:
    RandomResizedCropParams params_;
};

/// Crop box sampling: up to ten draws of (area scale, log-uniform aspect
/// ratio); falls back to the largest central crop within the ratio bounds.
CropBox sample_crop_box(std::size_t width, std::size_t height, const RandomResizedCropParams& params,
                        std::uint64_t seed);

inline std::vector<Image> augment(const Image& image, std::size_t num_views, std::uint64_t seed,
                                  const RandomResizedCropParams& params = {}) {
    return RandomResizedCropAugmenter(params).augment(image, num_views, seed);
}

}  // namespace chbr

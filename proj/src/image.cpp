#include "chbr/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "chbr/error.hpp"
#include "chbr/util.hpp"

namespace chbr {

namespace {

class NetpbmReader {
   public:
    explicit NetpbmReader(std::string_view bytes) : s_(bytes) {}

    std::size_t number() {
        skip_space_and_comments();
        std::size_t v = 0;
        bool any = false;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
            v = v * 10 + static_cast<std::size_t>(s_[pos_++] - '0');
            any = true;
            if (v > (1u << 20)) bad("dimension too large");
        }
        if (!any) bad("expected a number");
        return v;
    }

    void single_whitespace() {
        if (pos_ >= s_.size() || !std::isspace(static_cast<unsigned char>(s_[pos_]))) bad("missing header terminator");
        ++pos_;
    }

    std::string_view rest() const { return s_.substr(pos_); }
    std::size_t pos() const { return pos_; }

    [[noreturn]] static void bad(const std::string& why) {
        throw Error(ErrorKind::precondition, "undecodable image: " + why);
    }

   private:
    void skip_space_and_comments() {
        while (pos_ < s_.size()) {
            if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
                ++pos_;
            } else if (s_[pos_] == '#') {
                while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

double cubic(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

}  // namespace

Image decode_netpbm(std::string_view bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P') NetpbmReader::bad("not a netpbm file");
    const char kind = bytes[1];
    if (kind != '2' && kind != '3' && kind != '5' && kind != '6') NetpbmReader::bad("unsupported netpbm variant");
    NetpbmReader r(bytes.substr(2));
    Image img;
    img.channels = (kind == '3' || kind == '6') ? 3 : 1;
    img.width = r.number();
    img.height = r.number();
    const auto maxval = r.number();
    if (img.width == 0 || img.height == 0) NetpbmReader::bad("zero-sized image");
    if (maxval == 0 || maxval > 255) NetpbmReader::bad("maxval must lie in [1, 255]");
    const std::size_t count = img.width * img.height * img.channels;
    img.pixels.resize(count);
    auto rescale = [&](std::size_t v) {
        if (v > maxval) NetpbmReader::bad("sample exceeds maxval");
        return static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
    };
    if (kind == '5' || kind == '6') {
        r.single_whitespace();
        const auto data = r.rest();
        if (data.size() < count) NetpbmReader::bad("truncated pixel data");
        for (std::size_t k = 0; k < count; ++k) img.pixels[k] = rescale(static_cast<unsigned char>(data[k]));
    } else {
        for (std::size_t k = 0; k < count; ++k) img.pixels[k] = rescale(r.number());
    }
    return img;
}

Image load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::precondition, "cannot open image '" + path + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_netpbm(bytes);
}

std::string encode_ppm(const Image& image) {
    std::string out = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                      std::to_string(image.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
    return out;
}

void save_image(const Image& image, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    const auto bytes = encode_ppm(image);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::precondition, "cannot write image '" + path + "'");
}

Image crop(const Image& image, const CropBox& box) {
    require(box.width > 0 && box.height > 0 && box.x + box.width <= image.width && box.y + box.height <= image.height,
            "crop box outside the image");
    Image out{box.width, box.height, image.channels, {}};
    out.pixels.reserve(box.width * box.height * image.channels);
    for (std::size_t y = box.y; y < box.y + box.height; ++y) {
        const auto* row = image.pixels.data() + (y * image.width + box.x) * image.channels;
        out.pixels.insert(out.pixels.end(), row, row + box.width * image.channels);
    }
    return out;
}

Image resize_bicubic(const Image& image, std::size_t width, std::size_t height) {
    require(width > 0 && height > 0, "resize target must be non-empty");
    require(image.width > 0 && image.height > 0, "cannot resize an empty image");
    const std::size_t C = image.channels;
    // Separable: horizontal pass into doubles, then vertical pass.
    std::vector<double> tmp(width * image.height * C);
    const double sx = static_cast<double>(image.width) / static_cast<double>(width);
    for (std::size_t x = 0; x < width; ++x) {
        const double src = (static_cast<double>(x) + 0.5) * sx - 0.5;
        const auto base = static_cast<long>(std::floor(src));
        double w[4], wsum = 0.0;
        for (int k = 0; k < 4; ++k) wsum += w[k] = cubic(src - static_cast<double>(base - 1 + k));
        for (std::size_t y = 0; y < image.height; ++y)
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) {
                    const auto xi = static_cast<std::size_t>(std::clamp<long>(base - 1 + k, 0, static_cast<long>(image.width) - 1));
                    acc += w[k] * image.at(xi, y, c);
                }
                tmp[(y * width + x) * C + c] = acc / wsum;
            }
    }
    Image out{width, height, C, std::vector<std::uint8_t>(width * height * C)};
    const double sy = static_cast<double>(image.height) / static_cast<double>(height);
    for (std::size_t y = 0; y < height; ++y) {
        const double src = (static_cast<double>(y) + 0.5) * sy - 0.5;
        const auto base = static_cast<long>(std::floor(src));
        double w[4], wsum = 0.0;
        for (int k = 0; k < 4; ++k) wsum += w[k] = cubic(src - static_cast<double>(base - 1 + k));
        for (std::size_t x = 0; x < width; ++x)
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) {
                    const auto yi = static_cast<std::size_t>(std::clamp<long>(base - 1 + k, 0, static_cast<long>(image.height) - 1));
                    acc += w[k] * tmp[(yi * width + x) * C + c];
                }
                out.pixels[(y * width + x) * C + c] = clamp_u8(acc / wsum);
            }
    }
    return out;
}

Image center_resize(const Image& image, std::size_t size) {
    require(size > 0, "target resolution must be positive");
    const double scale = static_cast<double>(size) / static_cast<double>(std::min(image.width, image.height));
    const auto w = std::max<std::size_t>(size, static_cast<std::size_t>(std::lround(image.width * scale)));
    const auto h = std::max<std::size_t>(size, static_cast<std::size_t>(std::lround(image.height * scale)));
    const Image resized = resize_bicubic(image, w, h);
    return crop(resized, {(w - size) / 2, (h - size) / 2, size, size});
}

CropBox sample_crop_box(std::size_t width, std::size_t height, const RandomResizedCropParams& p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double area = static_cast<double>(width) * static_cast<double>(height);
    const double log_lo = std::log(p.ratio_min), log_hi = std::log(p.ratio_max);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * (p.scale_min + (p.scale_max - p.scale_min) * uniform_unit(rng));
        const double ratio = std::exp(log_lo + (log_hi - log_lo) * uniform_unit(rng));
        const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ratio)));
        const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ratio)));
        if (w > 0 && h > 0 && w <= width && h <= height) {
            const auto x = static_cast<std::size_t>(uniform_index(rng, width - w + 1));
            const auto y = static_cast<std::size_t>(uniform_index(rng, height - h + 1));
            return {x, y, w, h};
        }
    }
    const double in_ratio = static_cast<double>(width) / static_cast<double>(height);
    std::size_t w = width, h = height;
    if (in_ratio < p.ratio_min) {
        h = static_cast<std::size_t>(std::lround(static_cast<double>(width) / p.ratio_min));
    } else if (in_ratio > p.ratio_max) {
        w = static_cast<std::size_t>(std::lround(static_cast<double>(height) * p.ratio_max));
    }
    w = std::clamp<std::size_t>(w, 1, width);
    h = std::clamp<std::size_t>(h, 1, height);
    return {(width - w) / 2, (height - h) / 2, w, h};
}

std::vector<Image> RandomResizedCropAugmenter::augment(const Image& image, std::size_t num_views,
                                                       std::uint64_t seed) const {
    require(num_views >= 1, "augment needs N >= 1");
    if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height * image.channels)
        throw Error(ErrorKind::precondition, "undecodable image: inconsistent raster");
    std::vector<Image> views;
    views.reserve(num_views);
    views.push_back(center_resize(image, params_.resolution));
    for (std::size_t n = 1; n < num_views; ++n) {
        const auto box = sample_crop_box(image.width, image.height, params_, derive_seed(seed, "augment", {n}));
        views.push_back(resize_bicubic(crop(image, box), params_.resolution, params_.resolution));
    }
    return views;
}

}  // namespace chbr

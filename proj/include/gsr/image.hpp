#pragma once

#include <string>
#include <vector>

#include "gsr/common.hpp"
#include "gsr/tensor.hpp"

namespace gsr {

// Float image in [0, 1], row-major H x W x C with C in {1, 3}.
struct Image {
    int width = 0, height = 0, channels = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int w, int h, int c)
        : width(w), height(h), channels(c),
          pixels(static_cast<size_t>(w) * static_cast<size_t>(h) * static_cast<size_t>(c),
                 0.0f) {}

    float& at(int y, int x, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    float at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }

    template <class S>
    Tensor<S> to_tensor() const {
        std::vector<S> v(pixels.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<S>(pixels[i]);
        return Tensor<S>({static_cast<size_t>(height), static_cast<size_t>(width),
                          static_cast<size_t>(channels)},
                         std::move(v));
    }

    template <class S>
    static Image from_tensor(const Tensor<S>& t) {
        if (t.rank() != 3)
            throw ShapeError(msg("image: expected H x W x C tensor, got ",
                                 shape_str(t.shape())));
        Image img(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(0)),
                  static_cast<int>(t.dim(2)));
        for (size_t i = 0; i < t.size(); ++i)
            img.pixels[i] = std::min(1.0f, std::max(0.0f, static_cast<float>(t.data()[i])));
        return img;
    }
};

// PNG (8-bit gray or RGB) and binary PPM/PGM (P6/P5) readers and writers.
// Saving quantizes to 8 bits; pixel handling is deterministic so identical
// float images produce identical files.
Image load_image(const std::string& path);
void save_png(const std::string& path, const Image& img);
void save_ppm(const std::string& path, const Image& img);

} // namespace gsr

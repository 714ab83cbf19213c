#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onsetnet/errors.hpp"

namespace onsetnet {

// Interleaved 8-bit RGB, row major.
struct Image {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<std::uint8_t> data;

    Image() = default;
    Image(std::int64_t h, std::int64_t w) : height(h), width(w), data(static_cast<std::size_t>(h * w * 3), 0) {}

    std::uint8_t& at(std::int64_t y, std::int64_t x, std::int64_t c) {
        return data[static_cast<std::size_t>((y * width + x) * 3 + c)];
    }
    std::uint8_t at(std::int64_t y, std::int64_t x, std::int64_t c) const {
        return data[static_cast<std::size_t>((y * width + x) * 3 + c)];
    }
};

Image read_image_rgb(const std::string& path);
void write_image_rgb(const std::string& path, const Image& image);

}  // namespace onsetnet

#include "onsetnet/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace onsetnet {

Image read_image_rgb(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw DataError("image: cannot read " + path);
    }
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    Image out(rgb.rows, rgb.cols);
    for (int y = 0; y < rgb.rows; ++y) {
        const std::uint8_t* row = rgb.ptr<std::uint8_t>(y);
        std::copy(row, row + static_cast<std::size_t>(rgb.cols) * 3,
                  out.data.begin() + static_cast<std::size_t>(y) * rgb.cols * 3);
    }
    return out;
}

void write_image_rgb(const std::string& path, const Image& image) {
    if (image.height <= 0 || image.width <= 0 ||
        image.data.size() != static_cast<std::size_t>(image.height * image.width * 3)) {
        throw NumericError("image: malformed buffer for " + path);
    }
    cv::Mat rgb(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3,
                const_cast<std::uint8_t*>(image.data.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path, bgr)) {
        throw IoError("image: cannot write " + path);
    }
}

}  // namespace onsetnet

#include "demorph/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "demorph/error.hpp"

namespace demorph {

Image::Image(int height, int width, float fill)
    : height_(height), width_(width),
      data_(static_cast<std::size_t>(height) * width * kChannels, fill) {
  if (height <= 0 || width <= 0) {
    throw Error(ErrorCategory::structural, "image", "image dimensions must be positive");
  }
}

float Image::sample(float x, float y, int c) const {
  const float cx = std::clamp(x, 0.0f, static_cast<float>(width_ - 1));
  const float cy = std::clamp(y, 0.0f, static_cast<float>(height_ - 1));
  const int x0 = static_cast<int>(std::floor(cx));
  const int y0 = static_cast<int>(std::floor(cy));
  const int x1 = std::min(x0 + 1, width_ - 1);
  const int y1 = std::min(y0 + 1, height_ - 1);
  const float fx = cx - static_cast<float>(x0);
  const float fy = cy - static_cast<float>(y0);
  const float top = (1.0f - fx) * at(y0, x0, c) + fx * at(y0, x1, c);
  const float bottom = (1.0f - fx) * at(y1, x0, c) + fx * at(y1, x1, c);
  return (1.0f - fy) * top + fy * bottom;
}

void Image::clamp01() {
  for (float& v : data_) v = std::clamp(v, 0.0f, 1.0f);
}

float max_abs_difference(const Image& a, const Image& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCategory::structural, "image", "cannot compare images of different size");
  }
  float worst = 0.0f;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) worst = std::max(worst, std::abs(da[i] - db[i]));
  return worst;
}

Image read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw Error(ErrorCategory::io, "image", "cannot read image: " + path.string());
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Image out(rgb.rows, rgb.cols);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    for (int x = 0; x < rgb.cols; ++x) {
      for (int c = 0; c < Image::kChannels; ++c) {
        out.at(y, x, c) = static_cast<float>(row[x * 3 + c]) / 255.0f;
      }
    }
  }
  return out;
}

void write_image(const Image& image, const std::filesystem::path& path) {
  cv::Mat bgr(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < Image::kChannels; ++c) {
        const float v = std::clamp(image.at(y, x, c), 0.0f, 1.0f);
        row[x * 3 + (2 - c)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) {
    throw Error(ErrorCategory::io, "image", "cannot write image: " + path.string());
  }
}

Image quantize8(const Image& image) {
  Image out = image;
  for (float& v : out.data()) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

}  // namespace demorph

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace demorph {

/// H x W x 3 float image, interleaved RGB, values nominally in [0, 1].
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, float fill = 0.0f);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t size() const noexcept { return data_.size(); }

  float& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  float at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool same_shape(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  // Bilinear sample at continuous pixel coordinates; pixel (x, y) sits at
  // integer coordinates and lookups outside the image clamp to the edge.
  float sample(float x, float y, int c) const;

  void clamp01();

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

float max_abs_difference(const Image& a, const Image& b);

// 8-bit RGB round trip through a lossless raster format (PNG by extension).
Image read_image(const std::filesystem::path& path);
void write_image(const Image& image, const std::filesystem::path& path);

// Snap every value to the nearest 8-bit level, as a write/read would.
Image quantize8(const Image& image);

}  // namespace demorph

#pragma once
// Planar real-valued images and binary masks, with 8-bit PNG / PNM file I/O.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace handsyn {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// H×W×C image with values nominally in [0,1], stored channel-planar.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(std::size_t height, std::size_t width, std::size_t channels = 3, double fill = 0.0)
      : h_(height), w_(width), c_(channels), data_(height * width * channels, fill) {}

  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  std::size_t channels() const noexcept { return c_; }
  std::size_t pixels() const noexcept { return h_ * w_; }
  bool same_size(const ImageBuffer& o) const noexcept { return h_ == o.h_ && w_ == o.w_; }

  double& at(std::size_t ch, std::size_t r, std::size_t c) noexcept { return data_[(ch * h_ + r) * w_ + c]; }
  double at(std::size_t ch, std::size_t r, std::size_t c) const noexcept {
    return data_[(ch * h_ + r) * w_ + c];
  }
  std::span<double> plane(std::size_t ch) noexcept { return {data_.data() + ch * h_ * w_, h_ * w_}; }
  std::span<const double> plane(std::size_t ch) const noexcept {
    return {data_.data() + ch * h_ * w_, h_ * w_};
  }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t h_ = 0, w_ = 0, c_ = 0;
  std::vector<double> data_;
};

/// H×W binary mask; every value is 0 or 1.
class MaskBuffer {
 public:
  MaskBuffer() = default;
  MaskBuffer(std::size_t height, std::size_t width, std::uint8_t fill = 0);
  /// Throws ImageError if any value is not 0 or 1.
  MaskBuffer(std::size_t height, std::size_t width, std::vector<std::uint8_t> values);

  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  std::size_t pixels() const noexcept { return h_ * w_; }

  bool at(std::size_t r, std::size_t c) const noexcept { return data_[r * w_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) noexcept { data_[r * w_ + c] = v ? 1 : 0; }
  std::span<const std::uint8_t> values() const noexcept { return data_; }
  std::size_t count() const noexcept;

  friend bool operator==(const MaskBuffer&, const MaskBuffer&) = default;

 private:
  std::size_t h_ = 0, w_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Reads 8-bit PNG (gray, gray+alpha, RGB, RGBA) or binary PNM (P5/P6) as RGB in [0,1].
ImageBuffer read_image(const std::filesystem::path& path);
/// Writes an 8-bit RGB (3 channels) or grayscale (1 channel) file; format from the extension
/// (.png, .ppm, .pgm). Values are clipped to [0,1] and rounded to the nearest level.
void write_image(const ImageBuffer& image, const std::filesystem::path& path);

/// Reads an 8-bit grayscale (or RGB, via its first channel) file; > 127 is foreground.
MaskBuffer read_mask(const std::filesystem::path& path);
void write_mask(const MaskBuffer& mask, const std::filesystem::path& path);

/// Converts to the 8-bit level a written file would hold.
std::uint8_t to_byte(double v) noexcept;

}  // namespace handsyn

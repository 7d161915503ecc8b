#include "handsyn/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

namespace handsyn {

MaskBuffer::MaskBuffer(std::size_t height, std::size_t width, std::uint8_t fill)
    : h_(height), w_(width), data_(height * width, fill) {
  if (fill > 1) throw ImageError("MaskBuffer: fill value must be 0 or 1");
}

MaskBuffer::MaskBuffer(std::size_t height, std::size_t width, std::vector<std::uint8_t> values)
    : h_(height), w_(width), data_(std::move(values)) {
  if (data_.size() != h_ * w_)
    throw ImageError("MaskBuffer: " + std::to_string(data_.size()) + " values for " +
                     std::to_string(h_) + "x" + std::to_string(w_));
  for (std::size_t i = 0; i < data_.size(); ++i)
    if (data_[i] > 1)
      throw ImageError("MaskBuffer: non-binary value " + std::to_string(data_[i]) + " at index " +
                       std::to_string(i));
}

std::size_t MaskBuffer::count() const noexcept {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

std::uint8_t to_byte(double v) noexcept {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return e;
}

struct Raw8 {
  std::size_t h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> px;  // interleaved
};

Raw8 read_png(const std::filesystem::path& path, bool gray) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw ImageError(path.string() + ": " + img.message);
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Raw8 out;
  out.h = img.height;
  out.w = img.width;
  out.c = gray ? 1 : 3;
  out.px.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.px.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ImageError(path.string() + ": " + msg);
  }
  return out;
}

void write_png(const Raw8& raw, const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(raw.w);
  img.height = static_cast<png_uint_32>(raw.h);
  img.format = raw.c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, raw.px.data(), 0, nullptr))
    throw ImageError(path.string() + ": " + img.message);
}

std::size_t pnm_number(std::istream& in, const std::filesystem::path& path) {
  int ch;
  while ((ch = in.peek()) != EOF) {
    if (std::isspace(ch)) {
      in.get();
    } else if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      break;
    }
  }
  std::size_t v = 0;
  if (!(in >> v)) throw ImageError(path.string() + ": malformed PNM header");
  return v;
}

Raw8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw ImageError(path.string() + ": only binary PGM (P5) and PPM (P6) are supported");
  Raw8 out;
  out.c = magic[1] == '5' ? 1 : 3;
  out.w = pnm_number(in, path);
  out.h = pnm_number(in, path);
  const std::size_t maxval = pnm_number(in, path);
  if (maxval != 255) throw ImageError(path.string() + ": only 8-bit PNM (maxval 255) is supported");
  in.get();  // single whitespace before the raster
  out.px.resize(out.h * out.w * out.c);
  in.read(reinterpret_cast<char*>(out.px.data()), static_cast<std::streamsize>(out.px.size()));
  if (!in) throw ImageError(path.string() + ": truncated raster");
  return out;
}

void write_pnm(const Raw8& raw, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write " + path.string());
  out << (raw.c == 1 ? "P5" : "P6") << '\n' << raw.w << ' ' << raw.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(raw.px.data()), static_cast<std::streamsize>(raw.px.size()));
}

Raw8 read_raw(const std::filesystem::path& path, bool gray) {
  if (!std::filesystem::exists(path)) throw ImageError("missing image file " + path.string());
  const auto ext = lower_ext(path);
  if (ext == ".png") return read_png(path, gray);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
    Raw8 r = read_pnm(path);
    if (gray && r.c == 3) {
      Raw8 g{r.h, r.w, 1, std::vector<std::uint8_t>(r.h * r.w)};
      for (std::size_t i = 0; i < g.px.size(); ++i) g.px[i] = r.px[3 * i];
      return g;
    }
    return r;
  }
  throw ImageError(path.string() + ": unsupported image extension '" + ext + "'");
}

void write_raw(const Raw8& raw, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto ext = lower_ext(path);
  if (ext == ".png") return write_png(raw, path);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return write_pnm(raw, path);
  throw ImageError(path.string() + ": unsupported image extension '" + ext + "'");
}

}  // namespace

ImageBuffer read_image(const std::filesystem::path& path) {
  const Raw8 raw = read_raw(path, false);
  ImageBuffer img(raw.h, raw.w, 3);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const std::size_t src_ch = raw.c == 1 ? 0 : ch;
    auto plane = img.plane(ch);
    for (std::size_t i = 0; i < raw.h * raw.w; ++i)
      plane[i] = raw.px[i * raw.c + src_ch] / 255.0;
  }
  return img;
}

void write_image(const ImageBuffer& image, const std::filesystem::path& path) {
  if (image.channels() != 1 && image.channels() != 3)
    throw ImageError("write_image: only 1- or 3-channel images can be written");
  Raw8 raw{image.height(), image.width(), image.channels(), {}};
  raw.px.resize(image.pixels() * raw.c);
  for (std::size_t ch = 0; ch < raw.c; ++ch) {
    auto plane = image.plane(ch);
    for (std::size_t i = 0; i < image.pixels(); ++i) raw.px[i * raw.c + ch] = to_byte(plane[i]);
  }
  write_raw(raw, path);
}

MaskBuffer read_mask(const std::filesystem::path& path) {
  const Raw8 raw = read_raw(path, true);
  std::vector<std::uint8_t> v(raw.h * raw.w);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = raw.px[i] > 127 ? 1 : 0;
  return MaskBuffer(raw.h, raw.w, std::move(v));
}

void write_mask(const MaskBuffer& mask, const std::filesystem::path& path) {
  Raw8 raw{mask.height(), mask.width(), 1, {}};
  raw.px.resize(mask.pixels());
  for (std::size_t i = 0; i < raw.px.size(); ++i) raw.px[i] = mask.values()[i] ? 255 : 0;
  write_raw(raw, path);
}

}  // namespace handsyn

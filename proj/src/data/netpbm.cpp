#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "catcd/data.hpp"

namespace catcd::data {

namespace fs = std::filesystem;

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (++digits > 9) throw FormatError(std::string("netpbm: ") + what + " too large");
    }
    if (digits == 0) throw FormatError(std::string("netpbm: expected ") + what);
    return value;
  }

  // Exactly one whitespace byte separates the header from the payload.
  std::size_t payload_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError("netpbm: missing separator before pixel data");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;  // past the magic
};

}  // namespace

Image parse_netpbm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("netpbm: not a binary P5/P6 file");
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader r(bytes);
  const std::size_t w = r.number("width");
  const std::size_t h = r.number("height");
  const std::size_t maxval = r.number("maxval");
  if (w == 0 || h == 0) throw FormatError("netpbm: zero image dimension");
  if (maxval != 255) throw FormatError("netpbm: unsupported maxval " + std::to_string(maxval));
  const std::size_t offset = r.payload_offset();
  const std::size_t need = w * h * channels;
  if (bytes.size() - offset < need) {
    throw FormatError("netpbm: truncated payload, " + std::to_string(bytes.size() - offset) +
                      " of " + std::to_string(need) + " bytes");
  }
  Image img(w, h, channels);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(offset), need, img.pixels.begin());
  return img;
}

Image read_netpbm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_netpbm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_netpbm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("netpbm: images must have 1 or 3 channels");
  }
  const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(image.width) + " " + std::to_string(image.height) +
                             "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

void write_netpbm(const Image& image, const fs::path& path) {
  const auto bytes = encode_netpbm(image);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Tensor<float> image_to_tensor(const Image& image) {
  const std::size_t c = image.channels, h = image.height, w = image.width;
  Tensor<float> t(Shape{1, c, h, w});
  auto d = t.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < c; ++k) {
        d[(k * h + y) * w + x] = static_cast<float>(image.pixels[(y * w + x) * c + k]) / 255.0f;
      }
    }
  }
  return t;
}

template <typename T>
Image tensor_to_image(const Tensor<T>& map) {
  if (map.rank() != 4 || (map.dim(1) != 1 && map.dim(1) != 3)) {
    throw ShapeError("tensor_to_image: expected B x {1,3} x H x W, got " + map.shape().str());
  }
  const std::size_t c = map.dim(1), h = map.dim(2), w = map.dim(3);
  Image img(w, h, c);
  auto d = map.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < c; ++k) {
        const double v = std::clamp(static_cast<double>(d[(k * h + y) * w + x]), 0.0, 1.0);
        img.pixels[(y * w + x) * c + k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return img;
}

train::LabelMap image_to_label(const Image& image) {
  if (image.channels != 1) throw FormatError("label: expected a one-channel PGM");
  std::vector<std::uint8_t> v(image.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::uint8_t p = image.pixels[i];
    if (p != 0 && p != 255) {
      throw FormatError("label: pixel value " + std::to_string(p) + " is not 0 or 255");
    }
    v[i] = p == 255 ? 1 : 0;
  }
  return train::LabelMap(1, image.height, image.width, std::move(v));
}

Image label_to_image(const train::LabelMap& label, std::size_t b) {
  Image img(label.width(), label.height(), 1);
  for (std::size_t y = 0; y < label.height(); ++y) {
    for (std::size_t x = 0; x < label.width(); ++x) {
      img.pixels[y * label.width() + x] = label.at(b, y, x) ? 255 : 0;
    }
  }
  return img;
}

template Image tensor_to_image(const Tensor<float>&);
template Image tensor_to_image(const Tensor<double>&);

}  // namespace catcd::data

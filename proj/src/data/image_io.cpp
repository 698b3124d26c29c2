#include "scan/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "scan/error.hpp"

namespace scan {

std::uint8_t to_byte(real value) {
  if (!std::isfinite(value)) throw NumericError("cannot quantize a non-finite pixel value");
  const double scaled = std::round((static_cast<double>(value) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

real from_byte(std::uint8_t byte) { return static_cast<real>(byte / 127.5 - 1.0); }

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::vector<std::uint8_t>& bytes, const std::string& what) : bytes_(bytes), what_(what) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  int number(const char* field) {
    skip_space_and_comments();
    long value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (value > 1'000'000) throw ParseError(what_ + ": " + field + " is too large");
      ++digits;
    }
    if (digits == 0) throw ParseError(what_ + ": expected " + field + " in PPM header");
    return static_cast<int>(value);
  }

  void expect_magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || bytes_[1] != '6') throw ParseError(what_ + ": not a P6 PPM file");
    pos_ = 2;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void end_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw ParseError(what_ + ": malformed PPM header");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  const std::string& what_;
  std::size_t pos_ = 0;
};

}  // namespace

Tensor decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  HeaderReader r(bytes, what);
  r.expect_magic();
  const int w = r.number("width");
  const int h = r.number("height");
  const int maxval = r.number("maxval");
  if (w <= 0 || h <= 0) throw ParseError(what + ": empty image");
  if (maxval != 255) throw ParseError(what + ": maxval " + std::to_string(maxval) + " is not supported (need 255)");
  r.end_header();
  const std::size_t plane = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - r.pos() < plane * 3) throw ParseError(what + ": file is shorter than its " + std::to_string(w) + "x" + std::to_string(h) + " raster");
  Tensor out({1, 3, h, w});
  auto o = out.data_mut();
  const std::uint8_t* px = bytes.data() + r.pos();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) o[c * plane + i] = from_byte(px[i * 3 + c]);
  }
  return out;
}

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("write_image expects (1,3,H,W), got " + s.str());
  const std::string header = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const std::size_t plane = static_cast<std::size_t>(s.plane());
  const auto d = image.data();
  out.reserve(out.size() + plane * 3);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.push_back(to_byte(d[c * plane + i]));
  }
  return out;
}

Tensor read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes, path.string());
}

void write_image(const Tensor& image, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace scan

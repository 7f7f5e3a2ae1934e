#include "edgecap/edge/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "edgecap/error.hpp"

namespace edgecap::edge {

namespace {

struct Header {
  std::size_t width, height;
  std::size_t offset;  // first payload byte
};

Header parse_header(const std::string& b, const char* magic) {
  if (b.size() < 2 || b.compare(0, 2, magic) != 0) {
    throw ParseError(std::string("netpbm: expected magic ") + magic + " at byte offset 0");
  }
  std::size_t pos = 2;
  auto next_number = [&]() -> std::size_t {
    for (;;) {
      while (pos < b.size() && std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= b.size() || !std::isdigit(static_cast<unsigned char>(b[pos]))) {
      throw ParseError("netpbm: malformed header at byte offset " + std::to_string(pos));
    }
    std::size_t v = 0;
    while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) {
      v = v * 10 + static_cast<std::size_t>(b[pos] - '0');
      if (v > (1u << 20)) throw ParseError("netpbm: header value too large at byte offset " + std::to_string(pos));
      ++pos;
    }
    return v;
  };
  Header h{};
  h.width = next_number();
  h.height = next_number();
  const std::size_t maxval = next_number();
  if (h.width == 0 || h.height == 0) throw ParseError("netpbm image has zero size");
  if (maxval != 255) throw ParseError("netpbm: unsupported maxval " + std::to_string(maxval) + " (only 255)");
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos]))) {
    throw ParseError("netpbm: malformed header at byte offset " + std::to_string(pos));
  }
  h.offset = pos + 1;
  return h;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

RgbImage decode_ppm(const std::string& bytes) {
  const Header h = parse_header(bytes, "P6");
  const std::size_t n = h.width * h.height;
  if (bytes.size() - h.offset < 3 * n) throw ParseError("truncated PPM payload");
  RgbImage img(h.width, h.height);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      img.data[c * n + i] = static_cast<unsigned char>(bytes[h.offset + 3 * i + c]) / 255.0;
    }
  }
  return img;
}

std::string encode_ppm(const RgbImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  const std::size_t n = img.width * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(to_byte(img.data[c * n + i])));
  }
  return out;
}

GrayImage decode_pgm(const std::string& bytes) {
  const Header h = parse_header(bytes, "P5");
  const std::size_t n = h.width * h.height;
  if (bytes.size() - h.offset < n) throw ParseError("truncated PGM payload");
  GrayImage img(h.width, h.height);
  for (std::size_t i = 0; i < n; ++i) img.data[i] = static_cast<unsigned char>(bytes[h.offset + i]) / 255.0;
  return img;
}

std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  for (double v : img.data) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

RgbImage read_ppm(const std::filesystem::path& path) { return decode_ppm(slurp(path)); }
void write_ppm(const std::filesystem::path& path, const RgbImage& img) { spit(path, encode_ppm(img)); }
GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(slurp(path)); }
void write_pgm(const std::filesystem::path& path, const GrayImage& img) { spit(path, encode_pgm(img)); }

template <Real T>
Tensor<T> to_tensor(const RgbImage& img) {
  std::vector<T> v(img.data.begin(), img.data.end());
  return Tensor<T>(Shape{3, img.height, img.width}, std::move(v));
}

RgbImage from_tensor(const Tensor<double>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw DimensionError("from_tensor: expected [3 x H x W], got " + shape_str(t.shape()));
  RgbImage img(t.dim(2), t.dim(1));
  for (std::size_t i = 0; i < t.size(); ++i) img.data[i] = std::clamp(t[i], 0.0, 1.0);
  return img;
}

RgbImage side_by_side(const RgbImage& first, const std::vector<GrayImage>& rest) {
  constexpr std::size_t gutter = 2;
  std::size_t width = first.width, height = first.height;
  for (const auto& g : rest) {
    width += gutter + g.width;
    height = std::max(height, g.height);
  }
  RgbImage out(width, height, 1.0);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < first.height; ++y) {
      for (std::size_t x = 0; x < first.width; ++x) out.at(c, y, x) = first.at(c, y, x);
    }
  }
  std::size_t x0 = first.width;
  for (const auto& g : rest) {
    x0 += gutter;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < g.height; ++y) {
        for (std::size_t x = 0; x < g.width; ++x) out.at(c, y, x0 + x) = g.at(y, x);
      }
    }
    x0 += g.width;
  }
  return out;
}

template Tensor<float> to_tensor(const RgbImage&);
template Tensor<double> to_tensor(const RgbImage&);

}  // namespace edgecap::edge

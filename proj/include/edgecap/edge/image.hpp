#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "edgecap/tensor/tensor.hpp"

namespace edgecap::edge {

// Planar [3 x H x W] intensities in [0, 1].
struct RgbImage {
  std::size_t width = 0, height = 0;
  std::vector<double> data;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), data(3 * w * h, fill) {}
  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<double> data;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), data(w * h, fill) {}
  double& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

using EdgeMap = GrayImage;

// Binary netpbm. PPM is P6 and PGM is P5, both with maxval 255; header
// comments are accepted on read.
RgbImage decode_ppm(const std::string& bytes);
std::string encode_ppm(const RgbImage& img);
GrayImage decode_pgm(const std::string& bytes);
std::string encode_pgm(const GrayImage& img);

RgbImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RgbImage& img);
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

// Nearest 8-bit level, clamped.
std::uint8_t to_byte(double v);

// Image as a [3 x H x W] tensor and back (values clamped to [0, 1]).
template <Real T>
Tensor<T> to_tensor(const RgbImage& img);
RgbImage from_tensor(const Tensor<double>& t);

// Panels placed left to right with a 2-pixel white gutter; gray panels are
// shown as gray RGB.
RgbImage side_by_side(const RgbImage& first, const std::vector<GrayImage>& rest);

}  // namespace edgecap::edge

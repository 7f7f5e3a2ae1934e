#pragma once

#include <string>

#include "edgecap/edge/image.hpp"

namespace edgecap::edge {

enum class EdgeMethod { Canny, Sobel, Laplacian };

const char* method_name(EdgeMethod m);
// Throws ConfigError for anything but canny, sobel or laplacian.
EdgeMethod parse_method(const std::string& s);

struct EdgeConfig {
  EdgeMethod method = EdgeMethod::Canny;
  double gaussian_sigma = 1.4;
  // Fractions of the largest gradient magnitude.
  double canny_low = 0.1;
  double canny_high = 0.3;
  double log_sigma = 2.0;
  // Smallest jump |a - b| across a zero crossing of the Laplacian response.
  double log_threshold = 0.01;

  void validate() const;
};

GrayImage to_grayscale(const RgbImage& img);

// Separable Gaussian, radius ceil(3 sigma), reflect borders.
GrayImage gaussian_blur(const GrayImage& g, double sigma);

struct Gradients {
  GrayImage gx, gy;
};
// Raw 3x3 Sobel responses (reflect borders). gx is right minus left.
Gradients sobel_gradients(const GrayImage& g);

// sqrt(gx^2 + gy^2) divided by its maximum; all zeros when the maximum is 0.
EdgeMap sobel_magnitude(const GrayImage& g);

// Binary map: pixels >= high seed edges; pixels >= low survive when
// 8-connected to a seed through other such pixels.
EdgeMap hysteresis(const GrayImage& strength, double low, double high);

EdgeMap canny(const GrayImage& g, const EdgeConfig& cfg);

// 3x3 Laplacian [[0,1,0],[1,-4,1],[0,1,0]] of the input (reflect borders).
GrayImage laplacian(const GrayImage& g);
EdgeMap log_zero_crossings(const GrayImage& g, const EdgeConfig& cfg);

EdgeMap detect(const RgbImage& img, const EdgeConfig& cfg);

// [6 x H x W]: image channels, then the edge map three times.
template <Real T>
Tensor<T> fuse_six(const RgbImage& img, const EdgeMap& e);

}  // namespace edgecap::edge

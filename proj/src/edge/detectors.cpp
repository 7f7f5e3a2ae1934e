#include "edgecap/edge/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

#include "edgecap/error.hpp"

namespace edgecap::edge {

namespace {

// Mirror with the edge sample repeated: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
std::size_t reflect(long i, std::size_t n) {
  const long period = 2 * static_cast<long>(n);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - 1 - m);
}

void require_size(const GrayImage& g, const char* what) {
  if (g.width < 3 || g.height < 3) {
    throw DimensionError(std::string(what) + ": image must be at least 3x3, got " + std::to_string(g.width) + "x" +
                         std::to_string(g.height));
  }
}

// 3x3 neighbourhood with reflected borders; n[dy + 1][dx + 1].
struct Window {
  double n[3][3];
};

Window window(const GrayImage& g, std::size_t y, std::size_t x) {
  Window w{};
  for (int dy = -1; dy <= 1; ++dy) {
    const std::size_t yy = reflect(static_cast<long>(y) + dy, g.height);
    for (int dx = -1; dx <= 1; ++dx) w.n[dy + 1][dx + 1] = g.at(yy, reflect(static_cast<long>(x) + dx, g.width));
  }
  return w;
}

GrayImage magnitude(const Gradients& gr) {
  GrayImage m(gr.gx.width, gr.gx.height);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = std::hypot(gr.gx.data[i], gr.gy.data[i]);
  return m;
}

// Values below this are treated as exact zeros of the Laplacian response;
// a blurred linear ramp leaves roundoff of order 1e-16 there.
constexpr double kLaplacianZero = 1e-12;

}  // namespace

const char* method_name(EdgeMethod m) {
  switch (m) {
    case EdgeMethod::Canny: return "canny";
    case EdgeMethod::Sobel: return "sobel";
    case EdgeMethod::Laplacian: return "laplacian";
  }
  return "?";
}

EdgeMethod parse_method(const std::string& s) {
  for (EdgeMethod m : {EdgeMethod::Canny, EdgeMethod::Sobel, EdgeMethod::Laplacian}) {
    if (s == method_name(m)) return m;
  }
  throw ConfigError("unknown edge method '" + s + "' (expected canny, sobel or laplacian)");
}

void EdgeConfig::validate() const {
  if (!(gaussian_sigma > 0) || !(log_sigma > 0)) throw ConfigError("edge config: sigmas must be positive");
  if (!(canny_low >= 0 && canny_low < canny_high && canny_high <= 1)) {
    throw ConfigError("edge config: need 0 <= low < high <= 1");
  }
  if (!(log_threshold >= 0)) throw ConfigError("edge config: log_threshold must be nonnegative");
}

GrayImage to_grayscale(const RgbImage& img) {
  GrayImage g(img.width, img.height);
  const std::size_t n = img.width * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    g.data[i] = 0.299 * img.data[i] + 0.587 * img.data[n + i] + 0.114 * img.data[2 * n + i];
  }
  return g;
}

GrayImage gaussian_blur(const GrayImage& g, double sigma) {
  if (!(sigma > 0)) throw ConfigError("gaussian_blur: sigma must be positive");
  const long radius = static_cast<long>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (long i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-double(i * i) / (2 * sigma * sigma));
    total += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= total;

  GrayImage tmp(g.width, g.height), out(g.width, g.height);
  for (std::size_t y = 0; y < g.height; ++y) {
    for (std::size_t x = 0; x < g.width; ++x) {
      double acc = 0;
      for (long i = -radius; i <= radius; ++i) {
        acc += k[static_cast<std::size_t>(i + radius)] * g.at(y, reflect(static_cast<long>(x) + i, g.width));
      }
      tmp.at(y, x) = acc;
    }
  }
  for (std::size_t y = 0; y < g.height; ++y) {
    for (std::size_t x = 0; x < g.width; ++x) {
      double acc = 0;
      for (long i = -radius; i <= radius; ++i) {
        acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(reflect(static_cast<long>(y) + i, g.height), x);
      }
      out.at(y, x) = acc;
    }
  }
  return out;
}

Gradients sobel_gradients(const GrayImage& g) {
  require_size(g, "sobel");
  // Written as sums of differences so flat regions give exact zeros.
  Gradients r{GrayImage(g.width, g.height), GrayImage(g.width, g.height)};
  for (std::size_t y = 0; y < g.height; ++y) {
    for (std::size_t x = 0; x < g.width; ++x) {
      const auto& n = window(g, y, x).n;
      r.gx.at(y, x) = (n[0][2] - n[0][0]) + 2 * (n[1][2] - n[1][0]) + (n[2][2] - n[2][0]);
      r.gy.at(y, x) = (n[2][0] - n[0][0]) + 2 * (n[2][1] - n[0][1]) + (n[2][2] - n[0][2]);
    }
  }
  return r;
}

EdgeMap sobel_magnitude(const GrayImage& g) {
  GrayImage m = magnitude(sobel_gradients(g));
  const double peak = *std::max_element(m.data.begin(), m.data.end());
  if (peak == 0) return GrayImage(g.width, g.height);
  for (double& v : m.data) v /= peak;
  return m;
}

EdgeMap hysteresis(const GrayImage& strength, double low, double high) {
  const std::size_t w = strength.width, h = strength.height;
  EdgeMap out(w, h);
  std::deque<std::pair<std::size_t, std::size_t>> queue;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (strength.at(y, x) >= high && strength.at(y, x) > 0) {
        out.at(y, x) = 1;
        queue.emplace_back(y, x);
      }
    }
  }
  while (!queue.empty()) {
    const auto [y, x] = queue.front();
    queue.pop_front();
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
        if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
        const auto uy = static_cast<std::size_t>(ny), ux = static_cast<std::size_t>(nx);
        if (out.at(uy, ux) == 0 && strength.at(uy, ux) >= low && strength.at(uy, ux) > 0) {
          out.at(uy, ux) = 1;
          queue.emplace_back(uy, ux);
        }
      }
    }
  }
  return out;
}

EdgeMap canny(const GrayImage& g, const EdgeConfig& cfg) {
  cfg.validate();
  require_size(g, "canny");
  const Gradients gr = sobel_gradients(gaussian_blur(g, cfg.gaussian_sigma));
  const GrayImage m = magnitude(gr);
  const std::size_t w = g.width, h = g.height;
  const double peak = *std::max_element(m.data.begin(), m.data.end());
  if (peak == 0) return EdgeMap(w, h);

  auto mag = [&](long y, long x) {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return 0.0;
    return m.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  };
  GrayImage thin(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = m.at(y, x);
      if (v == 0) continue;
      double angle = std::atan2(gr.gy.at(y, x), gr.gx.at(y, x)) * 180.0 / std::numbers::pi;
      if (angle < 0) angle += 180.0;
      // Neighbour offset along the gradient; y grows downward.
      int dy = 0, dx = 1;
      if (angle >= 22.5 && angle < 67.5) dy = 1;
      else if (angle >= 67.5 && angle < 112.5) dy = 1, dx = 0;
      else if (angle >= 112.5 && angle < 157.5) dy = 1, dx = -1;
      const long ly = static_cast<long>(y), lx = static_cast<long>(x);
      // Ties on a plateau go to the pixel on the positive side, so a
      // symmetric ridge yields a single line.
      if (v >= mag(ly - dy, lx - dx) && v > mag(ly + dy, lx + dx)) thin.at(y, x) = v;
    }
  }
  return hysteresis(thin, cfg.canny_low * peak, cfg.canny_high * peak);
}

GrayImage laplacian(const GrayImage& g) {
  require_size(g, "laplacian");
  GrayImage out(g.width, g.height);
  for (std::size_t y = 0; y < g.height; ++y) {
    for (std::size_t x = 0; x < g.width; ++x) {
      const auto& n = window(g, y, x).n;
      const double c = n[1][1];
      out.at(y, x) = ((n[0][1] - c) + (n[2][1] - c)) + ((n[1][0] - c) + (n[1][2] - c));
    }
  }
  return out;
}

EdgeMap log_zero_crossings(const GrayImage& g, const EdgeConfig& cfg) {
  cfg.validate();
  require_size(g, "log");
  const GrayImage l = laplacian(gaussian_blur(g, cfg.log_sigma));
  const std::size_t w = g.width, h = g.height;
  EdgeMap out(w, h);
  static const int pairs[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (const auto& p : pairs) {
        const double a = l.at(reflect(static_cast<long>(y) - p[0], h), reflect(static_cast<long>(x) - p[1], w));
        const double b = l.at(reflect(static_cast<long>(y) + p[0], h), reflect(static_cast<long>(x) + p[1], w));
        const bool crossing = (a > kLaplacianZero && b < -kLaplacianZero) || (a < -kLaplacianZero && b > kLaplacianZero);
        if (crossing && std::abs(a - b) > cfg.log_threshold) {
          out.at(y, x) = 1;
          break;
        }
      }
    }
  }
  return out;
}

EdgeMap detect(const RgbImage& img, const EdgeConfig& cfg) {
  cfg.validate();
  const GrayImage g = to_grayscale(img);
  switch (cfg.method) {
    case EdgeMethod::Canny: return canny(g, cfg);
    case EdgeMethod::Sobel: return sobel_magnitude(g);
    case EdgeMethod::Laplacian: return log_zero_crossings(g, cfg);
  }
  throw ConfigError("unknown edge method");
}

template <Real T>
Tensor<T> fuse_six(const RgbImage& img, const EdgeMap& e) {
  if (img.width != e.width || img.height != e.height) {
    throw DimensionError("fuse_six: image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         " but edge map is " + std::to_string(e.width) + "x" + std::to_string(e.height));
  }
  const std::size_t n = img.width * img.height;
  Tensor<T> out(Shape{6, img.height, img.width});
  T* p = out.ptr();
  for (std::size_t i = 0; i < 3 * n; ++i) p[i] = static_cast<T>(img.data[i]);
  for (std::size_t c = 3; c < 6; ++c) {
    for (std::size_t i = 0; i < n; ++i) p[c * n + i] = static_cast<T>(e.data[i]);
  }
  return out;
}

template Tensor<float> fuse_six(const RgbImage&, const EdgeMap&);
template Tensor<double> fuse_six(const RgbImage&, const EdgeMap&);

}  // namespace edgecap::edge

#include <cmath>
#include <vector>

#include "bcr/errors.hpp"
#include "bcr/metrics.hpp"

namespace bcr::metrics {

double ssim(const ImageTensor& a, const ImageTensor& b, const SsimParams& p) {
  if (a.height() != b.height() || a.width() != b.width()) throw ShapeMismatch("ssim: image shapes differ");
  if (a.height() < p.window || a.width() < p.window) {
    throw TooSmallError("ssim: image smaller than the " + std::to_string(p.window) + "x" +
                        std::to_string(p.window) + " window");
  }
  std::vector<double> g(static_cast<std::size_t>(p.window));
  const double centre = (p.window - 1) / 2.0;
  double norm = 0.0;
  for (int i = 0; i < p.window; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-((i - centre) * (i - centre)) / (2.0 * p.sigma * p.sigma));
    norm += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= norm;

  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const int out_h = a.height() - p.window + 1;
  const int out_w = a.width() - p.window + 1;

  double total = 0.0;
  for (int c = 0; c < ImageTensor::kChannels; ++c) {
    double channel_sum = 0.0;
    for (int y0 = 0; y0 < out_h; ++y0) {
      for (int x0 = 0; x0 < out_w; ++x0) {
        double mu_a = 0.0, mu_b = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
        for (int dy = 0; dy < p.window; ++dy) {
          for (int dx = 0; dx < p.window; ++dx) {
            const double wgt = g[static_cast<std::size_t>(dy)] * g[static_cast<std::size_t>(dx)];
            const double va = a.at(c, y0 + dy, x0 + dx);
            const double vb = b.at(c, y0 + dy, x0 + dx);
            mu_a += wgt * va;
            mu_b += wgt * vb;
            saa += wgt * va * va;
            sbb += wgt * vb * vb;
            sab += wgt * va * vb;
          }
        }
        const double var_a = saa - mu_a * mu_a;
        const double var_b = sbb - mu_b * mu_b;
        const double cov = sab - mu_a * mu_b;
        channel_sum += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                       ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      }
    }
    total += channel_sum / (static_cast<double>(out_h) * out_w);
  }
  return total / ImageTensor::kChannels;
}

}  // namespace bcr::metrics

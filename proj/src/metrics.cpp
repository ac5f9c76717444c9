#include "evfuse/metrics.hpp"

#include <array>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace evfuse::metrics {

double mse(const ImageF& a, const ImageF& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
  if (a.size() == 0) throw std::invalid_argument("mse: empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow * kWindow> gaussian_window() {
  std::array<double, kWindow * kWindow> w{};
  const int r = kWindow / 2;
  double sum = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
      w[(dy + r) * kWindow + (dx + r)] = v;
      sum += v;
    }
  }
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace

double ssim(const ImageF& a, const ImageF& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  if (a.width() < kWindow || a.height() < kWindow) {
    throw std::invalid_argument("ssim: images smaller than the 11x11 window");
  }
  static const std::array<double, kWindow * kWindow> w = gaussian_window();
  const int r = kWindow / 2;

  double total = 0.0;
  std::size_t count = 0;
  for (int cy = r; cy < a.height() - r; ++cy) {
    for (int cx = r; cx < a.width() - r; ++cx) {
      double mu_a = 0.0, mu_b = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const double wv = w[(dy + r) * kWindow + (dx + r)];
          mu_a += wv * a(cx + dx, cy + dy);
          mu_b += wv * b(cx + dx, cy + dy);
        }
      }
      double var_a = 0.0, var_b = 0.0, cov = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const double wv = w[(dy + r) * kWindow + (dx + r)];
          const double da = a(cx + dx, cy + dy) - mu_a;
          const double db = b(cx + dx, cy + dy) - mu_b;
          var_a += wv * da * da;
          var_b += wv * db * db;
          cov += wv * da * db;
        }
      }
      const double num = (2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2);
      const double den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

void MetricReport::add(double frame_mse, double frame_ssim) {
  per_frame_mse.push_back(frame_mse);
  per_frame_ssim.push_back(frame_ssim);
  ++frame_count;
  double sum_mse = 0.0, sum_ssim = 0.0;
  for (int i = 0; i < frame_count; ++i) {
    sum_mse += per_frame_mse[i];
    sum_ssim += per_frame_ssim[i];
  }
  mean_mse = sum_mse / frame_count;
  mean_ssim = sum_ssim / frame_count;
}

void MetricReport::write_csv(std::ostream& os) const {
  os << "frame,mse,ssim\n";
  for (int i = 0; i < frame_count; ++i) {
    os << i << ',' << per_frame_mse[i] << ',' << per_frame_ssim[i] << '\n';
  }
  os << "mean over " << frame_count << " frames: mse=" << mean_mse << " ssim=" << mean_ssim
     << '\n';
}

ImageF log_to_intensity(const ImageF& log_image, double I_0) {
  ImageF out(log_image.width(), log_image.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::max(std::exp(log_image[i]) - I_0, 0.0);
  }
  return out;
}

}  // namespace evfuse::metrics

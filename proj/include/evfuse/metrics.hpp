#pragma once

#include <iosfwd>
#include <vector>

#include "evfuse/core.hpp"

namespace evfuse::metrics {

/// Mean of squared pixel differences. Throws on shape mismatch.
double mse(const ImageF& a, const ImageF& b);

/// Mean local SSIM with the original publication defaults: 11x11 Gaussian
/// window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1.0, averaged over
/// windows fully inside the image. Inputs are expected in [0,1].
double ssim(const ImageF& a, const ImageF& b);

struct MetricReport {
  std::vector<double> per_frame_mse;
  std::vector<double> per_frame_ssim;
  double mean_mse = 0.0;
  double mean_ssim = 0.0;
  int frame_count = 0;

  void add(double frame_mse, double frame_ssim);
  /// Comma-separated table (one row per frame) followed by a summary line.
  void write_csv(std::ostream& os) const;
};

/// Intensity mapping used when scoring log-domain reconstructions:
/// exp(L) - I_0, clipped to [0, inf).
ImageF log_to_intensity(const ImageF& log_image, double I_0 = kDefaultI0);

}  // namespace evfuse::metrics

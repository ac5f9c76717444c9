#include "evfuse/conv.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace evfuse {

Kernel::Kernel(std::vector<KernelTap> taps, std::string name)
    : taps_(std::move(taps)), name_(std::move(name)) {
  if (taps_.empty()) throw std::invalid_argument("Kernel: no taps");
  for (const KernelTap& t : taps_) {
    if (!std::isfinite(t.weight)) throw std::invalid_argument("Kernel: non-finite weight");
  }
}

Kernel Kernel::identity() { return Kernel({{0, 0, 1.0}}, "identity"); }

Kernel Kernel::sobel_x() {
  return Kernel({{-1, -1, -1.0}, {1, -1, 1.0},
                 {-1, 0, -2.0},  {1, 0, 2.0},
                 {-1, 1, -1.0},  {1, 1, 1.0}},
                "sobelx");
}

Kernel Kernel::sobel_y() {
  return Kernel({{-1, -1, -1.0}, {0, -1, -2.0}, {1, -1, -1.0},
                 {-1, 1, 1.0},   {0, 1, 2.0},   {1, 1, 1.0}},
                "sobely");
}

Kernel Kernel::laplacian() {
  return Kernel({{0, 0, -4.0}, {-1, 0, 1.0}, {1, 0, 1.0}, {0, -1, 1.0}, {0, 1, 1.0}},
                "laplacian");
}

Kernel Kernel::gaussian(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("Kernel::gaussian: sigma must be positive");
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<KernelTap> taps;
  taps.reserve(std::size_t(2 * r + 1) * (2 * r + 1));
  double sum = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      taps.push_back({dx, dy, w});
      sum += w;
    }
  }
  for (KernelTap& t : taps) t.weight /= sum;
  return Kernel(std::move(taps), "gaussian");
}

Kernel Kernel::custom(std::vector<KernelTap> taps, std::string name) {
  return Kernel(std::move(taps), std::move(name));
}

int Kernel::radius() const {
  int r = 0;
  for (const KernelTap& t : taps_) {
    r = std::max({r, std::abs(t.dx), std::abs(t.dy)});
  }
  return r;
}

ConvolvedEventBatch convolve_event(const Event& e, double c_effective, const Kernel& kernel,
                                   int width, int height) {
  ConvolvedEventBatch batch;
  batch.t = e.t;
  batch.entries.reserve(kernel.tap_count());
  const double jump = c_effective * e.polarity;
  for (const KernelTap& tap : kernel.taps()) {
    // Mirror of the correlation offsets so expansion commutes with
    // convolve_frame.
    const int x = e.x - tap.dx;
    const int y = e.y - tap.dy;
    if (x < 0 || x >= width || y < 0 || y >= height) continue;
    batch.entries.push_back(
        {static_cast<std::int16_t>(x), static_cast<std::int16_t>(y), jump * tap.weight});
  }
  return batch;
}

ImageF convolve_frame(const ImageF& image, const Kernel& kernel) {
  ImageF out(image.width(), image.height());
  const int w = image.width();
  const int h = image.height();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (const KernelTap& tap : kernel.taps()) {
        const int sx = std::clamp(x + tap.dx, 0, w - 1);
        const int sy = std::clamp(y + tap.dy, 0, h - 1);
        acc += tap.weight * image(sx, sy);
      }
      out(x, y) = acc;
    }
  }
  return out;
}

// ---- ConvolvedProvider -------------------------------------------------------

ConvolvedProvider::ConvolvedProvider(const ReferenceProvider& base, Kernel kernel, int width,
                                     int height, bool weight2_noise)
    : base_(&base),
      kernel_(std::move(kernel)),
      width_(width),
      height_(height),
      weight2_noise_(weight2_noise) {}

std::int64_t ConvolvedProvider::reference_start_micros() const {
  return base_->reference_start_micros();
}

double ConvolvedProvider::reference(int x, int y, std::int64_t t_micros, Limit side) const {
  double acc = 0.0;
  for (const KernelTap& tap : kernel_.taps()) {
    const int sx = std::clamp(x + tap.dx, 0, width_ - 1);
    const int sy = std::clamp(y + tap.dy, 0, height_ - 1);
    acc += tap.weight * base_->reference(sx, sy, t_micros, side);
  }
  return acc;
}

double ConvolvedProvider::covariance(int x, int y, std::int64_t t_micros) const {
  if (!weight2_noise_) return base_->covariance(x, y, t_micros);
  double acc = 0.0;
  for (const KernelTap& tap : kernel_.taps()) {
    const int sx = std::clamp(x + tap.dx, 0, width_ - 1);
    const int sy = std::clamp(y + tap.dy, 0, height_ - 1);
    acc += tap.weight * tap.weight * base_->covariance(sx, sy, t_micros);
  }
  return acc;
}

// ---- ConvolvedPipeline -------------------------------------------------------

ConvolvedPipeline::ConvolvedPipeline(int width, int height, Kernel kernel,
                                     const FilterParams& params, const EventNoiseParams& noise,
                                     const ReferenceProvider& base, bool weight2_noise)
    : kernel_(std::move(kernel)),
      base_(&base),
      provider_(base, kernel_, width, height, weight2_noise),
      source_tracker_(width, height, noise),
      filter_(width, height, params, noise, &provider_),
      weight2_noise_(weight2_noise),
      c_(params.c),
      scale_event_jumps_(params.scale_event_jumps) {}

void ConvolvedPipeline::apply_source_batch(std::span<const Event> batch) {
  for (const Event& e : batch) {
    if (e.polarity != 1 && e.polarity != -1) continue;
    if (e.x < 0 || e.x >= filter_.width() || e.y < 0 || e.y >= filter_.height()) continue;
    const double q_src = source_tracker_.on_event(e);
    double c_eff = c_;
    if (scale_event_jumps_) c_eff *= base_->ct_scale(e.x, e.y, e.t.micros);
    const double jump = c_eff * e.polarity;
    for (const KernelTap& tap : kernel_.taps()) {
      const int x = e.x - tap.dx;
      const int y = e.y - tap.dy;
      if (x < 0 || x >= filter_.width() || y < 0 || y >= filter_.height()) continue;
      const double q = weight2_noise_ ? q_src * (tap.weight * tap.weight) : q_src;
      filter_.apply_impulse(x, y, e.t.micros, jump * tap.weight, q);
    }
  }
  source_tracker_.flush_batch();
}

void ConvolvedPipeline::process_item(const TimelineItem& item, std::span<const Event> events,
                                     std::span<const Frame> frames) {
  if (item.kind == TimelineKind::FrameBoundary) {
    (void)frames;
    filter_.advance_all(item.t.micros);
  } else {
    apply_source_batch(events.subspan(item.first, item.count));
  }
}

void ConvolvedPipeline::process(const Timeline& timeline, std::span<const Event> events,
                                std::span<const Frame> frames) {
  for (const TimelineItem& item : timeline) {
    process_item(item, events, frames);
  }
}

// ---- Gradient color encoding ---------------------------------------------------

namespace {

Rgb8 hsv_to_rgb8(double hue_deg, double sat, double val) {
  const double c = val * sat;
  const double hp = hue_deg / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0.0, g = 0.0, b = 0.0;
  if (hp < 1.0) {
    r = c; g = x;
  } else if (hp < 2.0) {
    r = x; g = c;
  } else if (hp < 3.0) {
    g = c; b = x;
  } else if (hp < 4.0) {
    g = x; b = c;
  } else if (hp < 5.0) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const double m = val - c;
  const auto to8 = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  return {to8(r + m), to8(g + m), to8(b + m)};
}

}  // namespace

Image<Rgb8> gradient_color_encode(const ImageF& gx, const ImageF& gy) {
  if (!gx.same_shape(gy)) throw std::invalid_argument("gradient_color_encode: shape mismatch");
  std::vector<double> mags(gx.size());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    mags[i] = std::hypot(gx[i], gy[i]);
  }
  std::vector<double> sorted = mags;
  const std::size_t q = sorted.empty() ? 0 : (sorted.size() - 1) * 99 / 100;
  if (!sorted.empty()) std::nth_element(sorted.begin(), sorted.begin() + q, sorted.end());
  const double norm = sorted.empty() || sorted[q] <= 0.0 ? 1.0 : sorted[q];

  Image<Rgb8> out(gx.width(), gx.height());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const double mag = std::min(mags[i] / norm, 1.0);
    if (mag == 0.0) {
      out[i] = hsv_to_rgb8(0.0, 0.0, 0.0);
      continue;
    }
    double hue = std::atan2(gy[i], gx[i]) * 180.0 / std::numbers::pi;
    if (hue < 0.0) hue += 360.0;
    if (hue >= 360.0) hue = 0.0;
    out[i] = hsv_to_rgb8(hue, mag, mag);
  }
  return out;
}

}  // namespace evfuse

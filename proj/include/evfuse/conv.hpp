#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evfuse/core.hpp"
#include "evfuse/filters.hpp"

namespace evfuse {

struct KernelTap {
  int dx = 0;
  int dy = 0;
  double weight = 0.0;
};

/// Small dense spatial mask with finite support. Taps are applied in
/// correlation orientation: convolving an image evaluates
/// out(x,y) = sum_taps w * in(x+dx, y+dy); the matching event expansion
/// mirrors the offsets so that expanding events and convolving images
/// commute.
class Kernel {
 public:
  static Kernel identity();
  static Kernel sobel_x();
  static Kernel sobel_y();
  static Kernel laplacian();
  /// Unit-sum Gaussian truncated at radius ceil(3 sigma).
  static Kernel gaussian(double sigma);
  static Kernel custom(std::vector<KernelTap> taps, std::string name = "custom");

  const std::vector<KernelTap>& taps() const { return taps_; }
  const std::string& name() const { return name_; }
  int radius() const;
  std::size_t tap_count() const { return taps_.size(); }

 private:
  Kernel(std::vector<KernelTap> taps, std::string name);

  std::vector<KernelTap> taps_;
  std::string name_;
};

struct ConvolvedEntry {
  std::int16_t x = 0;
  std::int16_t y = 0;
  double magnitude = 0.0;  // log-intensity impulse: c_effective * polarity * weight
};

/// A single source event expanded through a kernel: spatially separate
/// impulses sharing the source timestamp.
struct ConvolvedEventBatch {
  Timestamp t;
  std::vector<ConvolvedEntry> entries;
};

/// Expand one event; taps landing outside the image are dropped.
ConvolvedEventBatch convolve_event(const Event& e, double c_effective, const Kernel& kernel,
                                   int width, int height);

/// Spatial convolution with replicate boundary handling.
ImageF convolve_frame(const ImageF& image, const Kernel& kernel);

/// Reference provider for a convolved pipeline: kernel-weighted combination
/// of the base reference (replicate boundary), covariance propagated with
/// squared weights under an independence assumption (or passed through
/// unchanged when weight2_noise is off).
class ConvolvedProvider final : public ReferenceProvider {
 public:
  ConvolvedProvider(const ReferenceProvider& base, Kernel kernel, int width, int height,
                    bool weight2_noise = true);

  double reference(int x, int y, std::int64_t t_micros, Limit side) const override;
  double covariance(int x, int y, std::int64_t t_micros) const override;
  std::int64_t reference_start_micros() const override;

 private:
  const ReferenceProvider* base_;
  Kernel kernel_;
  int width_;
  int height_;
  bool weight2_noise_;
};

/// One kernel's filter pipeline: an independent state fed by convolved events
/// and convolved frame references. Queryable like any filter state.
class ConvolvedPipeline {
 public:
  ConvolvedPipeline(int width, int height, Kernel kernel, const FilterParams& params,
                    const EventNoiseParams& noise, const ReferenceProvider& base,
                    bool weight2_noise = true);

  void process(const Timeline& timeline, std::span<const Event> events,
               std::span<const Frame> frames);
  void process_item(const TimelineItem& item, std::span<const Event> events,
                    std::span<const Frame> frames);

  ImageF query(std::int64_t t_micros) const { return filter_.query(t_micros); }
  const FilterImage& filter() const { return filter_; }
  const Kernel& kernel() const { return kernel_; }

 private:
  void apply_source_batch(std::span<const Event> batch);

  Kernel kernel_;
  const ReferenceProvider* base_;
  ConvolvedProvider provider_;
  EventNoiseTracker source_tracker_;
  FilterImage filter_;
  bool weight2_noise_;
  double c_;
  bool scale_event_jumps_;
};

struct Rgb8 {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
};

/// Color-wheel encoding of a gradient field: hue from atan2(gy, gx),
/// saturation and value from the magnitude normalized by its 99th percentile.
Image<Rgb8> gradient_color_encode(const ImageF& gx, const ImageF& gy);

}  // namespace evfuse

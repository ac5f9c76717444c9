#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "evfuse/core.hpp"
#include "evfuse/filters.hpp"
#include "evfuse/noise.hpp"

namespace evfuse {

struct AugmentParams {
  enum class Mode { Full, Zoh } mode = Mode::Full;
  double ct_clamp_lo = 0.1;
  double ct_clamp_hi = 10.0;
  // Minimum |integral| for calibration; negative means "one nominal event"
  // (the contrast threshold itself).
  double min_abs_integral = -1.0;
  // Restore the paper's printed blend, which hands full weight to the far
  // anchor at each window end.
  bool literal_blend_orientation = false;
};

/// Per-pixel prefix sums of signed event polarities over the whole stream.
/// sum_between(a, b] and one-sided cumulative lookups back every event-driven
/// integral in this module.
class EventIntegralField {
 public:
  EventIntegralField(int width, int height, std::span<const Event> events);

  int width() const { return width_; }
  int height() const { return height_; }

  /// Sum of polarities of events at (x,y) with t_j <= t (Limit::Right) or
  /// t_j < t (Limit::Left).
  double cumulative(int x, int y, std::int64_t t_micros, Limit side) const;
  /// Signed sum over (a, b]; negative when b < a (then it is -sum over (b, a]).
  double sum_between(int x, int y, std::int64_t a_micros, std::int64_t b_micros) const;
  /// Number of events in (a, b].
  int count_between(int x, int y, std::int64_t a_micros, std::int64_t b_micros) const;

  std::span<const std::int64_t> times(int x, int y) const;
  std::span<const double> prefix(int x, int y) const;  // prefix[i] = sum of first i+1

 private:
  int width_;
  int height_;
  std::vector<std::vector<std::int64_t>> times_;
  std::vector<std::vector<double>> prefix_;
};

/// EDI deblur of one exposure-blurred frame, given its linear-intensity image
/// B and the events inside the exposure window. Returns the sharp log image
/// at the exposure midpoint. The time integral is taken exactly on the
/// piecewise-constant event staircase. T = 0 degenerates to log(B + I_0).
ImageF edi_deblur(const ImageF& blurred_intensity, Timestamp t_mid, double exposure_s,
                  std::span<const Event> events_in_exposure, double c, double I_0 = kDefaultI0);

/// Reference inside the exposure window [tau - T/2, tau + T/2): the deblurred
/// midpoint image shifted by the signed event integral between tau and t.
ImageF intra_exposure(const ImageF& L_D_mid, Timestamp tau, double exposure_s,
                      const EventIntegralField& field, std::int64_t t_micros, double c);

/// Forward interpolation from the end-of-exposure anchor over (w0, t].
ImageF forward_interp(const ImageF& L_D_end, std::int64_t window_begin_micros,
                      const EventIntegralField& field, std::int64_t t_micros, double c,
                      const ImageF& ct_scale);

/// Backward interpolation from the next frame's start-of-exposure anchor,
/// subtracting the integral over (t, w1].
ImageF backward_interp(const ImageF& L_D_next_begin, std::int64_t window_end_micros,
                       const EventIntegralField& field, std::int64_t t_micros, double c,
                       const ImageF& ct_scale);

/// Per-pixel contrast-threshold scaling between two deblurred anchors:
/// delta L / integral when the integral is large enough and the signs agree,
/// 1.0 otherwise; clamped to the configured range.
ImageF calibrate_ct(const ImageF& L_D_end, const ImageF& L_D_next_begin,
                    const EventIntegralField& field, std::int64_t window_begin_micros,
                    std::int64_t window_end_micros, double c, const AugmentParams& params);

/// Convex combination of the forward and backward interpolations. With the
/// default orientation the anchor nearer to t dominates (w = 0 at the window
/// start selects the forward image).
ImageF blend(const ImageF& L_fwd, const ImageF& L_bwd, std::int64_t t_micros,
             std::int64_t window_begin_micros, std::int64_t window_end_micros,
             bool literal_orientation = false);

/// Median per-pixel contrast threshold over all consecutive frame pairs,
/// using only pixels whose responses at both frames avoid the extremes.
/// Throws when no pixel qualifies.
double global_ct_estimate(std::span<const Frame> frames, std::span<const Event> events,
                          const CrfModel& crf, double I_0 = kDefaultI0, double band_lo = 0.05,
                          double band_hi = 0.95);

/// Log image of the latest frame at or before t (zero-order hold). Throws if
/// t precedes the first frame.
ImageF zoh_reference(std::span<const Frame> frames, const CrfModel& crf, std::int64_t t_micros,
                     double I_0 = kDefaultI0);

/// Full frame augmentation: per-frame deblurred anchors, per-pair contrast
/// scaling, intra/inter-frame interpolation, and interpolated covariance.
/// Past the last exposure the last anchor is held (ZOH fallback).
class AugmentedProvider final : public ReferenceProvider {
 public:
  AugmentedProvider(std::span<const Frame> frames, std::span<const Event> events,
                    const CrfModel& crf, double c, const AugmentParams& params,
                    double I_0 = kDefaultI0);

  double reference(int x, int y, std::int64_t t_micros, Limit side) const override;
  double covariance(int x, int y, std::int64_t t_micros) const override;
  double ct_scale(int x, int y, std::int64_t t_micros) const override;
  std::int64_t reference_start_micros() const override;

  const EventIntegralField& field() const { return field_; }
  const ImageF& deblurred_mid(int k) const { return frames_[k].L_D_mid; }
  const ImageF& ct_scale_image(int k) const { return frames_[k].scale; }

 private:
  struct FrameAug {
    std::int64_t tau;      // micros
    std::int64_t half_T;   // micros
    ImageF L_D_mid;        // deblurred log image at tau
    ImageF L_D_end;        // extension to tau + T/2
    ImageF L_D_begin;      // extension to tau - T/2
    ImageF scale;          // ct scaling toward the NEXT frame (last frame: ones)
    ImageF R;              // log-domain frame covariance
  };

  int span_index(std::int64_t t_micros) const;

  int width_;
  int height_;
  double c_;
  AugmentParams params_;
  EventIntegralField field_;
  std::vector<FrameAug> frames_;
};

/// Zero-order-hold reference: raw log-intensity frames held until the next
/// frame; covariance still interpolated between frames.
class ZohProvider final : public ReferenceProvider {
 public:
  ZohProvider(std::span<const Frame> frames, const CrfModel& crf, double I_0 = kDefaultI0);

  double reference(int x, int y, std::int64_t t_micros, Limit side) const override;
  double covariance(int x, int y, std::int64_t t_micros) const override;
  std::int64_t reference_start_micros() const override;

 private:
  struct LogFrame {
    std::int64_t tau;
    ImageF L;
    ImageF R;
  };
  std::vector<LogFrame> frames_;
};

/// Build the provider matching params.mode (Full -> AugmentedProvider,
/// Zoh -> ZohProvider).
std::unique_ptr<ReferenceProvider> make_reference_provider(
    std::span<const Frame> frames, std::span<const Event> events, const CrfModel& crf,
    double c, const AugmentParams& params, double I_0 = kDefaultI0);

}  // namespace evfuse

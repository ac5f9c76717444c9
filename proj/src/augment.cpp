#include "evfuse/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace evfuse {

// ---- EventIntegralField ----------------------------------------------------

EventIntegralField::EventIntegralField(int width, int height, std::span<const Event> events)
    : width_(width),
      height_(height),
      times_(std::size_t(width) * height),
      prefix_(std::size_t(width) * height) {
  std::vector<std::uint32_t> counts(times_.size(), 0);
  for (const Event& e : events) {
    if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height) continue;
    ++counts[std::size_t(e.y) * width + e.x];
  }
  for (std::size_t i = 0; i < times_.size(); ++i) {
    times_[i].reserve(counts[i]);
    prefix_[i].reserve(counts[i]);
  }
  for (const Event& e : events) {
    if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height) continue;
    const std::size_t i = std::size_t(e.y) * width + e.x;
    if (!times_[i].empty() && e.t.micros < times_[i].back()) {
      throw std::invalid_argument("EventIntegralField: events must be time-ordered");
    }
    const double prev = prefix_[i].empty() ? 0.0 : prefix_[i].back();
    times_[i].push_back(e.t.micros);
    prefix_[i].push_back(prev + e.polarity);
  }
}

double EventIntegralField::cumulative(int x, int y, std::int64_t t_micros, Limit side) const {
  const std::size_t i = std::size_t(y) * width_ + x;
  const auto& ts = times_[i];
  const auto it = side == Limit::Right ? std::upper_bound(ts.begin(), ts.end(), t_micros)
                                       : std::lower_bound(ts.begin(), ts.end(), t_micros);
  const std::size_t n = static_cast<std::size_t>(it - ts.begin());
  return n == 0 ? 0.0 : prefix_[i][n - 1];
}

double EventIntegralField::sum_between(int x, int y, std::int64_t a_micros,
                                       std::int64_t b_micros) const {
  return cumulative(x, y, b_micros, Limit::Right) - cumulative(x, y, a_micros, Limit::Right);
}

int EventIntegralField::count_between(int x, int y, std::int64_t a_micros,
                                      std::int64_t b_micros) const {
  const std::size_t i = std::size_t(y) * width_ + x;
  const auto& ts = times_[i];
  return static_cast<int>(std::upper_bound(ts.begin(), ts.end(), b_micros) -
                          std::upper_bound(ts.begin(), ts.end(), a_micros));
}

std::span<const std::int64_t> EventIntegralField::times(int x, int y) const {
  return times_[std::size_t(y) * width_ + x];
}

std::span<const double> EventIntegralField::prefix(int x, int y) const {
  return prefix_[std::size_t(y) * width_ + x];
}

// ---- Deblur ----------------------------------------------------------------

ImageF edi_deblur(const ImageF& blurred_intensity, Timestamp t_mid, double exposure_s,
                  std::span<const Event> events_in_exposure, double c, double I_0) {
  const int w = blurred_intensity.width();
  const int h = blurred_intensity.height();
  ImageF out(w, h);

  const std::int64_t half_us =
      static_cast<std::int64_t>(std::llround(exposure_s * kMicrosPerSecond * 0.5));
  if (half_us <= 0) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::log(blurred_intensity[i] + I_0);
    }
    return out;
  }
  const std::int64_t w0 = t_mid.micros - half_us;
  const std::int64_t w1 = t_mid.micros + half_us;
  const double T = seconds_between(w0, w1);

  // Per-pixel event lists inside the window, in time order.
  std::vector<std::vector<std::pair<std::int64_t, int>>> per_pixel(std::size_t(w) * h);
  for (const Event& e : events_in_exposure) {
    if (e.t.micros < w0 || e.t.micros > w1) {
      throw std::invalid_argument("edi_deblur: event outside the exposure window");
    }
    if (!blurred_intensity.in_bounds(e.x, e.y)) continue;
    per_pixel[std::size_t(e.y) * w + e.x].emplace_back(e.t.micros, e.polarity);
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto& evs = per_pixel[std::size_t(y) * w + x];
      // Signed count relative to the midpoint: E(tau -> t) on each segment of
      // the staircase. prefix_at_mid = events with t_j <= tau.
      double prefix_at_mid = 0.0;
      for (const auto& [t, s] : evs) {
        if (t <= t_mid.micros) prefix_at_mid += s;
      }
      double integral = 0.0;
      double prefix = 0.0;
      std::int64_t seg_start = w0;
      for (const auto& [t, s] : evs) {
        if (t > seg_start) {
          integral += std::exp(c * (prefix - prefix_at_mid)) * seconds_between(seg_start, t);
          seg_start = t;
        }
        prefix += s;
      }
      if (w1 > seg_start) {
        integral += std::exp(c * (prefix - prefix_at_mid)) * seconds_between(seg_start, w1);
      }
      out(x, y) = std::log(blurred_intensity(x, y) + I_0) - std::log(integral / T);
    }
  }
  return out;
}

// ---- Interpolation ops -----------------------------------------------------

ImageF intra_exposure(const ImageF& L_D_mid, Timestamp tau, double exposure_s,
                      const EventIntegralField& field, std::int64_t t_micros, double c) {
  const std::int64_t half_us =
      static_cast<std::int64_t>(std::llround(exposure_s * kMicrosPerSecond * 0.5));
  if (t_micros < tau.micros - half_us || t_micros >= tau.micros + half_us) {
    throw std::invalid_argument("intra_exposure: t outside the exposure window");
  }
  ImageF out(L_D_mid.width(), L_D_mid.height());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      out(x, y) = L_D_mid(x, y) + c * field.sum_between(x, y, tau.micros, t_micros);
    }
  }
  return out;
}

ImageF forward_interp(const ImageF& L_D_end, std::int64_t window_begin_micros,
                      const EventIntegralField& field, std::int64_t t_micros, double c,
                      const ImageF& ct_scale) {
  if (t_micros < window_begin_micros) {
    throw std::invalid_argument("forward_interp: t before the window start");
  }
  ImageF out(L_D_end.width(), L_D_end.height());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      out(x, y) = L_D_end(x, y) +
                  c * ct_scale(x, y) * field.sum_between(x, y, window_begin_micros, t_micros);
    }
  }
  return out;
}

ImageF backward_interp(const ImageF& L_D_next_begin, std::int64_t window_end_micros,
                       const EventIntegralField& field, std::int64_t t_micros, double c,
                       const ImageF& ct_scale) {
  if (t_micros > window_end_micros) {
    throw std::invalid_argument("backward_interp: t after the window end");
  }
  ImageF out(L_D_next_begin.width(), L_D_next_begin.height());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      out(x, y) = L_D_next_begin(x, y) -
                  c * ct_scale(x, y) * field.sum_between(x, y, t_micros, window_end_micros);
    }
  }
  return out;
}

ImageF calibrate_ct(const ImageF& L_D_end, const ImageF& L_D_next_begin,
                    const EventIntegralField& field, std::int64_t window_begin_micros,
                    std::int64_t window_end_micros, double c, const AugmentParams& params) {
  const double min_abs = params.min_abs_integral < 0.0 ? c : params.min_abs_integral;
  ImageF out(L_D_end.width(), L_D_end.height(), 1.0);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      const double integral =
          c * field.sum_between(x, y, window_begin_micros, window_end_micros);
      const double delta = L_D_next_begin(x, y) - L_D_end(x, y);
      if (std::abs(integral) < min_abs) continue;
      if (delta * integral <= 0.0) continue;  // sign mismatch or flat
      out(x, y) = std::clamp(delta / integral, params.ct_clamp_lo, params.ct_clamp_hi);
    }
  }
  return out;
}

ImageF blend(const ImageF& L_fwd, const ImageF& L_bwd, std::int64_t t_micros,
             std::int64_t window_begin_micros, std::int64_t window_end_micros,
             bool literal_orientation) {
  if (!L_fwd.same_shape(L_bwd)) throw std::invalid_argument("blend: shape mismatch");
  const double span = seconds_between(window_begin_micros, window_end_micros);
  double w = span > 0.0 ? seconds_between(window_begin_micros, t_micros) / span : 0.0;
  w = std::clamp(w, 0.0, 1.0);
  // Default: near anchor dominates (w = 0 -> forward image). The literal
  // printed form weights the far anchor instead.
  const double w_fwd = literal_orientation ? w : 1.0 - w;
  ImageF out(L_fwd.width(), L_fwd.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = w_fwd * L_fwd[i] + (1.0 - w_fwd) * L_bwd[i];
  }
  return out;
}

// ---- Global contrast threshold ----------------------------------------------

double global_ct_estimate(std::span<const Frame> frames, std::span<const Event> events,
                          const CrfModel& crf, double I_0, double band_lo, double band_hi) {
  if (frames.size() < 2) {
    throw std::invalid_argument("global_ct_estimate: need at least one frame pair");
  }
  const int w = frames[0].response.width();
  const int h = frames[0].response.height();
  EventIntegralField field(w, h, events);

  std::vector<double> raw;
  for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
    const Frame& a = frames[k];
    const Frame& b = frames[k + 1];
    const std::int64_t wa = a.exposure_end_micros();
    const std::int64_t wb = b.exposure_begin_micros();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double ra = a.response(x, y);
        const double rb = b.response(x, y);
        if (ra < band_lo || ra > band_hi || rb < band_lo || rb > band_hi) continue;
        const double n = field.sum_between(x, y, wa, wb);
        if (n == 0.0) continue;
        const double delta = std::log(crf.inverse(rb) + I_0) - std::log(crf.inverse(ra) + I_0);
        raw.push_back(delta / n);
      }
    }
  }
  if (raw.empty()) {
    throw std::runtime_error("global_ct_estimate: no qualifying pixels");
  }
  const std::size_t mid = raw.size() / 2;
  std::nth_element(raw.begin(), raw.begin() + mid, raw.end());
  return raw[mid];
}

// ---- Zero-order hold ---------------------------------------------------------

ImageF zoh_reference(std::span<const Frame> frames, const CrfModel& crf, std::int64_t t_micros,
                     double I_0) {
  const Frame* latest = nullptr;
  for (const Frame& f : frames) {
    if (f.t_mid.micros <= t_micros) latest = &f;
  }
  if (latest == nullptr) {
    throw std::invalid_argument("zoh_reference: t precedes the first frame");
  }
  ImageF out(latest->response.width(), latest->response.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::log(crf.inverse(latest->response[i]) + I_0);
  }
  return out;
}

// ---- AugmentedProvider -------------------------------------------------------

namespace {

std::span<const Event> slice_events(std::span<const Event> events, std::int64_t a,
                                    std::int64_t b) {
  const auto lo = std::lower_bound(events.begin(), events.end(), a,
                                   [](const Event& e, std::int64_t t) { return e.t.micros < t; });
  const auto hi = std::upper_bound(events.begin(), events.end(), b,
                                   [](std::int64_t t, const Event& e) { return t < e.t.micros; });
  return events.subspan(static_cast<std::size_t>(lo - events.begin()),
                        static_cast<std::size_t>(hi - lo));
}

}  // namespace

AugmentedProvider::AugmentedProvider(std::span<const Frame> frames,
                                     std::span<const Event> events, const CrfModel& crf,
                                     double c, const AugmentParams& params, double I_0)
    : width_(frames.empty() ? 0 : frames[0].response.width()),
      height_(frames.empty() ? 0 : frames[0].response.height()),
      c_(c),
      params_(params),
      field_(width_, height_, events) {
  if (frames.empty()) {
    throw std::invalid_argument("AugmentedProvider: need at least one frame");
  }

  frames_.reserve(frames.size());
  for (const Frame& f : frames) {
    FrameAug aug;
    aug.tau = f.t_mid.micros;
    aug.half_T = f.half_exposure_micros();

    ImageF intensity(width_, height_);
    for (std::size_t i = 0; i < intensity.size(); ++i) {
      intensity[i] = crf.inverse(f.response[i]);
    }
    aug.L_D_mid = edi_deblur(intensity, f.t_mid, f.exposure,
                             slice_events(events, aug.tau - aug.half_T, aug.tau + aug.half_T),
                             c, I_0);

    aug.L_D_end = ImageF(width_, height_);
    aug.L_D_begin = ImageF(width_, height_);
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        aug.L_D_end(x, y) =
            aug.L_D_mid(x, y) + c * field_.sum_between(x, y, aug.tau, aug.tau + aug.half_T);
        aug.L_D_begin(x, y) =
            aug.L_D_mid(x, y) - c * field_.sum_between(x, y, aug.tau - aug.half_T, aug.tau);
      }
    }
    aug.scale = ImageF(width_, height_, 1.0);
    aug.R = frame_covariance(f, crf, I_0).R;
    frames_.push_back(std::move(aug));
  }

  // Contrast-threshold calibration once per frame pair.
  for (std::size_t k = 0; k + 1 < frames_.size(); ++k) {
    const std::int64_t w0 = frames_[k].tau + frames_[k].half_T;
    const std::int64_t w1 = frames_[k + 1].tau - frames_[k + 1].half_T;
    if (w1 <= w0) continue;  // overlapping exposures: leave scale at 1
    frames_[k].scale = calibrate_ct(frames_[k].L_D_end, frames_[k + 1].L_D_begin, field_, w0,
                                    w1, c_, params_);
  }
}

std::int64_t AugmentedProvider::reference_start_micros() const {
  return frames_.front().tau - frames_.front().half_T;
}

int AugmentedProvider::span_index(std::int64_t t_micros) const {
  // Last frame k whose span start (tau_k - T_k/2) is <= t.
  int lo = 0;
  int hi = static_cast<int>(frames_.size()) - 1;
  while (lo < hi) {
    const int mid = (lo + hi + 1) / 2;
    if (frames_[mid].tau - frames_[mid].half_T <= t_micros) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return lo;
}

double AugmentedProvider::reference(int x, int y, std::int64_t t_micros, Limit side) const {
  const int k = span_index(t_micros);
  const FrameAug& f = frames_[k];

  const auto cum = [&](std::int64_t t, Limit s) { return field_.cumulative(x, y, t, s); };
  const double cum_t = cum(t_micros, side);

  if (t_micros < f.tau + f.half_T) {
    // Exposure segment anchored at the deblurred midpoint image.
    return f.L_D_mid(x, y) + c_ * (cum_t - cum(f.tau, Limit::Right));
  }
  if (k + 1 == static_cast<int>(frames_.size())) {
    // Past the last exposure: hold the last anchor.
    return f.L_D_end(x, y);
  }

  const FrameAug& g = frames_[k + 1];
  const std::int64_t w0 = f.tau + f.half_T;
  const std::int64_t w1 = g.tau - g.half_T;
  const double scale = f.scale(x, y);
  const double fwd = f.L_D_end(x, y) + c_ * scale * (cum_t - cum(w0, Limit::Right));
  const double bwd = g.L_D_begin(x, y) - c_ * scale * (cum(w1, Limit::Right) - cum_t);

  const double span = seconds_between(w0, w1);
  double w = span > 0.0 ? seconds_between(w0, t_micros) / span : 0.0;
  w = std::clamp(w, 0.0, 1.0);
  const double w_fwd = params_.literal_blend_orientation ? w : 1.0 - w;
  return w_fwd * fwd + (1.0 - w_fwd) * bwd;
}

double AugmentedProvider::covariance(int x, int y, std::int64_t t_micros) const {
  const auto it = std::upper_bound(
      frames_.begin(), frames_.end(), t_micros,
      [](std::int64_t t, const FrameAug& f) { return t < f.tau; });
  if (it == frames_.begin()) return frames_.front().R(x, y);
  if (it == frames_.end()) return frames_.back().R(x, y);
  const FrameAug& a = *(it - 1);
  const FrameAug& b = *it;
  return interpolate_R(a.R(x, y), b.R(x, y), static_cast<double>(t_micros),
                       static_cast<double>(a.tau), static_cast<double>(b.tau));
}

double AugmentedProvider::ct_scale(int x, int y, std::int64_t t_micros) const {
  const int k = span_index(t_micros);
  const FrameAug& f = frames_[k];
  if (t_micros < f.tau + f.half_T) return 1.0;            // inside the exposure
  if (k + 1 == static_cast<int>(frames_.size())) return 1.0;  // hold region
  return f.scale(x, y);
}

// ---- ZohProvider -------------------------------------------------------------

ZohProvider::ZohProvider(std::span<const Frame> frames, const CrfModel& crf, double I_0) {
  if (frames.empty()) throw std::invalid_argument("ZohProvider: need at least one frame");
  frames_.reserve(frames.size());
  for (const Frame& f : frames) {
    LogFrame lf;
    lf.tau = f.t_mid.micros;
    lf.L = ImageF(f.response.width(), f.response.height());
    for (std::size_t i = 0; i < lf.L.size(); ++i) {
      lf.L[i] = std::log(crf.inverse(f.response[i]) + I_0);
    }
    lf.R = frame_covariance(f, crf, I_0).R;
    frames_.push_back(std::move(lf));
  }
}

std::int64_t ZohProvider::reference_start_micros() const { return frames_.front().tau; }

double ZohProvider::reference(int x, int y, std::int64_t t_micros, Limit side) const {
  // Latest frame with tau <= t; the left limit excludes a frame exactly at t.
  int lo = 0;
  int hi = static_cast<int>(frames_.size()) - 1;
  while (lo < hi) {
    const int mid = (lo + hi + 1) / 2;
    const bool at_or_before = side == Limit::Right ? frames_[mid].tau <= t_micros
                                                   : frames_[mid].tau < t_micros;
    if (at_or_before) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return frames_[lo].L(x, y);
}

double ZohProvider::covariance(int x, int y, std::int64_t t_micros) const {
  const auto it = std::upper_bound(
      frames_.begin(), frames_.end(), t_micros,
      [](std::int64_t t, const LogFrame& f) { return t < f.tau; });
  if (it == frames_.begin()) return frames_.front().R(x, y);
  if (it == frames_.end()) return frames_.back().R(x, y);
  const LogFrame& a = *(it - 1);
  const LogFrame& b = *it;
  return interpolate_R(a.R(x, y), b.R(x, y), static_cast<double>(t_micros),
                       static_cast<double>(a.tau), static_cast<double>(b.tau));
}

std::unique_ptr<ReferenceProvider> make_reference_provider(
    std::span<const Frame> frames, std::span<const Event> events, const CrfModel& crf,
    double c, const AugmentParams& params, double I_0) {
  if (params.mode == AugmentParams::Mode::Zoh) {
    return std::make_unique<ZohProvider>(frames, crf, I_0);
  }
  return std::make_unique<AugmentedProvider>(frames, events, crf, c, params, I_0);
}

}  // namespace evfuse

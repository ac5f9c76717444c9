#include "evfuse/filters.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace evfuse {

double cf_interval(double L_hat_i, double L_A, double alpha, double dt) {
  const double decay = std::exp(-alpha * dt);
  return decay * L_hat_i + (1.0 - decay) * L_A;
}

double event_jump(double L_hat_minus, int polarity, double c_effective) {
  if (!(c_effective > 0.0)) {
    throw std::invalid_argument("event_jump: c_effective must be positive");
  }
  if (polarity != 1 && polarity != -1) {
    throw std::invalid_argument("event_jump: polarity must be +1 or -1");
  }
  return L_hat_minus + c_effective * polarity;
}

double highpass_interval(double L_hat_i, double alpha, double dt) {
  return std::exp(-alpha * dt) * L_hat_i;
}

double riccati_interval(double P_i, double R, double dt) {
  if (!(P_i > 0.0) || !(R > 0.0)) {
    throw std::invalid_argument("riccati_interval: P and R must be positive");
  }
  return 1.0 / (1.0 / P_i + dt / R);
}

double riccati_event_update(double P_minus, double Q) { return P_minus + Q; }

double kalman_gain(double P, double R) { return P / R; }

double akf_interval(double L_hat_i, double L_A_i, double L_A_t, double P_i, double R,
                    double dt) {
  const double inv_P = 1.0 / P_i;
  return (L_hat_i - L_A_i) * inv_P / (inv_P + dt / R) + L_A_t;
}

// ---- EventNoiseTracker -----------------------------------------------------

EventNoiseTracker::EventNoiseTracker(int width, int height, const EventNoiseParams& params)
    : width_(width),
      height_(height),
      params_(params),
      own_last_(std::size_t(width) * height, kNever),
      published_last_(std::size_t(width) * height, kNever) {}

double EventNoiseTracker::last_neighbor_seconds(int x, int y) const {
  const int r = params_.neighborhood_radius;
  std::int64_t latest = kNever;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx == 0 && dy == 0) continue;
      const int nx = x + dx;
      const int ny = y + dy;
      if (nx < 0 || nx >= width_ || ny < 0 || ny >= height_) continue;
      latest = std::max(latest, published_last_[std::size_t(ny) * width_ + nx]);
    }
  }
  return latest == kNever ? 0.0 : static_cast<double>(latest) / kMicrosPerSecond;
}

double EventNoiseTracker::on_event(const Event& e) {
  const std::size_t idx = std::size_t(e.y) * width_ + e.x;
  const double t = e.t.seconds();
  const std::int64_t own = own_last_[idx];
  const double t_last = own == kNever ? 0.0 : static_cast<double>(own) / kMicrosPerSecond;
  const double q = event_covariance(t, t_last, last_neighbor_seconds(e.x, e.y), params_);
  own_last_[idx] = e.t.micros;
  pending_.push_back(static_cast<std::uint32_t>(idx));
  return q;
}

void EventNoiseTracker::flush_batch() {
  for (const std::uint32_t idx : pending_) {
    published_last_[idx] = own_last_[idx];
  }
  pending_.clear();
}

// ---- FilterImage -----------------------------------------------------------

FilterImage::FilterImage(int width, int height, const FilterParams& params,
                         const EventNoiseParams& noise, const ReferenceProvider* provider)
    : width_(width),
      height_(height),
      params_(params),
      provider_(provider),
      states_(std::size_t(width) * height),
      tracker_(width, height, noise) {
  if (params_.mode != FilterMode::HighPass && provider_ == nullptr) {
    throw std::invalid_argument("FilterImage: CF/AKF modes require a reference provider");
  }
  const std::int64_t ref_start =
      provider_ ? provider_->reference_start_micros() : std::numeric_limits<std::int64_t>::max();
  for (std::size_t i = 0; i < states_.size(); ++i) {
    PixelState& st = states_[i];
    st.L_hat = params_.L_init;
    st.P = params_.P_init;
    st.t_last = 0;
    if (provider_ && ref_start <= 0) {
      const int x = static_cast<int>(i % width_);
      const int y = static_cast<int>(i / width_);
      st.ref_commit = provider_->reference(x, y, 0, Limit::Right);
      st.R_commit = provider_->covariance(x, y, 0);
    }
  }
}

FilterImage::Advanced FilterImage::advanced_value(const PixelState& st, int x, int y,
                                                  std::int64_t t_micros) const {
  double L = st.L_hat;
  double P = st.P;
  std::int64_t t_from = st.t_last;

  const std::int64_t ref_start =
      provider_ ? provider_->reference_start_micros() : std::numeric_limits<std::int64_t>::max();

  // Pre-reference segment: high-pass dynamics, covariance untouched
  // (no measurement information has arrived yet).
  if (params_.mode == FilterMode::HighPass || t_from < ref_start) {
    const std::int64_t seg_end =
        params_.mode == FilterMode::HighPass ? t_micros : std::min(t_micros, ref_start);
    const double dt = seconds_between(t_from, seg_end);
    if (dt > 0.0) L = highpass_interval(L, params_.alpha, dt);
    t_from = seg_end;
    if (params_.mode == FilterMode::HighPass || t_from >= t_micros) {
      return {L, P};
    }
  }

  // Reference-backed segment [t_from, t_micros].
  const double dt = seconds_between(t_from, t_micros);
  if (dt <= 0.0) return {L, P};

  double L_A_i;
  double R_i;
  if (t_from > st.t_last || st.t_last < ref_start) {
    // The interval starts exactly at the reference start; sample there.
    L_A_i = provider_->reference(x, y, t_from, Limit::Right);
    R_i = provider_->covariance(x, y, t_from);
  } else {
    L_A_i = st.ref_commit;
    R_i = st.R_commit;
  }

  if (params_.mode == FilterMode::CF) {
    const double L_A_t = params_.reference_at_interval_start
                             ? L_A_i
                             : provider_->reference(x, y, t_micros, Limit::Left);
    L = cf_interval(L, L_A_t, params_.alpha, dt);
  } else {  // AKF
    const double L_A_t = params_.reference_at_interval_start
                             ? L_A_i
                             : provider_->reference(x, y, t_micros, Limit::Left);
    const double P_i = std::max(P, params_.P_floor);
    L = akf_interval(L, L_A_i, L_A_t, P_i, R_i, dt);
    P = std::max(riccati_interval(P_i, R_i, dt), params_.P_floor);
  }
  return {L, P};
}

void FilterImage::commit(PixelState& st, int x, int y, std::int64_t t_micros) {
  if (t_micros < st.t_last) {
    throw std::logic_error("FilterImage: commits must be time-ordered");
  }
  const Advanced adv = advanced_value(st, x, y, t_micros);
  st.L_hat = adv.L_hat;
  st.P = adv.P;
  st.t_last = t_micros;
  if (params_.mode != FilterMode::HighPass) {
    st.ref_commit = provider_->reference(x, y, t_micros, Limit::Right);
    st.R_commit = provider_->covariance(x, y, t_micros);
  }
}

void FilterImage::advance_all(std::int64_t t_micros) {
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      PixelState& st = states_[std::size_t(y) * width_ + x];
      st.L_hat = frame_boundary(st.L_hat);  // continuity at frames
      commit(st, x, y, t_micros);
    }
  }
  ++stats_.frame_commits;
}

void FilterImage::apply_impulse(int x, int y, std::int64_t t_micros, double magnitude,
                                double Q) {
  PixelState& st = states_[std::size_t(y) * width_ + x];
  commit(st, x, y, t_micros);
  st.L_hat += magnitude;
  if (params_.mode == FilterMode::AKF) {
    st.P = std::max(riccati_event_update(st.P, Q), params_.P_floor);
  }
  ++stats_.state_updates;
}

void FilterImage::apply_event_batch(std::span<const Event> batch) {
  for (const Event& e : batch) {
    if (e.polarity != 1 && e.polarity != -1) {
      ++stats_.events_skipped_invalid;
      continue;
    }
    if (e.x < 0 || e.x >= width_ || e.y < 0 || e.y >= height_) {
      ++stats_.events_skipped_oob;
      continue;
    }
    const double q = tracker_.on_event(e);
    double c_eff = params_.c;
    if (params_.scale_event_jumps && provider_) {
      c_eff *= provider_->ct_scale(e.x, e.y, e.t.micros);
    }
    PixelState& st = states_[std::size_t(e.y) * width_ + e.x];
    commit(st, e.x, e.y, e.t.micros);
    st.L_hat = event_jump(st.L_hat, e.polarity, c_eff);
    if (params_.mode == FilterMode::AKF) {
      st.P = std::max(riccati_event_update(st.P, q), params_.P_floor);
    }
    ++stats_.state_updates;
    ++stats_.events_processed;
  }
  tracker_.flush_batch();
}

void FilterImage::process_item(const TimelineItem& item, std::span<const Event> events,
                               std::span<const Frame> frames) {
  if (item.kind == TimelineKind::FrameBoundary) {
    (void)frames;
    advance_all(item.t.micros);
  } else {
    apply_event_batch(events.subspan(item.first, item.count));
  }
}

void FilterImage::process(const Timeline& timeline, std::span<const Event> events,
                          std::span<const Frame> frames) {
  for (const TimelineItem& item : timeline) {
    process_item(item, events, frames);
  }
}

double FilterImage::query_pixel(int x, int y, std::int64_t t_micros) const {
  const PixelState& st = states_[std::size_t(y) * width_ + x];
  if (t_micros < st.t_last) {
    throw std::invalid_argument("query: t precedes pixel (" + std::to_string(x) + "," +
                                std::to_string(y) + ") committed state");
  }
  return advanced_value(st, x, y, t_micros).L_hat;
}

ImageF FilterImage::query(std::int64_t t_micros) const {
  ImageF out(width_, height_);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      out(x, y) = query_pixel(x, y, t_micros);
    }
  }
  return out;
}

FilterImage process_timeline(const Timeline& timeline, std::span<const Event> events,
                             std::span<const Frame> frames, int width, int height,
                             const FilterParams& params, const EventNoiseParams& noise,
                             const ReferenceProvider* provider) {
  FilterImage filter(width, height, params, noise, provider);
  filter.process(timeline, events, frames);
  return filter;
}

}  // namespace evfuse

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "evfuse/core.hpp"
#include "evfuse/noise.hpp"

namespace evfuse {

enum class FilterMode { CF, HighPass, AKF };

struct FilterParams {
  FilterMode mode = FilterMode::CF;
  double alpha = 20.0;   // CF gain / high-pass corner frequency, rad/s
  double c = 0.1;        // global contrast threshold, log-intensity per event
  double P_init = 100.0;
  double L_init = std::log(0.5 + kDefaultI0);
  double P_floor = 1e-12;
  // Eq.-literal reference handling evaluates L^A at the query time; this flag
  // freezes it at the interval start instead (the derivation's assumption).
  bool reference_at_interval_start = false;
  // Apply per-pixel contrast-threshold scaling to filter event jumps, not
  // just to the interpolation integrals.
  bool scale_event_jumps = true;
};

/// Which side of a discontinuity to evaluate. Reference signals are piecewise
/// constant and jump at event times; interval solutions need the left limit.
enum class Limit { Left, Right };

/// Continuous-time per-pixel reference: the augmented log-intensity L^A and
/// its covariance R, evaluable at any time at or after reference_start.
class ReferenceProvider {
 public:
  virtual ~ReferenceProvider() = default;

  virtual double reference(int x, int y, std::int64_t t_micros, Limit side) const = 0;
  virtual double covariance(int x, int y, std::int64_t t_micros) const = 0;
  /// Per-pixel contrast-threshold scaling in effect at t (1 when uncalibrated).
  virtual double ct_scale(int /*x*/, int /*y*/, std::int64_t /*t_micros*/) const { return 1.0; }
  /// First instant a frame-derived reference exists; before it the filter
  /// runs in high-pass mode. INT64_MAX means never (pure-event operation).
  virtual std::int64_t reference_start_micros() const = 0;
};

/// Fixed reference everywhere, available from t = 0. Mostly for tests.
class ConstantReference final : public ReferenceProvider {
 public:
  ConstantReference(double L, double R) : L_(L), R_(R) {}
  double reference(int, int, std::int64_t, Limit) const override { return L_; }
  double covariance(int, int, std::int64_t) const override { return R_; }
  std::int64_t reference_start_micros() const override { return 0; }

 private:
  double L_;
  double R_;
};

// ---- Closed-form interval/update solutions -------------------------------

/// CF interval solution: exp(-a dt) L + (1 - exp(-a dt)) L_A.
double cf_interval(double L_hat_i, double L_A, double alpha, double dt);

/// Discrete event update: L + c_effective * polarity. Throws if c_effective
/// is not positive or polarity is not +-1.
double event_jump(double L_hat_minus, int polarity, double c_effective);

/// Frames do not jump the state; the solution is continuous there.
constexpr double frame_boundary(double L_hat_minus) { return L_hat_minus; }

/// Pure-event high-pass interval: exp(-a dt) L.
double highpass_interval(double L_hat_i, double alpha, double dt);

/// Riccati interval solution 1 / (1/P + dt/R). Throws on non-positive P or R.
double riccati_interval(double P_i, double R, double dt);

/// Covariance bump at an event: P + Q.
double riccati_event_update(double P_minus, double Q);

/// Kalman gain K = P / R.
double kalman_gain(double P, double R);

/// AKF interval solution with piecewise-constant R sampled at the interval
/// start and the reference evaluated at both endpoints:
///   (L_i - L_A_i) * (1/P_i) / (1/P_i + dt/R) + L_A_t.
double akf_interval(double L_hat_i, double L_A_i, double L_A_t, double P_i, double R,
                    double dt);

// ---- Per-pixel state and noise bookkeeping --------------------------------

/// Committed per-pixel filter state. Together with EventNoiseTracker's
/// per-pixel event-history maps this realizes the full pixel state.
struct PixelState {
  double L_hat = 0.0;
  double P = 0.0;
  std::int64_t t_last = 0;    // last committed update, micros
  double ref_commit = 0.0;    // L^A at t_last (right limit), CF/AKF
  double R_commit = 0.0;      // R at t_last, AKF
};

/// Event-history maps feeding the Q model. Own-pixel history updates per
/// event; the neighbor-visible map updates per timestamp batch so that the
/// isolated-pixel term sees only strictly earlier timeline entries.
class EventNoiseTracker {
 public:
  EventNoiseTracker(int width, int height, const EventNoiseParams& params);

  /// Covariance for this event given history, then record it. Call in stream
  /// order; call flush_batch() after each equal-timestamp batch.
  double on_event(const Event& e);
  void flush_batch();

  /// Latest neighbor event strictly before the current batch; stream epoch
  /// (t = 0) when no neighbor has fired.
  double last_neighbor_seconds(int x, int y) const;

 private:
  static constexpr std::int64_t kNever = std::numeric_limits<std::int64_t>::min();

  int width_;
  int height_;
  EventNoiseParams params_;
  std::vector<std::int64_t> own_last_;        // per-event updates
  std::vector<std::int64_t> published_last_;  // batch-deferred, read by neighbors
  std::vector<std::uint32_t> pending_;        // indices touched in the current batch
};

struct ProcessStats {
  std::uint64_t events_processed = 0;
  std::uint64_t events_skipped_oob = 0;
  std::uint64_t events_skipped_invalid = 0;
  std::uint64_t state_updates = 0;
  std::uint64_t frame_commits = 0;
};

/// The asynchronous per-pixel filter over a full image. Each pixel alternates
/// closed-form interval solutions with discrete updates; queries evaluate the
/// current interval solution without committing.
class FilterImage {
 public:
  /// `provider` may be null for HighPass mode; it must outlive this object.
  FilterImage(int width, int height, const FilterParams& params,
              const EventNoiseParams& noise, const ReferenceProvider* provider);

  int width() const { return width_; }
  int height() const { return height_; }

  /// Run a full merged timeline (convenience around the streaming calls).
  void process(const Timeline& timeline, std::span<const Event> events,
               std::span<const Frame> frames);
  void process_item(const TimelineItem& item, std::span<const Event> events,
                    std::span<const Frame> frames);

  /// Commit every pixel at a frame boundary (states are continuous there).
  void advance_all(std::int64_t t_micros);

  /// Apply one event batch sharing a timestamp, in stream order.
  void apply_event_batch(std::span<const Event> batch);

  /// Advance a pixel to t and add an impulse of the given log-intensity
  /// magnitude and covariance. Used directly by the convolved pipeline.
  void apply_impulse(int x, int y, std::int64_t t_micros, double magnitude, double Q);

  /// Evaluate the interval solution at t for every pixel without mutating
  /// committed state. Throws if t precedes any pixel's last commit.
  ImageF query(std::int64_t t_micros) const;
  double query_pixel(int x, int y, std::int64_t t_micros) const;

  const PixelState& state(int x, int y) const { return states_[std::size_t(y) * width_ + x]; }
  const ProcessStats& stats() const { return stats_; }
  const FilterParams& params() const { return params_; }
  EventNoiseTracker& noise_tracker() { return tracker_; }

 private:
  struct Advanced {
    double L_hat;
    double P;
  };
  Advanced advanced_value(const PixelState& st, int x, int y, std::int64_t t_micros) const;
  void commit(PixelState& st, int x, int y, std::int64_t t_micros);

  int width_;
  int height_;
  FilterParams params_;
  const ReferenceProvider* provider_;
  std::vector<PixelState> states_;
  EventNoiseTracker tracker_;
  ProcessStats stats_;
};

/// Assemble tracker + engine and run the whole timeline; returns the final
/// committed state, queryable at any t at or after the last item.
FilterImage process_timeline(const Timeline& timeline, std::span<const Event> events,
                             std::span<const Frame> frames, int width, int height,
                             const FilterParams& params, const EventNoiseParams& noise,
                             const ReferenceProvider* provider);

}  // namespace evfuse

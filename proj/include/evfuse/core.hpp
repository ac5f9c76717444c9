#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <span>
#include <vector>

#include "evfuse/image.hpp"

namespace evfuse {

inline constexpr double kMicrosPerSecond = 1e6;

/// Fixed offset added to linear intensities before taking logs so that
/// log values stay finite on [0,1]-normalized data.
inline constexpr double kDefaultI0 = 0.01;

/// Integer microseconds since the stream epoch. All ordering and windowing is
/// done on the integer; filter arithmetic converts differences to seconds.
struct Timestamp {
  std::int64_t micros = 0;

  static constexpr Timestamp from_micros(std::int64_t us) { return Timestamp{us}; }
  static Timestamp from_seconds(double s) {
    return Timestamp{static_cast<std::int64_t>(std::llround(s * kMicrosPerSecond))};
  }
  double seconds() const { return static_cast<double>(micros) / kMicrosPerSecond; }

  auto operator<=>(const Timestamp&) const = default;
};

/// Seconds between two microsecond stamps, computed on the integers first.
inline double seconds_between(std::int64_t from_us, std::int64_t to_us) {
  return static_cast<double>(to_us - from_us) / kMicrosPerSecond;
}

struct Event {
  Timestamp t;
  std::int16_t x = 0;
  std::int16_t y = 0;
  std::int8_t polarity = 0;  // -1 or +1; 0 only appears in raw/invalid records
};

struct Frame {
  Timestamp t_mid;          // midpoint of the exposure window
  double exposure = 0.0;    // seconds, >= 0, < inter-frame spacing
  ImageF response;          // raw camera responses in [0,1]

  std::int64_t half_exposure_micros() const {
    return static_cast<std::int64_t>(std::llround(exposure * kMicrosPerSecond * 0.5));
  }
  std::int64_t exposure_begin_micros() const { return t_mid.micros - half_exposure_micros(); }
  std::int64_t exposure_end_micros() const { return t_mid.micros + half_exposure_micros(); }
};

enum class TimelineKind : std::uint8_t { FrameBoundary, EventBatch };

/// One merged-timeline entry. FrameBoundary: `first` indexes the frame array.
/// EventBatch: [first, first+count) indexes the event array; all events in a
/// batch share one timestamp.
struct TimelineItem {
  Timestamp t;
  TimelineKind kind = TimelineKind::EventBatch;
  std::uint32_t first = 0;
  std::uint32_t count = 0;
};

using Timeline = std::vector<TimelineItem>;

/// Merge sorted events and frames into one timeline. Items are strictly
/// increasing in (t, kind) where at equal timestamps the frame boundary comes
/// first by default (the frame measures the state before the impulsive event
/// increment). Throws std::invalid_argument naming the index of the first
/// out-of-order record in either input.
Timeline interleave(std::span<const Event> events, std::span<const Frame> frames,
                    bool frame_before_event = true);

struct StreamValidationReport {
  std::int64_t out_of_bounds = 0;
  std::int64_t out_of_order = 0;
  std::int64_t zero_polarity = 0;

  bool accepted() const { return out_of_bounds == 0 && out_of_order == 0 && zero_polarity == 0; }
};

/// Diagnostic pass over an event stream; never throws.
StreamValidationReport validate_stream(std::span<const Event> events, int width, int height);

}  // namespace evfuse

#include "evfuse/core.hpp"

#include <stdexcept>
#include <string>

namespace evfuse {

namespace {

void check_sorted(std::span<const Event> events) {
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].t < events[i - 1].t) {
      throw std::invalid_argument("interleave: events out of order at index " +
                                  std::to_string(i));
    }
  }
}

void check_sorted(std::span<const Frame> frames) {
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].t_mid <= frames[i - 1].t_mid) {
      throw std::invalid_argument("interleave: frames out of order at index " +
                                  std::to_string(i));
    }
  }
}

}  // namespace

Timeline interleave(std::span<const Event> events, std::span<const Frame> frames,
                    bool frame_before_event) {
  check_sorted(events);
  check_sorted(frames);

  Timeline timeline;
  timeline.reserve(frames.size() + events.size() / 4 + 1);

  std::size_t ei = 0;
  std::size_t fi = 0;
  while (ei < events.size() || fi < frames.size()) {
    const bool have_e = ei < events.size();
    const bool have_f = fi < frames.size();
    bool take_frame;
    if (have_e && have_f) {
      if (frames[fi].t_mid == events[ei].t) {
        take_frame = frame_before_event;
      } else {
        take_frame = frames[fi].t_mid < events[ei].t;
      }
    } else {
      take_frame = have_f;
    }

    if (take_frame) {
      timeline.push_back({frames[fi].t_mid, TimelineKind::FrameBoundary,
                          static_cast<std::uint32_t>(fi), 1});
      ++fi;
    } else {
      const Timestamp t = events[ei].t;
      std::size_t end = ei + 1;
      while (end < events.size() && events[end].t == t) ++end;
      timeline.push_back({t, TimelineKind::EventBatch, static_cast<std::uint32_t>(ei),
                          static_cast<std::uint32_t>(end - ei)});
      ei = end;
    }
  }
  return timeline;
}

StreamValidationReport validate_stream(std::span<const Event> events, int width, int height) {
  StreamValidationReport report;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height) ++report.out_of_bounds;
    if (i > 0 && e.t < events[i - 1].t) ++report.out_of_order;
    if (e.polarity == 0) ++report.zero_polarity;
  }
  return report;
}

}  // namespace evfuse

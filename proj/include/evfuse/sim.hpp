#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "evfuse/core.hpp"
#include "evfuse/noise.hpp"

namespace evfuse::sim {

/// Scene components compose by summation in the log-intensity domain.
struct Constant {
  double value = 0.0;
};

struct TemporalRamp {
  double rate = 0.0;  // log-intensity per second, uniform over pixels
};

/// amplitude * sin(2 pi ((x cos a + y sin a - speed t) / wavelength) + phase)
struct MovingSinusoid {
  double amplitude = 0.0;
  double wavelength = 16.0;  // pixels
  double speed = 0.0;        // pixels per second
  double angle = 0.0;        // radians
  double phase = 0.0;
};

/// Edge sweeping in +x at `speed`, from log level `low` ahead of the edge to
/// `high` behind it. transition = 0 gives a hard jump when the edge crosses a
/// pixel; otherwise the profile ramps linearly over `transition` pixels.
struct MovingStepEdge {
  double low = 0.0;
  double high = 0.0;
  double speed = 1.0;  // pixels per second, > 0
  double x0 = 0.0;     // edge position at t = 0
  double transition = 0.0;
};

using SceneComponent = std::variant<Constant, TemporalRamp, MovingSinusoid, MovingStepEdge>;

/// Continuous log-intensity scene over a fixed geometry.
class Scene {
 public:
  Scene(int width, int height) : width_(width), height_(height) {}

  Scene& add(SceneComponent component) {
    parts_.push_back(component);
    return *this;
  }

  int width() const { return width_; }
  int height() const { return height_; }

  double log_intensity(int x, int y, double t) const;
  /// Upper bound on |dL/dt| away from jump instants.
  double rate_bound(int x, int y) const;
  /// Times in (t0, t1] where L(x,y,.) jumps discontinuously, sorted.
  std::vector<double> jump_times(int x, int y, double t0, double t1) const;

 private:
  int width_;
  int height_;
  std::vector<SceneComponent> parts_;
};

struct SimConfig {
  double duration = 1.0;     // seconds
  double frame_rate = 30.0;  // Hz; first exposure starts at t = 0
  double exposure = 0.0;     // seconds; 0 = instantaneous frames
  double c = 0.1;            // contrast threshold; per-pixel map optional
  std::optional<ImageF> c_map;
  double refractory = 0.0;   // seconds; 0 disables suppression
  double frame_noise_sigma = 0.0;  // Gaussian, response units
  double clip_lo = 0.0;      // scene-intensity window mapped onto [0,1]
  double clip_hi = 1.0;
  bool quantize = true;      // 8-bit response quantization
  std::uint64_t seed = 0;

  double pixel_c(int x, int y) const {
    return c_map ? (*c_map)(x, y) : c;
  }
};

/// Threshold-crossing event synthesis. Per pixel, an event fires whenever the
/// log intensity moves by the contrast threshold away from the level at the
/// previous event; the reference then steps by exactly that threshold.
/// Crossing times are solved on the continuous scene (Lipschitz-guarded
/// marching, discrete handling of hard jumps) and rounded up to microseconds.
/// Events inside the refractory window are suppressed; on re-arm a pending
/// threshold excess fires one event at a time.
std::vector<Event> simulate_events(const Scene& scene, const SimConfig& config);

/// Exposure-integrated LDR frames: the exposure mean of exp(L) - I_0 is
/// windowed onto [clip_lo, clip_hi], passed through the CRF, optionally
/// disturbed by Gaussian noise, and quantized to 8-bit levels.
std::vector<Frame> simulate_frames(const Scene& scene, const SimConfig& config,
                                   const CrfModel& crf, double I_0 = kDefaultI0);

/// Exact analytic HDR log-intensity image at t.
ImageF ground_truth(const Scene& scene, double t);

/// Test oracle: dense-time threshold scanner at fixed resolution. Slow;
/// intended for validating simulate_events on small scenes.
std::vector<Event> scan_events_dense(const Scene& scene, const SimConfig& config,
                                     double resolution = 1e-5);

}  // namespace evfuse::sim

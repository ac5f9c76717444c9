#pragma once

// Independent reference implementations used only by tests. These deliberately
// avoid the closed-form code paths they check: filters are integrated
// numerically, metrics use naive double loops, merging uses std::stable_sort.

#include <cstdint>
#include <span>
#include <vector>

#include "evfuse/core.hpp"
#include "evfuse/filters.hpp"
#include "evfuse/metrics.hpp"
#include "evfuse/noise.hpp"

namespace oracles {

/// RK4 integration of dL/dt = -alpha (L - L_A) with constant L_A.
double rk4_cf(double L0, double L_A, double alpha, double dt, int steps);

struct AkfState {
  double L;
  double P;
};

/// Co-integration of dL/dt = -(P/R)(L - L_A) and dP/dt = -P^2/R with constant
/// L_A and R (RK4).
AkfState rk4_akf(double L0, double P0, double L_A, double R, double dt, int steps);

/// Forward-Euler integration of dP/dt = -P^2/R.
double euler_riccati(double P0, double R, double dt, double step);

/// Naive two-pass MSE.
double naive_mse(const evfuse::ImageF& a, const evfuse::ImageF& b);

/// Straightforward SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01,
/// K2=0.03, L=1, valid windows only.
double naive_ssim(const evfuse::ImageF& a, const evfuse::ImageF& b);

struct MergedRef {
  std::int64_t t;
  bool is_frame;
  std::size_t index;
};

/// Stable-sort merge oracle for interleave (frame-before-event tie break).
std::vector<MergedRef> stable_merge(std::span<const evfuse::Event> events,
                                    std::span<const evfuse::Frame> frames,
                                    bool frame_before_event);

/// Event covariance recomputed from the raw stream by direct scanning:
/// own-pixel history per event, neighbor history over strictly earlier
/// timestamps in a 3x3 neighborhood.
double scan_event_covariance(std::span<const evfuse::Event> events, std::size_t event_index,
                             const evfuse::EventNoiseParams& params, int width, int height);

/// Numerical (RK4, fixed step) integration of the full per-pixel filter over
/// a merged timeline, using the same reference provider and jump/Q rules as
/// the engine but never its interval closed forms. Returns the image at
/// t_query.
evfuse::ImageF integrate_timeline(const evfuse::Timeline& timeline,
                                  std::span<const evfuse::Event> events,
                                  std::span<const evfuse::Frame> frames, int width, int height,
                                  const evfuse::FilterParams& params,
                                  const evfuse::EventNoiseParams& noise,
                                  const evfuse::ReferenceProvider* provider,
                                  std::int64_t t_query_micros, double step_seconds = 1e-6);

/// Central-difference weighting oracle: dCRF/dI at irradiance nodes composed
/// with a piecewise-linear inverse, renormalized to unit max, floored.
std::vector<double> weighting_oracle(std::span<const double> response_table, double floor_value);

}  // namespace oracles

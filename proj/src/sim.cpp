#include "evfuse/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace evfuse::sim {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double component_value(const SceneComponent& part, int x, int y, double t) {
  return std::visit(
      [&](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Constant>) {
          return p.value;
        } else if constexpr (std::is_same_v<T, TemporalRamp>) {
          return p.rate * t;
        } else if constexpr (std::is_same_v<T, MovingSinusoid>) {
          const double u = x * std::cos(p.angle) + y * std::sin(p.angle);
          return p.amplitude * std::sin(kTwoPi * (u - p.speed * t) / p.wavelength + p.phase);
        } else {
          static_assert(std::is_same_v<T, MovingStepEdge>);
          const double pos = p.x0 + p.speed * t;  // edge position
          if (p.transition <= 0.0) {
            return pos >= x ? p.high : p.low;
          }
          const double s = std::clamp((pos - x) / p.transition + 0.5, 0.0, 1.0);
          return p.low + (p.high - p.low) * s;
        }
      },
      part);
}

double component_rate_bound(const SceneComponent& part) {
  return std::visit(
      [](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Constant>) {
          return 0.0;
        } else if constexpr (std::is_same_v<T, TemporalRamp>) {
          return std::abs(p.rate);
        } else if constexpr (std::is_same_v<T, MovingSinusoid>) {
          return std::abs(p.amplitude) * kTwoPi * std::abs(p.speed) / p.wavelength;
        } else {
          static_assert(std::is_same_v<T, MovingStepEdge>);
          if (p.transition <= 0.0) return 0.0;  // jumps handled discretely
          return std::abs(p.high - p.low) * std::abs(p.speed) / p.transition;
        }
      },
      part);
}

}  // namespace

double Scene::log_intensity(int x, int y, double t) const {
  double v = 0.0;
  for (const SceneComponent& part : parts_) v += component_value(part, x, y, t);
  return v;
}

double Scene::rate_bound(int x, int y) const {
  (void)x;
  (void)y;
  double v = 0.0;
  for (const SceneComponent& part : parts_) v += component_rate_bound(part);
  return v;
}

std::vector<double> Scene::jump_times(int x, int y, double t0, double t1) const {
  (void)y;
  std::vector<double> out;
  for (const SceneComponent& part : parts_) {
    if (const auto* edge = std::get_if<MovingStepEdge>(&part)) {
      if (edge->transition > 0.0 || edge->speed == 0.0) continue;
      const double tc = (x - edge->x0) / edge->speed;
      if (tc > t0 && tc <= t1) out.push_back(tc);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- Event synthesis ---------------------------------------------------------

namespace {

// Round a crossing time up to integer microseconds; crossings within 0.1 ns
// of a microsecond tick snap onto it.
std::int64_t crossing_to_micros(double t_seconds) {
  const double us = t_seconds * kMicrosPerSecond;
  return static_cast<std::int64_t>(std::ceil(us - 1e-4));
}

struct PixelSynth {
  const Scene* scene;
  const SimConfig* config;
  int x, y;
  double c;
  std::vector<Event>* out;

  double ref = 0.0;
  double next_allowed = 0.0;

  void emit(double t_cross, int sign) {
    std::int64_t t_us = crossing_to_micros(t_cross);
    const std::int64_t limit_us =
        static_cast<std::int64_t>(std::floor(config->duration * kMicrosPerSecond));
    t_us = std::min(t_us, limit_us);
    out->push_back({Timestamp::from_micros(t_us), static_cast<std::int16_t>(x),
                    static_cast<std::int16_t>(y), static_cast<std::int8_t>(sign)});
    ref += c * sign;
    next_allowed = t_cross + config->refractory;
  }

  // March a smooth segment [a, b] emitting threshold crossings in order. The
  // Lipschitz bound guarantees no crossing can occur within gap/bound, so the
  // march converges on the earliest crossing without overshooting.
  void run_segment(double a, double b) {
    if (b < a) return;
    const double bound = std::max(scene->rate_bound(x, y), 1e-12);
    const double min_step = 1e-8;
    const double level_tol = 1e-9;
    double t = a;
    while (t <= b) {
      if (next_allowed > t) {  // refractory blind window
        if (next_allowed > b) return;
        t = next_allowed;
        continue;
      }
      const double level = scene->log_intensity(x, y, t);
      const double up_gap = (ref + c) - level;
      const double down_gap = level - (ref - c);
      if (up_gap <= level_tol) {
        emit(t, +1);
        continue;  // re-evaluate: the gap is fresh after the reference step
      }
      if (down_gap <= level_tol) {
        emit(t, -1);
        continue;
      }
      if (t >= b) return;
      const double step = std::max(std::min(up_gap, down_gap) / bound, min_step);
      t = std::min(t + step, b);
    }
  }

  // A discontinuity at tj: fire the pending threshold excess one event at a
  // time (spaced by the refractory period when one is configured).
  void run_jump(double tj) {
    double t_fire = std::max(tj, next_allowed);
    while (true) {
      const double level = scene->log_intensity(x, y, t_fire);
      if (level - ref >= c - 1e-12) {
        emit(t_fire, +1);
      } else if (ref - level >= c - 1e-12) {
        emit(t_fire, -1);
      } else {
        break;
      }
      if (config->refractory > 0.0) {
        t_fire = next_allowed;
        if (t_fire > config->duration) break;
      }
    }
  }

  void run() {
    ref = scene->log_intensity(x, y, 0.0);
    const double D = config->duration;
    std::vector<double> jumps = scene->jump_times(x, y, 0.0, D);
    double seg_start = 0.0;
    for (const double tj : jumps) {
      run_segment(seg_start, std::nextafter(tj, seg_start));
      run_jump(tj);
      seg_start = tj;
    }
    run_segment(seg_start, D);
  }
};

}  // namespace

std::vector<Event> simulate_events(const Scene& scene, const SimConfig& config) {
  std::vector<Event> events;
  for (int y = 0; y < scene.height(); ++y) {
    for (int x = 0; x < scene.width(); ++x) {
      PixelSynth synth{&scene, &config, x, y, config.pixel_c(x, y), &events};
      synth.run();
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  return events;
}

// ---- Frame synthesis ----------------------------------------------------------

namespace {

// Adaptive Simpson on exp(L(x,y,.)) over a smooth segment.
double simpson_rec(const Scene& scene, int x, int y, double a, double fa, double b, double fb,
                   double m, double fm, double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = std::exp(scene.log_intensity(x, y, lm));
  const double frm = std::exp(scene.log_intensity(x, y, rm));
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
    return left + right + delta / 15.0;
  }
  return simpson_rec(scene, x, y, a, fa, m, fm, lm, flm, left, tol * 0.5, depth - 1) +
         simpson_rec(scene, x, y, m, fm, b, fb, rm, frm, right, tol * 0.5, depth - 1);
}

double integrate_exp(const Scene& scene, int x, int y, double a, double b, double tol) {
  if (b <= a) return 0.0;
  double total = 0.0;
  double seg_start = a;
  std::vector<double> jumps = scene.jump_times(x, y, a, b);
  jumps.push_back(b);
  for (const double seg_end : jumps) {
    if (seg_end <= seg_start) continue;
    // Evaluate just inside the segment so hard edges integrate exactly.
    const double lo = seg_start;
    const double hi = seg_end;
    const double fa = std::exp(scene.log_intensity(x, y, std::nextafter(lo, hi)));
    const double fb = std::exp(scene.log_intensity(x, y, std::nextafter(hi, lo)));
    const double m = 0.5 * (lo + hi);
    const double fm = std::exp(scene.log_intensity(x, y, m));
    const double whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    total += simpson_rec(scene, x, y, lo, fa, hi, fb, m, fm, whole, tol, 40);
    seg_start = seg_end;
  }
  return total;
}

}  // namespace

std::vector<Frame> simulate_frames(const Scene& scene, const SimConfig& config,
                                   const CrfModel& crf, double I_0) {
  if (config.frame_rate <= 0.0) return {};
  if (config.clip_hi <= config.clip_lo) {
    throw std::invalid_argument("simulate_frames: empty clip band");
  }
  const double spacing = 1.0 / config.frame_rate;
  if (config.exposure >= spacing) {
    throw std::invalid_argument("simulate_frames: exposure must be below frame spacing");
  }

  std::mt19937_64 rng(config.seed);
  // Deterministic Box-Muller; std::normal_distribution is not portable
  // across standard libraries.
  auto gauss = [&rng]() {
    const double u1 =
        (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    const double u2 = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  };

  std::vector<Frame> frames;
  const std::int64_t half_us =
      static_cast<std::int64_t>(std::llround(config.exposure * kMicrosPerSecond * 0.5));
  for (int k = 0;; ++k) {
    const double tau = config.exposure * 0.5 + k * spacing;
    if (tau + config.exposure * 0.5 > config.duration + 1e-12) break;

    Frame frame;
    frame.t_mid = Timestamp::from_seconds(tau);
    frame.exposure = config.exposure;
    frame.response = ImageF(scene.width(), scene.height());

    const double a = seconds_between(0, frame.t_mid.micros - half_us);
    const double b = seconds_between(0, frame.t_mid.micros + half_us);
    for (int y = 0; y < scene.height(); ++y) {
      for (int x = 0; x < scene.width(); ++x) {
        double mean_intensity;
        if (half_us <= 0) {
          mean_intensity = std::exp(scene.log_intensity(x, y, frame.t_mid.seconds())) - I_0;
        } else {
          mean_intensity = integrate_exp(scene, x, y, a, b, 1e-12) / (b - a) - I_0;
        }
        const double windowed = std::clamp(
            (mean_intensity - config.clip_lo) / (config.clip_hi - config.clip_lo), 0.0, 1.0);
        double resp = crf.apply(windowed);
        if (config.frame_noise_sigma > 0.0) {
          resp += config.frame_noise_sigma * gauss();
        }
        resp = std::clamp(resp, 0.0, 1.0);
        if (config.quantize) {
          resp = std::round(resp * 255.0) / 255.0;
        }
        frame.response(x, y) = resp;
      }
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

ImageF ground_truth(const Scene& scene, double t) {
  ImageF out(scene.width(), scene.height());
  for (int y = 0; y < scene.height(); ++y) {
    for (int x = 0; x < scene.width(); ++x) {
      out(x, y) = scene.log_intensity(x, y, t);
    }
  }
  return out;
}

// ---- Dense scanner oracle ------------------------------------------------------

std::vector<Event> scan_events_dense(const Scene& scene, const SimConfig& config,
                                     double resolution) {
  std::vector<Event> events;
  for (int y = 0; y < scene.height(); ++y) {
    for (int x = 0; x < scene.width(); ++x) {
      const double c = config.pixel_c(x, y);
      double ref = scene.log_intensity(x, y, 0.0);
      double next_allowed = 0.0;
      for (double t = resolution; t <= config.duration + resolution * 0.5; t += resolution) {
        const double tt = std::min(t, config.duration);
        if (tt < next_allowed) continue;
        double level = scene.log_intensity(x, y, tt);
        while (level - ref >= c) {
          events.push_back({Timestamp::from_seconds(tt), static_cast<std::int16_t>(x),
                            static_cast<std::int16_t>(y), +1});
          ref += c;
          if (config.refractory > 0.0) {
            next_allowed = tt + config.refractory;
            break;
          }
        }
        while (ref - level >= c && tt >= next_allowed) {
          events.push_back({Timestamp::from_seconds(tt), static_cast<std::int16_t>(x),
                            static_cast<std::int16_t>(y), -1});
          ref -= c;
          if (config.refractory > 0.0) {
            next_allowed = tt + config.refractory;
            break;
          }
        }
      }
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  return events;
}

}  // namespace evfuse::sim

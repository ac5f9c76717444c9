#pragma once

#include <array>
#include <span>

#include "evfuse/core.hpp"

namespace evfuse {

/// Tuning parameters of the three event noise processes. Variances are in
/// log-intensity^2 (rates per second for the first two).
struct EventNoiseParams {
  double sigma2_proc = 5e-4;
  double sigma2_iso = 0.03;
  double sigma2_ref = 0.01;
  double rho_bar = 1e-3;         // refractory upper bound, seconds
  int neighborhood_radius = 1;   // 3x3 excluding center
};

/// Brownian process noise: grows linearly with time since the last event at
/// the same pixel. Throws on negative dt.
double q_process(double dt_since_last_event, const EventNoiseParams& p);

/// Isolated-pixel noise: grows with the gap to the most recent neighborhood
/// event. Pixels with no neighbor history measure isolation from the stream
/// epoch (t = 0), so pass 0 for t_last_neighbor in that case.
double q_isolated(double t_event, double t_last_neighbor, const EventNoiseParams& p);

/// Refractory noise: sigma2_ref when the inter-event gap is within rho_bar
/// (inclusive), zero beyond it.
double q_refractory(double dt_since_last_event, const EventNoiseParams& p);

/// Total event covariance Q = process + isolated + refractory. Both history
/// timestamps fall back to the stream epoch (pass 0) when absent.
double event_covariance(double t_event, double t_last_event, double t_last_neighbor,
                        const EventNoiseParams& p);

/// Weighting function over the response domain: dCRF/dI composed with the
/// inverse CRF, renormalized to unit max and floored at f_w_floor. Sampled at
/// the 256 response levels j/255. `response_table` is the CRF sampled at 256
/// evenly spaced irradiance values; it must already be strictly increasing.
std::array<double, 256> weighting_from_crf(std::span<const double> response_table,
                                           double f_w_floor);

/// Tabulated camera response, its inverse, and the derived weighting.
/// Non-strict (plateaued) tables are repaired by cumulative max plus a small
/// ramp before inversion; genuinely decreasing tables are rejected.
class CrfModel {
 public:
  static constexpr int kTableSize = 256;

  /// Linear response with hard clip outside [0,1]; the default model.
  static CrfModel identity(double sigma2_im = kDefaultSigma2Im, double f_w_floor = 0.01);

  /// Build from tabulated samples (increasing irradiance). Throws if the
  /// response decreases anywhere by more than the repair tolerance.
  static CrfModel from_samples(std::span<const double> irradiance,
                               std::span<const double> response, double sigma2_im,
                               double f_w_floor = 0.01);

  double apply(double irradiance) const;    // CRF(I), clamped to the table range
  double inverse(double response) const;    // CRF^-1, piecewise linear
  double weighting(double response) const;  // floored f^w, piecewise linear

  double sigma2_im() const { return sigma2_im_; }
  double f_w_floor() const { return f_w_floor_; }
  std::span<const double> irradiance_table() const { return irr_; }
  std::span<const double> response_table() const { return resp_; }
  std::span<const double> weighting_table() const { return weight_; }

  static constexpr double kDefaultSigma2Im = 0.01;

 private:
  CrfModel() = default;
  void build_weighting();

  std::array<double, kTableSize> irr_{};
  std::array<double, kTableSize> resp_{};
  std::array<double, kTableSize> weight_{};
  double sigma2_im_ = kDefaultSigma2Im;
  double f_w_floor_ = 0.01;
};

struct FrameCovariance {
  ImageF R_bar;  // linear-intensity covariance
  ImageF R;      // log-intensity covariance
  Timestamp t;
};

/// Linear-domain covariance of a raw response and its log-domain mapping.
/// Exposed separately so the arithmetic is testable in isolation.
double r_bar_from_weighting(double sigma2_im, double f_w, double f_w_floor);
double r_log_from_r_bar(double r_bar, double intensity, double I_0);

/// Per-pixel covariance of a frame under the CRF noise model:
/// R_bar = sigma2_im / f^w(response), capped at sigma2_im / f_w_floor, and
/// R = R_bar / (I + I_0)^2 with I = CRF^-1(response).
FrameCovariance frame_covariance(const Frame& frame, const CrfModel& crf,
                                 double I_0 = kDefaultI0);

/// Linear interpolation of frame covariance between consecutive frame times.
/// t outside [t_k, t_k1] clamps to the nearest endpoint.
double interpolate_R(double R_k, double R_k1, double t, double t_k, double t_k1);

}  // namespace evfuse

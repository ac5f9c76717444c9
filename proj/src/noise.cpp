#include "evfuse/noise.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace evfuse {

double q_process(double dt_since_last_event, const EventNoiseParams& p) {
  if (dt_since_last_event < 0.0) {
    throw std::invalid_argument("q_process: negative elapsed time");
  }
  return p.sigma2_proc * dt_since_last_event;
}

double q_isolated(double t_event, double t_last_neighbor, const EventNoiseParams& p) {
  const double gap = t_event - t_last_neighbor;
  return p.sigma2_iso * std::max(gap, 0.0);
}

double q_refractory(double dt_since_last_event, const EventNoiseParams& p) {
  return dt_since_last_event <= p.rho_bar ? p.sigma2_ref : 0.0;
}

double event_covariance(double t_event, double t_last_event, double t_last_neighbor,
                        const EventNoiseParams& p) {
  const double dt = t_event - t_last_event;
  return q_process(dt, p) + q_isolated(t_event, t_last_neighbor, p) + q_refractory(dt, p);
}

namespace {

constexpr double kRepairTolerance = 1e-3;  // max admissible true decrease
constexpr double kRepairRamp = 1e-6;

// Cumulative max plus an epsilon ramp, rescaled so the endpoints keep their
// original span. Plateaus (clipped CRFs) become strictly increasing.
std::array<double, CrfModel::kTableSize> repair_monotone(std::span<const double> table) {
  const int n = CrfModel::kTableSize;
  std::array<double, CrfModel::kTableSize> out{};
  double running = table[0];
  for (int i = 0; i < n; ++i) {
    if (table[i] < running - kRepairTolerance) {
      throw std::invalid_argument("CrfModel: response table decreases beyond repair tolerance");
    }
    running = std::max(running, table[i]);
    out[i] = running + kRepairRamp * i;
  }
  const double lo = out[0];
  const double hi = out[n - 1];
  const double target_hi = std::max(running, lo + kRepairRamp * (n - 1));
  const double scale = (target_hi - lo) / (hi - lo);
  for (int i = 0; i < n; ++i) out[i] = lo + (out[i] - lo) * scale;
  return out;
}

double interp_table(std::span<const double> xs, std::span<const double> ys, double x) {
  const int n = static_cast<int>(xs.size());
  if (x <= xs[0]) return ys[0];
  if (x >= xs[n - 1]) return ys[n - 1];
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const int i = static_cast<int>(it - xs.begin());
  const double t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
  return ys[i - 1] + t * (ys[i] - ys[i - 1]);
}

}  // namespace

std::array<double, 256> weighting_from_crf(std::span<const double> response_table,
                                           double f_w_floor) {
  const int n = CrfModel::kTableSize;
  if (static_cast<int>(response_table.size()) != n) {
    throw std::invalid_argument("weighting_from_crf: expected 256 samples");
  }
  for (int i = 1; i < n; ++i) {
    if (response_table[i] <= response_table[i - 1]) {
      throw std::invalid_argument("weighting_from_crf: table not strictly increasing");
    }
  }

  // dCRF/dI at the irradiance nodes i/(n-1): central differences inside,
  // one-sided at the ends.
  const double h = 1.0 / (n - 1);
  std::array<double, 256> deriv{};
  deriv[0] = (response_table[1] - response_table[0]) / h;
  deriv[n - 1] = (response_table[n - 1] - response_table[n - 2]) / h;
  for (int i = 1; i < n - 1; ++i) {
    deriv[i] = (response_table[i + 1] - response_table[i - 1]) / (2.0 * h);
  }

  std::array<double, 256> irr_nodes{};
  for (int i = 0; i < n; ++i) irr_nodes[i] = i * h;

  // Compose with the inverse CRF: sample over the response levels j/255.
  std::array<double, 256> fw{};
  for (int j = 0; j < n; ++j) {
    const double y = j * h;
    const double u = interp_table(response_table, irr_nodes, y);  // CRF^-1(y)
    fw[j] = interp_table(irr_nodes, deriv, u);
  }

  const double max_fw = *std::max_element(fw.begin(), fw.end());
  if (!(max_fw > 0.0)) {
    throw std::invalid_argument("weighting_from_crf: non-positive derivative everywhere");
  }
  for (double& v : fw) v = std::max(v / max_fw, f_w_floor);
  return fw;
}

CrfModel CrfModel::identity(double sigma2_im, double f_w_floor) {
  CrfModel m;
  for (int i = 0; i < kTableSize; ++i) {
    const double v = double(i) / (kTableSize - 1);
    m.irr_[i] = v;
    m.resp_[i] = v;
  }
  m.sigma2_im_ = sigma2_im;
  m.f_w_floor_ = f_w_floor;
  m.build_weighting();
  return m;
}

CrfModel CrfModel::from_samples(std::span<const double> irradiance,
                                std::span<const double> response, double sigma2_im,
                                double f_w_floor) {
  if (irradiance.size() != kTableSize || response.size() != kTableSize) {
    throw std::invalid_argument("CrfModel: expected 256 samples");
  }
  for (int i = 1; i < kTableSize; ++i) {
    if (irradiance[i] <= irradiance[i - 1]) {
      throw std::invalid_argument("CrfModel: irradiance column must be strictly increasing");
    }
  }
  CrfModel m;
  std::copy(irradiance.begin(), irradiance.end(), m.irr_.begin());
  const auto repaired = repair_monotone(response);
  std::copy(repaired.begin(), repaired.end(), m.resp_.begin());
  m.sigma2_im_ = sigma2_im;
  m.f_w_floor_ = f_w_floor;
  m.build_weighting();
  return m;
}

void CrfModel::build_weighting() { weight_ = weighting_from_crf(resp_, f_w_floor_); }

double CrfModel::apply(double irradiance) const { return interp_table(irr_, resp_, irradiance); }

double CrfModel::inverse(double response) const { return interp_table(resp_, irr_, response); }

double CrfModel::weighting(double response) const {
  const double h = 1.0 / (kTableSize - 1);
  const double pos = std::clamp(response, 0.0, 1.0) / h;
  const int j = std::min(static_cast<int>(pos), kTableSize - 2);
  const double t = pos - j;
  return weight_[j] + t * (weight_[j + 1] - weight_[j]);
}

double r_bar_from_weighting(double sigma2_im, double f_w, double f_w_floor) {
  const double fw = std::max(f_w, f_w_floor);
  return sigma2_im / fw;
}

double r_log_from_r_bar(double r_bar, double intensity, double I_0) {
  const double denom = intensity + I_0;
  return r_bar / (denom * denom);
}

FrameCovariance frame_covariance(const Frame& frame, const CrfModel& crf, double I_0) {
  FrameCovariance cov;
  cov.t = frame.t_mid;
  cov.R_bar = ImageF(frame.response.width(), frame.response.height());
  cov.R = ImageF(frame.response.width(), frame.response.height());
  for (std::size_t i = 0; i < frame.response.size(); ++i) {
    const double resp = frame.response[i];
    const double r_bar = r_bar_from_weighting(crf.sigma2_im(), crf.weighting(resp),
                                              crf.f_w_floor());
    cov.R_bar[i] = r_bar;
    cov.R[i] = r_log_from_r_bar(r_bar, crf.inverse(resp), I_0);
  }
  return cov;
}

double interpolate_R(double R_k, double R_k1, double t, double t_k, double t_k1) {
  if (R_k == R_k1) return R_k;  // exact idempotence on equal inputs
  if (t_k1 <= t_k) return R_k;
  if (t <= t_k) return R_k;
  if (t >= t_k1) return R_k1;
  const double w = (t - t_k) / (t_k1 - t_k);
  return (1.0 - w) * R_k + w * R_k1;
}

}  // namespace evfuse

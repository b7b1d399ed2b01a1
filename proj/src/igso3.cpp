#include "fourdfold/igso3.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace fourdfold {

namespace {

constexpr double kPi = std::numbers::pi;
// Resummed form is used at or below this variance; the series above it.
constexpr double kResummedMaxSigma2 = 0.5;
constexpr int kWindings = 3;

void require_sigma2(double sigma2, const char* who) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw std::invalid_argument(std::string(who) + ": sigma2 must be positive and finite");
  }
}

// f, df/dc, d2f/dc2 from the series written in c = cos(omega):
//   chi_l(c) = 1 + 2 sum_{m=1..l} T_m(c)   (Chebyshev polynomials)
struct SeriesC {
  double f = 0.0;
  double fc = 0.0;
  double fcc = 0.0;
};

SeriesC series_in_c(double c, double sigma2, int terms) {
  SeriesC out;
  double t_prev = 1.0, t_cur = c;  // T_{m-1}, T_m
  double d_prev = 0.0, d_cur = 1.0;
  double dd_prev = 0.0, dd_cur = 0.0;
  double chi = 1.0, chi_c = 0.0, chi_cc = 0.0;
  for (int l = 0; l <= terms; ++l) {
    if (l >= 1) {
      chi += 2.0 * t_cur;
      chi_c += 2.0 * d_cur;
      chi_cc += 2.0 * dd_cur;
      const double t_next = 2.0 * c * t_cur - t_prev;
      const double d_next = 2.0 * t_cur + 2.0 * c * d_cur - d_prev;
      const double dd_next = 4.0 * d_cur + 2.0 * c * dd_cur - dd_prev;
      t_prev = t_cur;
      t_cur = t_next;
      d_prev = d_cur;
      d_cur = d_next;
      dd_prev = dd_cur;
      dd_cur = dd_next;
    }
    const double ll = static_cast<double>(l);
    const double w = (2.0 * ll + 1.0) * std::exp(-ll * (ll + 1.0) * sigma2 / 2.0);
    out.f += w * chi;
    out.fc += w * chi_c;
    out.fcc += w * chi_cc;
    if (w < 1e-40) break;
  }
  return out;
}

// Resummed form, terms normalized by the k = 0 Gaussian factor.
struct Resummed {
  double s = 0.0;    // sum (-1)^k a_k r_k
  double s1 = 0.0;   // d/dw
  double s2 = 0.0;   // d2/dw2
};

Resummed resummed_sums(double omega, double sigma2) {
  Resummed out;
  for (int k = -kWindings; k <= kWindings; ++k) {
    const double a = omega - 2.0 * kPi * k;
    const double kk = static_cast<double>(k);
    const double r = std::exp(-2.0 * kPi * kk * (kPi * kk - omega) / sigma2);
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    out.s += sign * a * r;
    out.s1 += sign * r * (1.0 - a * a / sigma2);
    out.s2 += sign * r * (a / sigma2) * (a * a / sigma2 - 3.0);
  }
  return out;
}

double resummed_density(double omega, double sigma2) {
  const double sigma = std::sqrt(sigma2);
  const double pref = std::exp(sigma2 / 8.0) * std::sqrt(2.0 * kPi) / (sigma2 * sigma);
  double total = 0.0;
  if (omega < 1e-8) {
    // S(w) / sin(w/2) -> 2 S'(0)
    for (int k = -kWindings; k <= kWindings; ++k) {
      const double a = -2.0 * kPi * k;
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      total += sign * std::exp(-a * a / (2.0 * sigma2)) * (1.0 - a * a / sigma2);
    }
    return pref * 2.0 * total;
  }
  for (int k = -kWindings; k <= kWindings; ++k) {
    const double a = omega - 2.0 * kPi * k;
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    total += sign * a * std::exp(-a * a / (2.0 * sigma2));
  }
  return pref * total / std::sin(omega / 2.0);
}

// 1/w - cot(w/2)/2, divided by w, and its derivative over w (small w).
double q_over_w(double w) {
  const double w2 = w * w;
  return 1.0 / 12.0 + w2 / 720.0 + w2 * w2 / 30240.0 + w2 * w2 * w2 / 1209600.0;
}
double dq_over_w_over_w(double w) {
  const double w2 = w * w;
  return 1.0 / 360.0 + w2 / 7560.0 + w2 * w2 / 201600.0;
}
// (sin w - w cos w) / w^3
double e_series(double w) {
  const double w2 = w * w;
  return 1.0 / 3.0 - w2 / 30.0 + w2 * w2 / 840.0 - w2 * w2 * w2 / 45360.0;
}

// G = d/dw log f and G' in the resummed regime, w away from 0.
void resummed_g(double omega, double sigma2, double& g, double& gp) {
  const Resummed r = resummed_sums(omega, sigma2);
  const double half = omega / 2.0;
  const double ratio = r.s1 / r.s;
  g = ratio - 0.5 / std::tan(half);
  const double sh = std::sin(half);
  gp = r.s2 / r.s - ratio * ratio + 1.0 / (4.0 * sh * sh);
}

ScoreCoefficient resummed_coefficient_at(double omega, double sigma2) {
  ScoreCoefficient out;
  if (omega < 0.1) {
    // Only the k = 0 winding contributes at small w (others ~ e^{-2 pi^2 / s2}).
    const double a = q_over_w(omega) - 1.0 / sigma2;
    const double b = omega < 1e-8 ? 1.0 : omega / std::sin(omega);
    out.value = a * b;
    out.slope = -(dq_over_w_over_w(omega) * b * b + a * e_series(omega) * b * b * b);
    return out;
  }
  double g, gp;
  resummed_g(omega, sigma2, g, gp);
  const double s = std::sin(omega);
  const double c = std::cos(omega);
  out.value = g / s;
  out.slope = -(gp * s - g * c) / (s * s * s);
  return out;
}

// tanh(x)/x and (d/dx tanh(x)/x)/x.
double tanhc(double x) {
  if (x < 1e-4) return 1.0 - x * x / 3.0;
  return std::tanh(x) / x;
}
double dtanhc_over_x(double x) {
  const double x2 = x * x;
  if (x < 1e-2) return -2.0 / 3.0 + 8.0 * x2 / 15.0 - 34.0 * x2 * x2 / 105.0;
  const double ch = std::cosh(x);
  const double sech2 = std::isfinite(ch) ? 1.0 / (ch * ch) : 0.0;
  return (x * sech2 - std::tanh(x)) / (x2 * x);
}

// Near w = pi only the k = 0 and k = 1 windings matter. With u = pi - w and
// b = pi / s2 they combine to
//   log f = const - u^2 / (2 s2) + log(pi cosh(bu) - u sinh(bu)) - log cos(u/2),
// and c = -cos u. With q = (d log f / du) / u, value = -q B and
// slope = -(q'/u B^2 + q E B^3), B = u / sin u, E = (sin u - u cos u) / u^3.
ScoreCoefficient near_pi_coefficient(double u, double sigma2) {
  const double b = kPi / sigma2;
  const double x = b * u;
  const double th = std::tanh(x);
  const double tc = tanhc(x);
  const double ch = std::cosh(x);
  const double sech2 = std::isfinite(ch) ? 1.0 / (ch * ch) : 0.0;

  const double num = (kPi * b - 1.0) * b * tc - b;
  const double den = kPi - u * th;
  const double dnum_over_u = (kPi * b - 1.0) * b * b * b * dtanhc_over_x(x);
  const double dden_over_u = -b * (tc + sech2);

  double g, dg_over_u;  // tan(u/2) / (2u) and its derivative over u
  if (u < 0.1) {
    const double u2 = u * u;
    g = 0.25 + u2 / 48.0 + u2 * u2 / 480.0 + 17.0 * u2 * u2 * u2 / 80640.0;
    dg_over_u = 1.0 / 24.0 + u2 / 120.0 + 17.0 * u2 * u2 / 13440.0;
  } else {
    const double t = std::tan(u / 2.0);
    const double sec2 = 1.0 + t * t;
    g = t / (2.0 * u);
    dg_over_u = sec2 / (4.0 * u * u) - t / (2.0 * u * u * u);
  }

  const double q = -1.0 / sigma2 + num / den + g;
  const double dq_over_u = (dnum_over_u * den - num * dden_over_u) / (den * den) + dg_over_u;
  const double bb = u < 1e-8 ? 1.0 : u / std::sin(u);
  const double e = u < 0.1 ? e_series(u) : (std::sin(u) - u * std::cos(u)) / (u * u * u);
  return {-q * bb, -(dq_over_u * bb * bb + q * e * bb * bb * bb)};
}

}  // namespace

void RotationSchedule::validate() const {
  if (!(sigma_min > 0.0) || !(sigma_min < sigma_max)) {
    throw std::invalid_argument("RotationSchedule: require 0 < sigma_min < sigma_max");
  }
  if (series_terms < 500) throw std::invalid_argument("RotationSchedule: series_terms must be >= 500");
  if (cdf_grid_size < 16) throw std::invalid_argument("RotationSchedule: cdf_grid_size too small");
}

double sigma_of_t(double t, const RotationSchedule& sched) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("sigma_of_t: t must lie in [0, 1]");
  if (t == 0.0) return sched.sigma_min;
  if (t == 1.0) return sched.sigma_max;
  return std::pow(sched.sigma_min, 1.0 - t) * std::pow(sched.sigma_max, t);
}

double igso3_density_series(double omega, double sigma2, int terms) {
  require_sigma2(sigma2, "igso3_density_series");
  const double half = omega / 2.0;
  const double sh = std::sin(half);
  double total = 0.0;
  for (int l = 0; l <= terms; ++l) {
    const double ll = static_cast<double>(l);
    const double w = (2.0 * ll + 1.0) * std::exp(-ll * (ll + 1.0) * sigma2 / 2.0);
    if (std::abs(sh) < 1e-12) {
      total += w * (2.0 * ll + 1.0);
    } else {
      total += w * std::sin((ll + 0.5) * omega) / sh;
    }
    if (w < 1e-40) break;
  }
  return total;
}

double igso3_density(double omega, double sigma2, int terms) {
  require_sigma2(sigma2, "igso3_density");
  omega = std::clamp(omega, 0.0, kPi);
  if (sigma2 <= kResummedMaxSigma2) return resummed_density(omega, sigma2);
  return series_in_c(std::cos(omega), sigma2, terms).f;
}

double igso3_dlog_density(double omega, double sigma2, int terms) {
  require_sigma2(sigma2, "igso3_dlog_density");
  omega = std::clamp(omega, 0.0, kPi);
  if (sigma2 <= kResummedMaxSigma2) {
    if (omega < 0.1) return omega * q_over_w(omega) - omega / sigma2;
    if (omega > kPi - 0.5) return near_pi_coefficient(kPi - omega, sigma2).value * std::sin(omega);
    double g, gp;
    resummed_g(omega, sigma2, g, gp);
    return g;
  }
  const SeriesC s = series_in_c(std::cos(omega), sigma2, terms);
  return -std::sin(omega) * s.fc / s.f;
}

ScoreCoefficient igso3_score_coefficient(double cos_omega, double sigma2, int terms) {
  require_sigma2(sigma2, "igso3_score_coefficient");
  const double c = std::clamp(cos_omega, -1.0, 1.0);
  if (sigma2 > kResummedMaxSigma2) {
    const SeriesC s = series_in_c(c, sigma2, terms);
    const double ratio = s.fc / s.f;
    return {-ratio, -(s.fcc / s.f - ratio * ratio)};
  }
  const double omega = std::acos(c);
  if (omega > kPi - 0.5) return near_pi_coefficient(std::acos(-c), sigma2);
  return resummed_coefficient_at(omega, sigma2);
}

Igso3AngleSampler::Igso3AngleSampler(double sigma2, int grid_size, int terms) : sigma2_(sigma2) {
  require_sigma2(sigma2, "Igso3AngleSampler");
  if (grid_size < 16) throw std::invalid_argument("Igso3AngleSampler: grid_size too small");
  // Mass beyond 12 sigma is below 1e-30; tighten the grid there for small sigma.
  const double omega_max = std::min(kPi, 12.0 * std::sqrt(sigma2));
  grid_.resize(static_cast<std::size_t>(grid_size));
  cdf_.assign(grid_.size(), 0.0);
  std::vector<double> density(grid_.size());
  for (std::size_t k = 0; k < grid_.size(); ++k) {
    const double w = omega_max * static_cast<double>(k) / static_cast<double>(grid_.size() - 1);
    grid_[k] = w;
    density[k] = igso3_density(w, sigma2, terms) * (1.0 - std::cos(w)) / kPi;
  }
  for (std::size_t k = 1; k < grid_.size(); ++k) {
    cdf_[k] = cdf_[k - 1] + 0.5 * (density[k] + density[k - 1]) * (grid_[k] - grid_[k - 1]);
  }
  const double total = cdf_.back();
  if (!(total > 0.0)) throw std::runtime_error("Igso3AngleSampler: degenerate angle distribution");
  for (double& v : cdf_) v /= total;
}

double Igso3AngleSampler::angle_for_quantile(double u) const {
  u = std::clamp(u, 0.0, 1.0);
  const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.begin()) return grid_.front();
  if (it == cdf_.end()) return grid_.back();
  const std::size_t hi = static_cast<std::size_t>(it - cdf_.begin());
  const std::size_t lo = hi - 1;
  const double span = cdf_[hi] - cdf_[lo];
  const double frac = span > 0.0 ? (u - cdf_[lo]) / span : 0.0;
  return grid_[lo] + frac * (grid_[hi] - grid_[lo]);
}

double Igso3AngleSampler::cdf(double omega) const {
  if (omega <= grid_.front()) return 0.0;
  if (omega >= grid_.back()) return 1.0;
  const auto it = std::upper_bound(grid_.begin(), grid_.end(), omega);
  const std::size_t hi = static_cast<std::size_t>(it - grid_.begin());
  const std::size_t lo = hi - 1;
  const double frac = (omega - grid_[lo]) / (grid_[hi] - grid_[lo]);
  return cdf_[lo] + frac * (cdf_[hi] - cdf_[lo]);
}

Rotation sample_igso3(const Rotation& r0, const Igso3AngleSampler& sampler, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double omega = sampler.angle_for_quantile(uniform(rng));
  const Vec3 axis = random_unit_vector(rng);
  return r0 * exp_so3(axis * omega);
}

Rotation sample_igso3(const Rotation& r0, double sigma2, Rng& rng) {
  // Samplers are cheap to reuse and deterministic, so keep a few per thread.
  thread_local std::map<double, std::shared_ptr<const Igso3AngleSampler>> cache;
  auto it = cache.find(sigma2);
  if (it == cache.end()) {
    if (cache.size() >= 32) cache.clear();
    it = cache.emplace(sigma2, std::make_shared<const Igso3AngleSampler>(sigma2)).first;
  }
  return sample_igso3(r0, *it->second, rng);
}

Vec3 rot_score(const Rotation& r_t, const Rotation& r_0, double sigma2) {
  require_sigma2(sigma2, "rot_score");
  const Mat3 rel = r_0.matrix().transpose() * r_t.matrix();
  const double c = 0.5 * (rel.trace() - 1.0);
  return igso3_score_coefficient(c, sigma2).value * vee(rel);
}

Vec3 trans_score(const Vec3& x_t, const Vec3& x_0, double t) {
  if (!(t > 0.0)) throw std::invalid_argument("trans_score: t must be positive");
  const double decay = std::exp(-t / 2.0);
  return -(x_t - decay * x_0) / (1.0 - std::exp(-t));
}

double igso3_expected_score_norm2(double sigma2, int quadrature_points) {
  require_sigma2(sigma2, "igso3_expected_score_norm2");
  const int n = quadrature_points % 2 == 0 ? quadrature_points : quadrature_points + 1;
  const double omega_max = std::min(kPi, 12.0 * std::sqrt(sigma2));
  const double h = omega_max / n;
  double num = 0.0;
  double den = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double w = h * k;
    const double weight = (k == 0 || k == n) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    const double p = igso3_density(w, sigma2) * (1.0 - std::cos(w)) / kPi;
    const double g = igso3_dlog_density(w, sigma2);
    num += weight * g * g * p;
    den += weight * p;
  }
  return num / den;
}

}  // namespace fourdfold

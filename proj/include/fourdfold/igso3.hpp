#pragma once

// Isotropic Gaussian on SO(3) (the Brownian-motion transition kernel on the
// rotation group), its angle distribution and score, plus the
// Ornstein-Uhlenbeck translation kernel.
//
// Density convention: f(w; s2) is taken with respect to the Haar measure, so
// the rotation angle w has density f(w; s2) * (1 - cos w) / pi on [0, pi].
//
//   f(w; s2) = sum_l (2l+1) exp(-l(l+1) s2 / 2) sin((l+1/2) w) / sin(w/2)
//
// For small s2 the series cancels catastrophically in the tails, so it is
// evaluated through the equivalent Poisson-resummed form
//
//   f(w; s2) = e^{s2/8} sqrt(2 pi) / s^3 * sum_k (-1)^k (w - 2 pi k)
//              exp(-(w - 2 pi k)^2 / (2 s2)) / sin(w/2)
//
// which converges in a handful of windings k.

#include "fourdfold/geom.hpp"

#include <memory>
#include <vector>

namespace fourdfold {

struct RotationSchedule {
  double sigma_min = 0.1;  // radians
  double sigma_max = 1.5;  // radians
  int series_terms = 1000;
  int cdf_grid_size = 2048;

  void validate() const;
};

/// Geometric interpolation sigma_min^(1-t) * sigma_max^t, t in [0, 1].
double sigma_of_t(double t, const RotationSchedule& sched);
inline double sigma2_of_t(double t, const RotationSchedule& sched) {
  const double s = sigma_of_t(t, sched);
  return s * s;
}

/// Truncated-series density (the defining form). No representation switch.
double igso3_density_series(double omega, double sigma2, int terms = 1000);

/// Density f(omega; sigma2), omega in [0, pi]. Switches to the resummed form
/// for sigma2 <= 0.5 where the series loses precision.
double igso3_density(double omega, double sigma2, int terms = 1000);

/// d/domega log f(omega; sigma2).
double igso3_dlog_density(double omega, double sigma2, int terms = 1000);

/// Score coefficient as a function of c = cos(omega):
///   value = -(d/dc log f), slope = d value / dc.
/// The rotation score at R_t given R_0 is value * vee(R_0^T R_t), which is
/// smooth everywhere including omega = 0 and omega = pi.
struct ScoreCoefficient {
  double value = 0.0;
  double slope = 0.0;
};
ScoreCoefficient igso3_score_coefficient(double cos_omega, double sigma2, int terms = 1000);

/// Inverse-CDF sampler for the rotation angle at a fixed sigma2.
class Igso3AngleSampler {
 public:
  Igso3AngleSampler(double sigma2, int grid_size = 2048, int terms = 1000);

  double sigma2() const { return sigma2_; }
  /// Maps u in [0, 1] to an angle.
  double angle_for_quantile(double u) const;
  /// Tabulated CDF of the angle.
  double cdf(double omega) const;

  const std::vector<double>& grid() const { return grid_; }

 private:
  double sigma2_;
  std::vector<double> grid_;
  std::vector<double> cdf_;
};

/// R = r0 * exp(omega * u), omega from the angle law, u uniform on S^2.
Rotation sample_igso3(const Rotation& r0, double sigma2, Rng& rng);
Rotation sample_igso3(const Rotation& r0, const Igso3AngleSampler& sampler, Rng& rng);

/// Riemannian gradient of log p(R_t | R_0) at r_t in body coordinates.
Vec3 rot_score(const Rotation& r_t, const Rotation& r_0, double sigma2);

/// Conditional score of the OU kernel X_t | X_0 ~ N(e^{-t/2} x0, (1 - e^{-t}) I).
Vec3 trans_score(const Vec3& x_t, const Vec3& x_0, double t);

/// E || rot score ||^2 under the kernel at sigma2, by quadrature over the angle law.
double igso3_expected_score_norm2(double sigma2, int quadrature_points = 4096);

}  // namespace fourdfold

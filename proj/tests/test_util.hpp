#pragma once

#include "fourdfold/geom.hpp"
#include "fourdfold/igso3.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace fourdfold::testing {

// Composite Simpson on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

// One-sample Kolmogorov-Smirnov statistic against a CDF.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double f = cdf(xs[k]);
    d = std::max({d, std::abs(f - k / n), std::abs((k + 1) / n - f)});
  }
  return d;
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

// Angle CDF by fine Simpson quadrature of the defining series.
struct QuadratureCdf {
  std::vector<double> grid, cdf;
  QuadratureCdf(double sigma2, int panels) {
    const double h = std::numbers::pi / panels;
    grid.push_back(0.0);
    cdf.push_back(0.0);
    auto p = [&](double w) { return igso3_density_series(w, sigma2) * (1.0 - std::cos(w)) / std::numbers::pi; };
    for (int k = 0; k < panels; ++k) {
      const double a = k * h;
      grid.push_back(a + h);
      cdf.push_back(cdf.back() + simpson(p, a, a + h, 8));
    }
  }
  double operator()(double w) const {
    const auto it = std::upper_bound(grid.begin(), grid.end(), w);
    if (it == grid.end()) return cdf.back();
    const std::size_t hi = static_cast<std::size_t>(it - grid.begin());
    const double f = (w - grid[hi - 1]) / (grid[hi] - grid[hi - 1]);
    return cdf[hi - 1] + f * (cdf[hi] - cdf[hi - 1]);
  }
};

inline double max_abs(const Mat3& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace fourdfold::testing

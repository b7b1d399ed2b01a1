#pragma once

#include "fourdfold/protein.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace fourdfold {

/// Least-squares rigid transform (det +1) mapping p onto q.
/// Throws std::invalid_argument for M < 3 and DegenerateGeometry for rank < 2.
Rigid kabsch(const std::vector<Vec3>& p, const std::vector<Vec3>& q);

double rmsd(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt, bool align = true);

/// Cα RMSE in Angstrom; with align, pred is superposed onto gt first.
double ca_rmse(const ProteinState& pred, const ProteinState& gt, bool align = true);

struct MetricReport {
  std::vector<double> per_step;                 // Angstrom, averaged over draws
  std::vector<std::pair<int, double>> r_table;  // (s, R_s)
  int n_samples = 0;
  bool aligned = true;
  bool truncated = false;  // some requested s exceeded the trajectory length
};

inline const std::vector<int> kDefaultRValues = {2, 6, 10, 16, 32};

/// R_s = mean of per_step over the first s steps, for every s that fits.
MetricReport r_table_from_per_step(const std::vector<double>& per_step, const std::vector<int>& s_values, int n_samples,
                                   bool aligned);

/// Averages per-step Cα RMSE over independent sampler draws of the same window.
MetricReport r_table(const std::vector<Trajectory>& pred_draws, const Trajectory& gt,
                     const std::vector<int>& s_values = kDefaultRValues, bool align = true);

struct TicaModel {
  int lag = 10;
  Eigen::VectorXd mean;
  Eigen::MatrixXd projection;  // D x k, columns are generalized eigenvectors
  Eigen::VectorXd eigenvalues;  // descending
};

/// Symmetrized time-lagged covariance estimator with C_0 + eps I regularization.
TicaModel tica_fit(const Eigen::MatrixXd& features, int lag = 10, int k = 2, double eps = 1e-6);
Eigen::MatrixXd tica_project(const TicaModel& model, const Eigen::MatrixXd& features);

/// L x 3N flattened Cα after aligning every frame onto the first.
Eigen::MatrixXd tica_features(const Trajectory& traj);

nlohmann::json report_to_json(const MetricReport& report, const nlohmann::json& settings);
std::string report_to_csv(const MetricReport& report);

struct ScatterSeries {
  std::string label;
  std::string color;
  Eigen::MatrixXd points;  // rows of (x, y)
};

std::string scatter_svg(const std::vector<ScatterSeries>& series, const std::string& x_label,
                        const std::string& y_label);

/// Counts on a bins x bins grid spanning the joint range of all series.
nlohmann::json histogram2d_json(const std::vector<ScatterSeries>& series, int bins = 40);

}  // namespace fourdfold

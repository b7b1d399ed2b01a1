#include "fourdfold/eval.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fourdfold {

Rigid kabsch(const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kabsch: point counts differ");
  if (p.size() < 3) throw std::invalid_argument("kabsch: need at least 3 points");
  Vec3 pc = Vec3::Zero(), qc = Vec3::Zero();
  for (std::size_t k = 0; k < p.size(); ++k) {
    pc += p[k];
    qc += q[k];
  }
  pc /= static_cast<double>(p.size());
  qc /= static_cast<double>(q.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t k = 0; k < p.size(); ++k) h += (p[k] - pc) * (q[k] - qc).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv[0] > 1e-12) || sv[1] <= 1e-10 * sv[0]) throw DegenerateGeometry("kabsch: point set has rank < 2");
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = v * d * u.transpose();
  return {Rotation(r), qc - r * pc};
}

double rmsd(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt, bool align) {
  if (pred.size() != gt.size() || pred.empty()) throw std::invalid_argument("rmsd: length mismatch");
  Rigid t;
  if (align) t = kabsch(pred, gt);
  double sum = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) sum += (apply(t, pred[k]) - gt[k]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(pred.size()));
}

double ca_rmse(const ProteinState& pred, const ProteinState& gt, bool align) {
  if (pred.size() != gt.size()) throw std::invalid_argument("ca_rmse: length mismatch");
  if (pred.sequence != gt.sequence) throw std::invalid_argument("ca_rmse: sequences differ");
  return rmsd(ca_coords(pred), ca_coords(gt), align);
}

MetricReport r_table_from_per_step(const std::vector<double>& per_step, const std::vector<int>& s_values, int n_samples,
                                   bool aligned) {
  MetricReport rep;
  rep.per_step = per_step;
  rep.n_samples = n_samples;
  rep.aligned = aligned;
  for (const int s : s_values) {
    if (s < 1) throw std::invalid_argument("r_table: s values must be positive");
    if (static_cast<std::size_t>(s) > per_step.size()) {
      rep.truncated = true;
      continue;
    }
    const double sum = std::accumulate(per_step.begin(), per_step.begin() + s, 0.0);
    rep.r_table.emplace_back(s, sum / s);
  }
  return rep;
}

MetricReport r_table(const std::vector<Trajectory>& pred_draws, const Trajectory& gt, const std::vector<int>& s_values,
                     bool align) {
  if (pred_draws.empty()) throw std::invalid_argument("r_table: no predicted draws");
  std::size_t steps = gt.size();
  for (const auto& d : pred_draws) steps = std::min(steps, d.size());
  std::vector<double> per_step(steps, 0.0);
  for (const auto& d : pred_draws) {
    for (std::size_t s = 0; s < steps; ++s) per_step[s] += ca_rmse(d.states[s], gt.states[s], align);
  }
  for (double& v : per_step) v /= static_cast<double>(pred_draws.size());
  return r_table_from_per_step(per_step, s_values, static_cast<int>(pred_draws.size()), align);
}

TicaModel tica_fit(const Eigen::MatrixXd& x, int lag, int k, double eps) {
  const Eigen::Index l = x.rows();
  const Eigen::Index d = x.cols();
  if (lag < 1 || k < 1 || k > d) throw std::invalid_argument("tica_fit: require lag >= 1 and 1 <= k <= D");
  if (l <= lag + d) throw std::invalid_argument("tica_fit: need more frames than lag + feature dimension");
  TicaModel model;
  model.lag = lag;
  model.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd xc = x.rowwise() - model.mean.transpose();
  const Eigen::Index m = l - lag;
  const Eigen::MatrixXd x0 = xc.topRows(m);
  const Eigen::MatrixXd x1 = xc.bottomRows(m);
  const double scale = 1.0 / (2.0 * static_cast<double>(m));
  Eigen::MatrixXd c0 = scale * (x0.transpose() * x0 + x1.transpose() * x1);
  Eigen::MatrixXd ct = scale * (x0.transpose() * x1 + x1.transpose() * x0);
  c0 += eps * Eigen::MatrixXd::Identity(d, d);
  Eigen::LLT<Eigen::MatrixXd> llt(c0);
  if (llt.info() != Eigen::Success) throw std::runtime_error("tica_fit: instantaneous covariance is rank deficient");
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(ct, c0);
  if (solver.info() != Eigen::Success) throw std::runtime_error("tica_fit: eigensolver failed");
  // Eigen returns ascending eigenvalues.
  model.eigenvalues.resize(k);
  model.projection.resize(d, k);
  for (int c = 0; c < k; ++c) {
    const Eigen::Index src = d - 1 - c;
    model.eigenvalues[c] = solver.eigenvalues()[src];
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    // Fix the sign so the largest-magnitude loading is positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    model.projection.col(c) = v;
  }
  return model;
}

Eigen::MatrixXd tica_project(const TicaModel& model, const Eigen::MatrixXd& features) {
  if (features.cols() != model.mean.size()) throw std::invalid_argument("tica_project: feature dimension mismatch");
  return (features.rowwise() - model.mean.transpose()) * model.projection;
}

Eigen::MatrixXd tica_features(const Trajectory& traj) {
  traj.validate();
  const std::vector<Vec3> ref = ca_coords(traj.states.front());
  const std::size_t n = ref.size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(traj.size()), static_cast<Eigen::Index>(3 * n));
  for (std::size_t s = 0; s < traj.size(); ++s) {
    const std::vector<Vec3> ca = ca_coords(traj.states[s]);
    const Rigid t = kabsch(ca, ref);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 p = apply(t, ca[i]);
      for (int c = 0; c < 3; ++c) out(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(3 * i + c)) = p[c];
    }
  }
  return out;
}

nlohmann::json report_to_json(const MetricReport& report, const nlohmann::json& settings) {
  nlohmann::json table = nlohmann::json::object();
  for (const auto& [s, v] : report.r_table) table["R_" + std::to_string(s)] = v;
  nlohmann::json out;
  out["r_table"] = table;
  out["per_step"] = report.per_step;
  nlohmann::json st = settings.is_object() ? settings : nlohmann::json::object();
  st["aligned"] = report.aligned;
  st["n_samples"] = report.n_samples;
  st["truncated"] = report.truncated;
  st["metric"] = report.aligned ? "kabsch-aligned CA RMSE (Angstrom)" : "unaligned CA RMSE (Angstrom)";
  out["settings"] = st;
  return out;
}

std::string report_to_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "step,rmse\n";
  char buf[64];
  for (std::size_t s = 0; s < report.per_step.size(); ++s) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", s + 1, report.per_step[s]);
    out << buf;
  }
  out << "\nmetric,value\n";
  for (const auto& [s, v] : report.r_table) {
    std::snprintf(buf, sizeof(buf), "R_%d,%.6f\n", s, v);
    out << buf;
  }
  return out.str();
}

namespace {

struct Bounds {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
};

Bounds joint_bounds(const std::vector<ScatterSeries>& series) {
  Bounds b{1e300, -1e300, 1e300, -1e300};
  for (const auto& s : series) {
    for (Eigen::Index r = 0; r < s.points.rows(); ++r) {
      b.x0 = std::min(b.x0, s.points(r, 0));
      b.x1 = std::max(b.x1, s.points(r, 0));
      b.y0 = std::min(b.y0, s.points(r, 1));
      b.y1 = std::max(b.y1, s.points(r, 1));
    }
  }
  if (b.x0 > b.x1) return Bounds{};
  if (b.x1 - b.x0 < 1e-12) b.x1 = b.x0 + 1.0;
  if (b.y1 - b.y0 < 1e-12) b.y1 = b.y0 + 1.0;
  return b;
}

}  // namespace

std::string scatter_svg(const std::vector<ScatterSeries>& series, const std::string& x_label,
                        const std::string& y_label) {
  constexpr double kW = 480, kH = 480, kPad = 50;
  const Bounds b = joint_bounds(series);
  auto sx = [&](double x) { return kPad + (x - b.x0) / (b.x1 - b.x0) * (kW - 2 * kPad); };
  auto sy = [&](double y) { return kH - kPad - (y - b.y0) / (b.y1 - b.y0) * (kH - 2 * kPad); };
  std::ostringstream out;
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf), "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"black\"/>\n",
                kPad, kPad, kW - 2 * kPad, kH - 2 * kPad);
  out << buf;
  for (const auto& s : series) {
    for (Eigen::Index r = 0; r < s.points.rows(); ++r) {
      std::snprintf(buf, sizeof(buf), "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2\" fill=\"%s\" fill-opacity=\"0.5\"/>\n",
                    sx(s.points(r, 0)), sy(s.points(r, 1)), s.color.c_str());
      out << buf;
    }
  }
  double ly = kPad + 14;
  for (const auto& s : series) {
    std::snprintf(buf, sizeof(buf), "<text x=\"%g\" y=\"%g\" font-size=\"12\" fill=\"%s\">%s</text>\n", kW - kPad - 90,
                  ly, s.color.c_str(), s.label.c_str());
    out << buf;
    ly += 16;
  }
  std::snprintf(buf, sizeof(buf), "<text x=\"%g\" y=\"%g\" font-size=\"13\" text-anchor=\"middle\">%s</text>\n", kW / 2,
                kH - 15, x_label.c_str());
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"15\" y=\"%g\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 15 %g)\">%s</text>\n",
                kH / 2, kH / 2, y_label.c_str());
  out << buf << "</svg>\n";
  return out.str();
}

nlohmann::json histogram2d_json(const std::vector<ScatterSeries>& series, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram2d_json: bins must be positive");
  const Bounds b = joint_bounds(series);
  nlohmann::json out;
  out["x_range"] = {b.x0, b.x1};
  out["y_range"] = {b.y0, b.y1};
  out["bins"] = bins;
  nlohmann::json hs = nlohmann::json::object();
  for (const auto& s : series) {
    std::vector<std::vector<int>> counts(static_cast<std::size_t>(bins), std::vector<int>(static_cast<std::size_t>(bins), 0));
    for (Eigen::Index r = 0; r < s.points.rows(); ++r) {
      const int ix = std::clamp(static_cast<int>((s.points(r, 0) - b.x0) / (b.x1 - b.x0) * bins), 0, bins - 1);
      const int iy = std::clamp(static_cast<int>((s.points(r, 1) - b.y0) / (b.y1 - b.y0) * bins), 0, bins - 1);
      ++counts[static_cast<std::size_t>(ix)][static_cast<std::size_t>(iy)];
    }
    hs[s.label] = counts;
  }
  out["counts"] = hs;
  return out;
}

}  // namespace fourdfold

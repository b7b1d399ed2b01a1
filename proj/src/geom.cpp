#include "fourdfold/geom.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fourdfold {

namespace {
constexpr double kPi = std::numbers::pi;
}

double Rotation::angle() const {
  const Vec3 s = vee(m_);  // sin(angle) * axis
  const double c = 0.5 * (m_.trace() - 1.0);
  return std::atan2(s.norm(), c);
}

Quat Rotation::to_quaternion() const {
  Eigen::Quaterniond q(m_);
  q.normalize();
  Quat out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0.0) out = -out;
  return out;
}

bool Rotation::is_valid(double tol) const {
  const double ortho = (m_.transpose() * m_ - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(m_.determinant() - 1.0) <= tol;
}

Rotation Rotation::orthonormalized() const {
  Eigen::JacobiSVD<Mat3> svd(m_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return Rotation(u * v.transpose());
}

Rigid compose(const Rigid& a, const Rigid& b) {
  return {a.rot * b.rot, a.rot * b.trans + a.trans};
}

Rigid invert(const Rigid& t) {
  const Rotation inv = t.rot.inverse();
  return {inv, -(inv * t.trans)};
}

Vec3 apply(const Rigid& t, const Vec3& p) { return t.rot * p + t.trans; }

Rotation quat_to_rot(double a, double b, double c, double d) {
  const double norm = std::sqrt(a * a + b * b + c * c + d * d);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw std::invalid_argument("quat_to_rot: quaternion must be finite and nonzero");
  }
  a /= norm;
  b /= norm;
  c /= norm;
  d /= norm;
  Mat3 m;
  m << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
      2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b),
      2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d;
  return Rotation(m);
}

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) { return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)) * 0.5; }

Rotation exp_so3(const Vec3& v) {
  const double theta = v.norm();
  const Mat3 k = hat(v);
  double a;  // sin(theta)/theta
  double b;  // (1 - cos(theta))/theta^2
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
  }
  return Rotation(Mat3::Identity() + a * k + b * k * k);
}

Vec3 log_so3(const Rotation& r) {
  const Mat3& m = r.matrix();
  const Vec3 s = vee(m);  // sin(w) * axis
  const double sin_w = s.norm();
  const double cos_w = std::clamp(0.5 * (m.trace() - 1.0), -1.0, 1.0);
  const double w = std::atan2(sin_w, cos_w);

  if (w < 1e-8) return s;  // w / sin(w) = 1 to double precision
  if (w < kPi - 1e-2) return s * (w / sin_w);

  // Near pi: axis from the symmetric part, B = cos(w) I + (1 - cos(w)) u u^T.
  const Mat3 sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> eig(sym);
  Vec3 axis = eig.eigenvectors().col(2).normalized();  // largest eigenvalue
  if (sin_w > 1e-14) {
    if (axis.dot(s) < 0.0) axis = -axis;
  } else {
    for (int k = 0; k < 3; ++k) {
      if (std::abs(axis[k]) > 1e-12) {
        if (axis[k] < 0.0) axis = -axis;
        break;
      }
    }
  }
  return axis * w;
}

double geodesic_angle(const Rotation& a, const Rotation& b) { return (a.inverse() * b).angle(); }

Vec3 random_unit_vector(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(normal(rng), normal(rng), normal(rng));
  } while (v.norm() < 1e-12);
  return v.normalized();
}

Rotation random_rotation(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  double a, b, c, d;
  do {
    a = normal(rng);
    b = normal(rng);
    c = normal(rng);
    d = normal(rng);
  } while (a * a + b * b + c * c + d * d < 1e-12);
  return quat_to_rot(a, b, c, d);
}

Rigid random_rigid(Rng& rng, double translation_scale) {
  std::normal_distribution<double> normal(0.0, translation_scale);
  return {random_rotation(rng), Vec3(normal(rng), normal(rng), normal(rng))};
}

std::vector<Rigid> FrameGrid::step(std::size_t s) const {
  if (s >= s_) throw std::out_of_range("FrameGrid::step");
  return {frames_.begin() + static_cast<std::ptrdiff_t>(s * n_),
          frames_.begin() + static_cast<std::ptrdiff_t>((s + 1) * n_)};
}

void FrameGrid::set_step(std::size_t s, const std::vector<Rigid>& frames) {
  if (s >= s_ || frames.size() != n_) throw std::invalid_argument("FrameGrid::set_step: shape mismatch");
  std::copy(frames.begin(), frames.end(), frames_.begin() + static_cast<std::ptrdiff_t>(s * n_));
}

}  // namespace fourdfold

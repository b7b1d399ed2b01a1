#pragma once

// Rotation and rigid-transform algebra on SO(3) / SE(3).
//
// Tangent-space convention used throughout the project: a tangent vector v
// at rotation R denotes the perturbation R * exp(hat(v)) (left-invariant,
// body-frame coordinates). Scores, losses and the sampler all use it.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <vector>

namespace fourdfold {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Vector4d;  // (w, x, y, z)

using Rng = std::mt19937_64;

class DegenerateGeometry : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}
  explicit Rotation(const Mat3& m) : m_(m) {}

  static Rotation identity() { return Rotation(); }

  const Mat3& matrix() const { return m_; }

  Rotation operator*(const Rotation& other) const { return Rotation(m_ * other.m_); }
  Vec3 operator*(const Vec3& p) const { return m_ * p; }

  Rotation inverse() const { return Rotation(m_.transpose()); }

  /// Rotation angle in [0, pi].
  double angle() const;

  /// Unit quaternion (w, x, y, z) with w >= 0.
  Quat to_quaternion() const;

  /// Orthonormal with det +1 within tol.
  bool is_valid(double tol = 1e-8) const;

  /// Nearest rotation (polar decomposition); use after accumulating round-off.
  Rotation orthonormalized() const;

 private:
  Mat3 m_;
};

struct Rigid {
  Rotation rot;
  Vec3 trans = Vec3::Zero();

  static Rigid identity() { return {}; }
};

Rigid compose(const Rigid& a, const Rigid& b);
Rigid invert(const Rigid& t);
Vec3 apply(const Rigid& t, const Vec3& p);

/// Rotation of the normalized quaternion (a, b, c, d) = (w, x, y, z).
/// Throws std::invalid_argument for the all-zero quaternion.
Rotation quat_to_rot(double a, double b, double c, double d);

Mat3 hat(const Vec3& v);
/// Axial vector of the antisymmetric part of m.
Vec3 vee(const Mat3& m);

Rotation exp_so3(const Vec3& v);

/// Principal axis-angle vector, norm in [0, pi].
Vec3 log_so3(const Rotation& r);

/// Geodesic angle of a^-1 b.
double geodesic_angle(const Rotation& a, const Rotation& b);

Vec3 random_unit_vector(Rng& rng);
Rotation random_rotation(Rng& rng);  // Haar-uniform
Rigid random_rigid(Rng& rng, double translation_scale = 10.0);

/// Rigid transforms laid out as S time steps by N residues (row-major in s).
class FrameGrid {
 public:
  FrameGrid() = default;
  FrameGrid(std::size_t s_count, std::size_t n_count)
      : s_(s_count), n_(n_count), frames_(s_count * n_count) {
    if (s_count == 0 || n_count == 0) throw std::invalid_argument("FrameGrid: empty shape");
  }

  std::size_t s_count() const { return s_; }
  std::size_t n_count() const { return n_; }
  std::size_t size() const { return frames_.size(); }

  Rigid& at(std::size_t s, std::size_t i) { return frames_.at(s * n_ + i); }
  const Rigid& at(std::size_t s, std::size_t i) const { return frames_.at(s * n_ + i); }

  std::vector<Rigid>& data() { return frames_; }
  const std::vector<Rigid>& data() const { return frames_; }

  std::vector<Rigid> step(std::size_t s) const;
  void set_step(std::size_t s, const std::vector<Rigid>& frames);

 private:
  std::size_t s_ = 0;
  std::size_t n_ = 0;
  std::vector<Rigid> frames_;
};

}  // namespace fourdfold

#pragma once
// Tensor counterparts of the geom/igso3 primitives. Rotations are [..., 3, 3],
// translations [..., 3]. All functions are differentiable through autograd.
#include "fourdfold/geom.hpp"
#include "fourdfold/igso3.hpp"

#include <torch/torch.h>

namespace fourdfold {

/// Translations enter the network and the diffusion in units of 0.1 * Angstrom^-1 (nm).
inline constexpr double kTranslationScale = 0.1;

struct FrameTensors {
  torch::Tensor rot;    // [..., 3, 3]
  torch::Tensor trans;  // [..., 3]
};

/// Unit quaternion (w, x, y, z) in the last axis to rotation matrices.
torch::Tensor quat_to_rot_t(const torch::Tensor& q);

/// (1, b, c, d) / sqrt(1 + b^2 + c^2 + d^2) with the real part pinned to one.
torch::Tensor rot_from_bcd(const torch::Tensor& bcd);

torch::Tensor rigid_apply(const torch::Tensor& rot, const torch::Tensor& trans, const torch::Tensor& points);
torch::Tensor rigid_invert_apply(const torch::Tensor& rot, const torch::Tensor& trans, const torch::Tensor& points);
FrameTensors rigid_compose(const FrameTensors& a, const FrameTensors& b);

/// Axial vector of the antisymmetric part of m.
torch::Tensor vee_t(const torch::Tensor& m);

/// IGSO(3) score coefficient k(c) = -d log f / dc, elementwise; backward uses the analytic slope.
torch::Tensor igso3_score_coefficient_t(const torch::Tensor& cos_omega, double sigma2);

/// Left-invariant score of the IGSO(3) kernel at r_t centred on r_0: k(c) vee(r_0^T r_t).
torch::Tensor rot_score_t(const torch::Tensor& r_t, const torch::Tensor& r_0, double sigma2);

/// Ornstein-Uhlenbeck conditional score, -(x_t - e^{-t/2} x_0) / (1 - e^{-t}).
torch::Tensor trans_score_t(const torch::Tensor& x_t, const torch::Tensor& x_0, double t);

/// FrameGrid <-> tensors. `scale` multiplies translations on the way in and divides on the way out.
FrameTensors frames_to_tensors(const FrameGrid& grid, double scale, torch::Dtype dtype = torch::kFloat64);
FrameTensors frames_to_tensors(const std::vector<Rigid>& frames, double scale, torch::Dtype dtype = torch::kFloat64);
/// rot [S, N, 3, 3], trans [S, N, 3]. Rotations are re-orthonormalized.
FrameGrid tensors_to_frames(const FrameTensors& t, double scale);

}  // namespace fourdfold

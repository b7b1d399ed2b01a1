#pragma once
// Forward noising of frame grids, score targets and the training losses.
//
// Inside this module translations live in scaled units (kTranslationScale
// times Angstrom). Atom-level auxiliary losses are evaluated in Angstrom.
#include "fourdfold/igso3.hpp"
#include "fourdfold/protein.hpp"
#include "fourdfold/torch_geom.hpp"

#include <torch/torch.h>

#include <stdexcept>
#include <vector>

namespace fourdfold {

class DiffusionSchedule {
 public:
  explicit DiffusionSchedule(RotationSchedule rot = {}, int lambda_grid = 64);

  const RotationSchedule& rotation() const { return rot_; }
  double sigma2(double t) const { return sigma2_of_t(t, rot_); }

  /// 1 / E||rot score||^2, log-linear interpolation over the t grid.
  double lambda_rot(double t) const;
  /// (1 - e^{-t}) / e^{-t/2}.
  static double lambda_trans(double t);

  const std::vector<double>& grid_t() const { return grid_t_; }
  const std::vector<double>& grid_expected_norm2() const { return grid_e2_; }

 private:
  RotationSchedule rot_;
  std::vector<double> grid_t_;
  std::vector<double> grid_e2_;
};

struct NoisedSample {
  double t = 0.0;
  FrameGrid noisy;  // scaled translations
  FrameGrid clean;  // scaled translations
  std::vector<Vec3> rot_scores;    // S*N, row-major in s
  std::vector<Vec3> trans_scores;  // S*N
};

/// `clean` in Angstrom; t in (0, 1].
NoisedSample forward_noise(const FrameGrid& clean, double t, const DiffusionSchedule& sched, Rng& rng);

struct ScoreGrid {
  std::vector<Vec3> rot;
  std::vector<Vec3> trans;
};

/// Both grids in scaled units.
ScoreGrid score_from_prediction(const FrameGrid& pred_clean, const FrameGrid& noisy, double t,
                                const DiffusionSchedule& sched);

/// Differentiable counterpart; returns (rot [..., 3], trans [..., 3]).
std::pair<torch::Tensor, torch::Tensor> score_from_prediction_t(const FrameTensors& pred_clean,
                                                                const FrameTensors& noisy, double t,
                                                                const DiffusionSchedule& sched);

/// Mean over elements of lambda_t * ||target - pred||^2 for each component.
std::pair<torch::Tensor, torch::Tensor> dsm_loss(const torch::Tensor& pred_rot, const torch::Tensor& pred_trans,
                                                 const torch::Tensor& target_rot, const torch::Tensor& target_trans,
                                                 double t, const DiffusionSchedule& sched);

/// (sin, cos) pairs [N, 7, 2] and mask [N, 7] as 0/1.
std::pair<torch::Tensor, torch::Tensor> torsions_to_tensor(const std::vector<TorsionAngles>& torsions,
                                                           torch::Dtype dtype = torch::kFloat64);

/// pred/gt/alt [..., N, 7, 2], mask [..., N, 7]. Mean over leading axes of
/// (1/N) sum_i min(||a_i - gt_i||^2, ||a_i - alt_i||^2) on masked-in pairs.
torch::Tensor torsion_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& alt,
                           const torch::Tensor& mask);

/// Backbone atoms N, CA, C, O [..., N, 4, 3] from frames (Angstrom) and psi (sin, cos) [..., N, 2].
/// O rides on the psi group.
torch::Tensor backbone_atoms_t(const torch::Tensor& seq, const FrameTensors& frames, const torch::Tensor& psi,
                               const RigidGroupTemplates& templates = default_templates());

inline constexpr double kContactCutoff = 6.0;  // Angstrom, strict

struct AuxLosses {
  torch::Tensor l_omega;
  torch::Tensor l_2d;
  bool l2d_degenerate = false;  // some step had C <= 0 and contributed 0
};

/// pred/gt [S, N, 4, 3] in Angstrom; both terms averaged over S.
AuxLosses aux_losses(const torch::Tensor& pred_atoms, const torch::Tensor& gt_atoms);

struct LossWeights {
  double w1 = 0.25;
  double w2 = 1.0;
  double aux_gate = 0.25;  // aux terms are on for t strictly below this
};

struct LossComponents {
  torch::Tensor dsm_rot, dsm_trans, torsion, l_omega, l_2d;
};

struct LossReport {
  double dsm_rot = 0.0, dsm_trans = 0.0, torsion = 0.0, l_omega = 0.0, l_2d = 0.0, total = 0.0;
  double t = 0.0;
  bool l2d_degenerate = false;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// dsm_rot + dsm_trans + w1 1{t < gate} (l_omega + l_2d) + w2 torsion. Throws NonFiniteLoss.
std::pair<torch::Tensor, LossReport> total_loss(const LossComponents& c, double t, const LossWeights& w = {});

}  // namespace fourdfold

#include "fourdfold/diffusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace fourdfold {

namespace {

void require_time(double t, const char* who) {
  if (!(t > 0.0) || t > 1.0) throw std::invalid_argument(std::string(who) + ": t must lie in (0, 1]");
}

}  // namespace

DiffusionSchedule::DiffusionSchedule(RotationSchedule rot, int lambda_grid) : rot_(rot) {
  rot_.validate();
  if (lambda_grid < 2) throw std::invalid_argument("DiffusionSchedule: lambda_grid must be >= 2");
  grid_t_.resize(static_cast<std::size_t>(lambda_grid));
  grid_e2_.resize(grid_t_.size());
  for (int k = 0; k < lambda_grid; ++k) {
    const double t = static_cast<double>(k) / (lambda_grid - 1);
    grid_t_[static_cast<std::size_t>(k)] = t;
    grid_e2_[static_cast<std::size_t>(k)] = igso3_expected_score_norm2(sigma2_of_t(t, rot_));
  }
}

double DiffusionSchedule::lambda_rot(double t) const {
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("lambda_rot: t must lie in [0, 1]");
  const double pos = t * static_cast<double>(grid_t_.size() - 1);
  const std::size_t k = std::min(static_cast<std::size_t>(pos), grid_t_.size() - 2);
  const double f = pos - static_cast<double>(k);
  // E||score||^2 scales roughly like 1/sigma^2, which is geometric in t.
  const double log_e = (1.0 - f) * std::log(grid_e2_[k]) + f * std::log(grid_e2_[k + 1]);
  return std::exp(-log_e);
}

double DiffusionSchedule::lambda_trans(double t) {
  require_time(t, "lambda_trans");
  return (1.0 - std::exp(-t)) / std::exp(-t / 2.0);
}

NoisedSample forward_noise(const FrameGrid& clean, double t, const DiffusionSchedule& sched, Rng& rng) {
  require_time(t, "forward_noise");
  const double s2 = sched.sigma2(t);
  const Igso3AngleSampler sampler(s2, sched.rotation().cdf_grid_size, sched.rotation().series_terms);
  const double mean_scale = std::exp(-t / 2.0);
  const double sd = std::sqrt(1.0 - std::exp(-t));
  std::normal_distribution<double> normal(0.0, 1.0);

  NoisedSample out;
  out.t = t;
  out.clean = FrameGrid(clean.s_count(), clean.n_count());
  out.noisy = FrameGrid(clean.s_count(), clean.n_count());
  out.rot_scores.resize(clean.size());
  out.trans_scores.resize(clean.size());
  for (std::size_t k = 0; k < clean.size(); ++k) {
    const Rigid& c = clean.data()[k];
    const Vec3 x0 = c.trans * kTranslationScale;
    Rigid& noisy = out.noisy.data()[k];
    noisy.rot = sample_igso3(c.rot, sampler, rng);
    const double g0 = normal(rng), g1 = normal(rng), g2 = normal(rng);
    noisy.trans = mean_scale * x0 + sd * Vec3(g0, g1, g2);
    out.clean.data()[k] = Rigid{c.rot, x0};
    out.rot_scores[k] = rot_score(noisy.rot, c.rot, s2);
    out.trans_scores[k] = trans_score(noisy.trans, x0, t);
  }
  return out;
}

ScoreGrid score_from_prediction(const FrameGrid& pred_clean, const FrameGrid& noisy, double t,
                                const DiffusionSchedule& sched) {
  require_time(t, "score_from_prediction");
  if (pred_clean.s_count() != noisy.s_count() || pred_clean.n_count() != noisy.n_count()) {
    throw std::invalid_argument("score_from_prediction: grid shapes differ");
  }
  const double s2 = sched.sigma2(t);
  ScoreGrid out;
  out.rot.resize(noisy.size());
  out.trans.resize(noisy.size());
  for (std::size_t k = 0; k < noisy.size(); ++k) {
    out.rot[k] = rot_score(noisy.data()[k].rot, pred_clean.data()[k].rot, s2);
    out.trans[k] = trans_score(noisy.data()[k].trans, pred_clean.data()[k].trans, t);
  }
  return out;
}

std::pair<torch::Tensor, torch::Tensor> score_from_prediction_t(const FrameTensors& pred_clean,
                                                                const FrameTensors& noisy, double t,
                                                                const DiffusionSchedule& sched) {
  require_time(t, "score_from_prediction_t");
  return {rot_score_t(noisy.rot, pred_clean.rot, sched.sigma2(t)), trans_score_t(noisy.trans, pred_clean.trans, t)};
}

std::pair<torch::Tensor, torch::Tensor> dsm_loss(const torch::Tensor& pred_rot, const torch::Tensor& pred_trans,
                                                 const torch::Tensor& target_rot, const torch::Tensor& target_trans,
                                                 double t, const DiffusionSchedule& sched) {
  require_time(t, "dsm_loss");
  if (pred_rot.sizes() != target_rot.sizes() || pred_trans.sizes() != target_trans.sizes()) {
    throw std::invalid_argument("dsm_loss: prediction and target shapes differ");
  }
  const auto rot = (target_rot - pred_rot).pow(2).sum(-1).mean() * sched.lambda_rot(t);
  const auto trans = (target_trans - pred_trans).pow(2).sum(-1).mean() * DiffusionSchedule::lambda_trans(t);
  return {rot, trans};
}

std::pair<torch::Tensor, torch::Tensor> torsions_to_tensor(const std::vector<TorsionAngles>& torsions,
                                                           torch::Dtype dtype) {
  const int64_t n = static_cast<int64_t>(torsions.size());
  auto angles = torch::empty({n, kNumTorsions, 2}, torch::kFloat64);
  auto mask = torch::empty({n, kNumTorsions}, torch::kFloat64);
  auto a = angles.accessor<double, 3>();
  auto m = mask.accessor<double, 2>();
  for (int64_t i = 0; i < n; ++i) {
    const TorsionAngles& ta = torsions[static_cast<std::size_t>(i)];
    for (int k = 0; k < kNumTorsions; ++k) {
      a[i][k][0] = ta.angles[static_cast<std::size_t>(k)][0];
      a[i][k][1] = ta.angles[static_cast<std::size_t>(k)][1];
      m[i][k] = ta.mask[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
    }
  }
  return {angles.to(dtype), mask.to(dtype)};
}

torch::Tensor torsion_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& alt,
                           const torch::Tensor& mask) {
  if (pred.sizes() != gt.sizes() || pred.sizes() != alt.sizes()) {
    throw std::invalid_argument("torsion_loss: pred, gt and alt shapes differ");
  }
  const auto m = mask.to(pred.scalar_type());
  const auto d_gt = ((pred - gt).pow(2).sum(-1) * m).sum(-1);    // [..., N]
  const auto d_alt = ((pred - alt).pow(2).sum(-1) * m).sum(-1);  // [..., N]
  return torch::minimum(d_gt, d_alt).mean();
}

torch::Tensor backbone_atoms_t(const torch::Tensor& seq, const FrameTensors& frames, const torch::Tensor& psi,
                               const RigidGroupTemplates& templates) {
  // Per residue type: N, CA, C in the residue frame; psi group frame; O in the psi group.
  auto bb = torch::zeros({kNumResidueTypes, 3, 3}, torch::kFloat64);
  auto psi_rot = torch::zeros({kNumResidueTypes, 3, 3}, torch::kFloat64);
  auto psi_trans = torch::zeros({kNumResidueTypes, 3}, torch::kFloat64);
  auto o_local = torch::zeros({kNumResidueTypes, 3}, torch::kFloat64);
  auto bba = bb.accessor<double, 3>();
  auto pra = psi_rot.accessor<double, 3>();
  auto pta = psi_trans.accessor<double, 2>();
  auto oa = o_local.accessor<double, 2>();
  for (int r = 0; r < kNumResidueTypes; ++r) {
    const ResidueTemplate& tmpl = templates[static_cast<ResidueType>(r)];
    int backbone = -1, psi_group = -1;
    for (std::size_t g = 0; g < tmpl.groups.size(); ++g) {
      if (tmpl.groups[g].parent < 0) backbone = static_cast<int>(g);
      if (tmpl.groups[g].torsion == kPsi) psi_group = static_cast<int>(g);
    }
    if (backbone < 0 || psi_group < 0 || tmpl.groups[static_cast<std::size_t>(psi_group)].parent != backbone) {
      throw std::runtime_error("backbone_atoms_t: template lacks a backbone-parented psi group");
    }
    const RigidGroup& bg = tmpl.groups[static_cast<std::size_t>(backbone)];
    const RigidGroup& pg = tmpl.groups[static_cast<std::size_t>(psi_group)];
    std::array<bool, 4> seen{};
    for (const auto& [slot, local] : bg.atoms) {
      if (slot > kSlotC) continue;
      const Vec3 p = apply(bg.default_frame, local);
      for (int u = 0; u < 3; ++u) bba[r][slot][u] = p[u];
      seen[static_cast<std::size_t>(slot)] = true;
    }
    for (const auto& [slot, local] : pg.atoms) {
      if (slot != kSlotO) continue;
      for (int u = 0; u < 3; ++u) oa[r][u] = local[u];
      seen[kSlotO] = true;
    }
    if (!(seen[0] && seen[1] && seen[2] && seen[3])) {
      throw std::runtime_error("backbone_atoms_t: template misses a backbone atom");
    }
    const Rigid pf = compose(bg.default_frame, pg.default_frame);
    for (int u = 0; u < 3; ++u) {
      pta[r][u] = pf.trans[u];
      for (int v = 0; v < 3; ++v) pra[r][u][v] = pf.rot.matrix()(u, v);
    }
  }
  const auto dtype = frames.rot.scalar_type();
  const auto idx = seq.to(torch::kInt64);
  bb = bb.to(dtype).index_select(0, idx);
  psi_rot = psi_rot.to(dtype).index_select(0, idx);
  psi_trans = psi_trans.to(dtype).index_select(0, idx);
  o_local = o_local.to(dtype).index_select(0, idx);

  const auto s = psi.select(-1, 0), c = psi.select(-1, 1);
  const auto zero = torch::zeros_like(s), one = torch::ones_like(s);
  const auto rx = torch::stack({torch::stack({one, zero, zero}, -1), torch::stack({zero, c, -s}, -1),
                                torch::stack({zero, s, c}, -1)},
                               -2);  // [..., N, 3, 3]
  const auto o_res = rigid_apply(psi_rot, psi_trans, torch::matmul(rx, o_local.unsqueeze(-1)).squeeze(-1));
  auto shape = o_res.sizes().vec();
  shape.insert(shape.end() - 1, 3);
  const auto local = torch::cat({bb.expand(shape), o_res.unsqueeze(-2)}, -2);
  return rigid_apply(frames.rot.unsqueeze(-3), frames.trans.unsqueeze(-2), local);
}

AuxLosses aux_losses(const torch::Tensor& pred_atoms, const torch::Tensor& gt_atoms) {
  if (pred_atoms.sizes() != gt_atoms.sizes() || pred_atoms.dim() != 4 || pred_atoms.size(2) != 4) {
    throw std::invalid_argument("aux_losses: expected matching [S, N, 4, 3] atom tensors");
  }
  const int64_t s = pred_atoms.size(0), n = pred_atoms.size(1);
  AuxLosses out;
  out.l_omega = (pred_atoms - gt_atoms).pow(2).sum(-1).mean({1, 2}).mean();

  const auto p = pred_atoms.reshape({s, n * 4, 3});
  const auto g = gt_atoms.detach().reshape({s, n * 4, 3});
  const auto d_gt = (g.unsqueeze(2) - g.unsqueeze(1)).pow(2).sum(-1).sqrt();
  // Self pairs contribute 0 but still count in C; keep sqrt away from 0 there.
  const auto self = torch::eye(n * 4, torch::TensorOptions().dtype(torch::kBool)).unsqueeze(0);
  const auto sq = (p.unsqueeze(2) - p.unsqueeze(1)).pow(2).sum(-1);
  const auto d_pred = torch::where(self, torch::ones_like(sq), sq).sqrt();
  const auto d_ref = torch::where(self, torch::ones_like(d_gt), d_gt);
  const auto ind = (d_gt < kContactCutoff).to(p.scalar_type());
  const auto count = ind.sum({1, 2}) - static_cast<double>(n);  // [S]
  const auto num = (ind * (d_ref - d_pred).pow(2)).sum({1, 2});
  const auto positive = count > 0;
  out.l2d_degenerate = !positive.all().item<bool>();
  const auto per_step = torch::where(positive, num / torch::where(positive, count, torch::ones_like(count)),
                                     torch::zeros_like(num));
  out.l_2d = per_step.mean();
  return out;
}

std::pair<torch::Tensor, LossReport> total_loss(const LossComponents& c, double t, const LossWeights& w) {
  const std::array<std::pair<const char*, const torch::Tensor*>, 5> parts = {
      {{"dsm_rot", &c.dsm_rot}, {"dsm_trans", &c.dsm_trans}, {"torsion", &c.torsion}, {"l_omega", &c.l_omega},
       {"l_2d", &c.l_2d}}};
  LossReport r;
  r.t = t;
  std::array<double, 5> values{};
  for (std::size_t k = 0; k < parts.size(); ++k) {
    values[k] = parts[k].second->item<double>();
    if (!std::isfinite(values[k])) {
      throw NonFiniteLoss(std::string("total_loss: non-finite ") + parts[k].first + " at t=" + std::to_string(t));
    }
  }
  r.dsm_rot = values[0];
  r.dsm_trans = values[1];
  r.torsion = values[2];
  r.l_omega = values[3];
  r.l_2d = values[4];
  const bool gate = t < w.aux_gate;
  torch::Tensor total = c.dsm_rot + c.dsm_trans + w.w2 * c.torsion;
  // With the gate off the aux terms stay out of the graph entirely.
  if (gate) total = total + w.w1 * (c.l_omega + c.l_2d);
  r.total = r.dsm_rot + r.dsm_trans + (gate ? w.w1 * (r.l_omega + r.l_2d) : 0.0) + w.w2 * r.torsion;
  return {total, r};
}

}  // namespace fourdfold

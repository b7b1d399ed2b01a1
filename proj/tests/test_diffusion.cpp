#include "fourdfold/diffusion.hpp"
#include "fourdfold/features.hpp"
#include "fourdfold/protein.hpp"

// libtorch defines its own CHECK; doctest's must win in test code.
#undef CHECK
#include <doctest.h>

#include "test_util.hpp"

#include <numbers>

using namespace fourdfold;
using fourdfold::testing::ks_statistic;
using fourdfold::testing::QuadratureCdf;

namespace {

constexpr double kPi = std::numbers::pi;

const DiffusionSchedule& schedule() {
  static const DiffusionSchedule sched;
  return sched;
}

double max_diff(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().max().item<double>(); }

FrameGrid random_grid(std::size_t s, std::size_t n, Rng& rng, double translation_scale = 10.0) {
  FrameGrid g(s, n);
  for (auto& f : g.data()) f = random_rigid(rng, translation_scale);
  return g;
}

torch::Tensor vecs(const std::vector<Vec3>& v) {
  auto out = torch::empty({static_cast<int64_t>(v.size()), 3}, torch::kFloat64);
  for (std::size_t k = 0; k < v.size(); ++k)
    for (int u = 0; u < 3; ++u) out[static_cast<int64_t>(k)][u] = v[k][u];
  return out;
}

// L_2D by explicit loops over residue and atom pairs, indicator on ground truth.
double l2d_oracle(const std::vector<std::array<Vec3, 4>>& pred, const std::vector<std::array<Vec3, 4>>& gt) {
  double num = 0.0, count = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i)
    for (std::size_t j = 0; j < gt.size(); ++j)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          const double d = (gt[i][a] - gt[j][b]).norm();
          if (!(d < 6.0)) continue;
          const double dh = (pred[i][a] - pred[j][b]).norm();
          num += (d - dh) * (d - dh);
          count += 1.0;
        }
  return num / (count - static_cast<double>(gt.size()));
}

torch::Tensor atoms_tensor(const std::vector<std::array<Vec3, 4>>& atoms) {
  auto out = torch::empty({1, static_cast<int64_t>(atoms.size()), 4, 3}, torch::kFloat64);
  for (std::size_t i = 0; i < atoms.size(); ++i)
    for (int a = 0; a < 4; ++a)
      for (int u = 0; u < 3; ++u) out[0][static_cast<int64_t>(i)][a][u] = atoms[i][static_cast<std::size_t>(a)][u];
  return out;
}

}  // namespace

TEST_CASE("translation weight closed form and the single-element dsm example") {
  const double lambda = (1.0 - std::exp(-1.0)) / std::exp(-0.5);
  CHECK(std::abs(DiffusionSchedule::lambda_trans(1.0) - lambda) < 1e-15);
  CHECK(std::abs(lambda - 1.0422) < 1e-4);
  const auto zero = torch::zeros({1, 3}, torch::kFloat64);
  const auto unit = torch::tensor({{1.0, 0.0, 0.0}}, torch::kFloat64);
  const auto [rot, trans] = dsm_loss(zero, unit, zero, zero, 1.0, schedule());
  CHECK(std::abs(trans.item<double>() - lambda) < 1e-9);
  CHECK(rot.item<double>() == 0.0);
  CHECK_THROWS_AS(dsm_loss(zero, zero, zero, zero, 0.0, schedule()), std::invalid_argument);
}

TEST_CASE("rotation weight is the inverse expected squared score; Monte Carlo oracle") {
  const DiffusionSchedule& sched = schedule();
  Rng rng(17);
  for (const double t : {0.0, 0.5, 1.0}) {
    const double s2 = sched.sigma2(t);
    const Igso3AngleSampler sampler(s2);
    double acc = 0.0;
    const int draws = 20000;
    for (int k = 0; k < draws; ++k) {
      const Rotation r = sample_igso3(Rotation(), sampler, rng);
      acc += rot_score(r, Rotation(), s2).squaredNorm();
    }
    const double mc = acc / draws;
    CHECK(std::abs(1.0 / sched.lambda_rot(t) - mc) / mc < 0.03);
  }
  // Off-grid points interpolate between neighbours.
  const double t = 0.5 / 63.0;
  CHECK(sched.lambda_rot(t) > sched.lambda_rot(0.0));
  CHECK(sched.lambda_rot(t) < sched.lambda_rot(1.0 / 63.0));
}

TEST_CASE("forward_noise in the small-noise limit") {
  // The rotation limit needs sigma_min well below 0.01; the default floor of
  // 0.1 rad keeps residual rotation noise at t -> 0 by design.
  RotationSchedule tight;
  tight.sigma_min = 1e-3;
  const DiffusionSchedule sched(tight, 8);
  Rng rng(1);
  const FrameGrid clean = random_grid(2, 50, rng);
  const NoisedSample ns = forward_noise(clean, 1e-6, sched, rng);
  const NoisedSample loose = forward_noise(clean, 1e-6, schedule(), rng);
  for (std::size_t k = 0; k < clean.size(); ++k) {
    CHECK(geodesic_angle(ns.noisy.data()[k].rot, clean.data()[k].rot) < 0.01);
    CHECK((loose.noisy.data()[k].trans - kTranslationScale * clean.data()[k].trans).norm() < 0.01);
    CHECK((ns.noisy.data()[k].trans - kTranslationScale * clean.data()[k].trans).norm() < 0.01);
    CHECK((ns.clean.data()[k].trans - kTranslationScale * clean.data()[k].trans).norm() < 1e-15);
  }
  CHECK_THROWS_AS(forward_noise(clean, 0.0, schedule(), rng), std::invalid_argument);
  CHECK_THROWS_AS(forward_noise(clean, 1.5, schedule(), rng), std::invalid_argument);
}

TEST_CASE("forward_noise moments and rotation marginal at t = 1") {
  Rng rng(2);
  const std::size_t n = 20000;
  FrameGrid clean(1, n);
  const Rotation r0 = random_rotation(rng);
  const Vec3 x0(12.0, -7.0, 3.0);  // Angstrom
  for (auto& f : clean.data()) f = Rigid{r0, x0};
  const NoisedSample ns = forward_noise(clean, 1.0, schedule(), rng);

  const Vec3 mean_expected = std::exp(-0.5) * kTranslationScale * x0;
  const double var_expected = 1.0 - std::exp(-1.0);
  for (int u = 0; u < 3; ++u) {
    double m = 0.0, v = 0.0;
    for (const Rigid& f : ns.noisy.data()) m += f.trans[u];
    m /= n;
    for (const Rigid& f : ns.noisy.data()) v += (f.trans[u] - m) * (f.trans[u] - m);
    v /= (n - 1);
    CHECK(std::abs(m - mean_expected[u]) < 3.0 * std::sqrt(var_expected / n));
    CHECK(std::abs(v - var_expected) / var_expected < 0.05);
  }
  std::vector<double> angles;
  for (const Rigid& f : ns.noisy.data()) angles.push_back(geodesic_angle(f.rot, r0));
  const QuadratureCdf cdf(1.5 * 1.5, 4000);
  CHECK(ks_statistic(angles, [&](double w) { return cdf(w); }) < 0.03);
}

TEST_CASE("attached scores equal recomputed closed-form conditional scores") {
  Rng rng(3);
  const FrameGrid clean = random_grid(3, 7, rng);
  for (const double t : {0.05, 0.4, 1.0}) {
    const NoisedSample ns = forward_noise(clean, t, schedule(), rng);
    const double s2 = schedule().sigma2(t);
    for (std::size_t k = 0; k < clean.size(); ++k) {
      const Rigid& x = ns.noisy.data()[k];
      const Rigid& c = ns.clean.data()[k];
      CHECK((ns.rot_scores[k] - rot_score(x.rot, c.rot, s2)).norm() < 1e-10);
      CHECK((ns.trans_scores[k] - trans_score(x.trans, c.trans, t)).norm() < 1e-10);
    }
  }
}

TEST_CASE("score_from_prediction consistency and the loss-zero property") {
  Rng rng(4);
  const FrameGrid clean = random_grid(2, 6, rng);
  const double t = 0.3;
  const NoisedSample ns = forward_noise(clean, t, schedule(), rng);
  const ScoreGrid sg = score_from_prediction(ns.clean, ns.noisy, t, schedule());
  for (std::size_t k = 0; k < clean.size(); ++k) {
    CHECK(sg.rot[k] == ns.rot_scores[k]);
    CHECK(sg.trans[k] == ns.trans_scores[k]);
  }
  const auto [lr, lt] = dsm_loss(vecs(sg.rot), vecs(sg.trans), vecs(ns.rot_scores), vecs(ns.trans_scores), t,
                                 schedule());
  CHECK(lr.item<double>() == 0.0);
  CHECK(lt.item<double>() == 0.0);

  FrameGrid ident(1, 4);
  for (auto& f : ident.data()) f = Rigid{Rotation(), Vec3::Random()};
  const ScoreGrid zero = score_from_prediction(ident, ident, t, schedule());
  for (const Vec3& v : zero.rot) CHECK(v.norm() == 0.0);

  // The differentiable path reproduces the scalar path.
  const FrameTensors pred = frames_to_tensors(ns.clean, 1.0), noisy = frames_to_tensors(ns.noisy, 1.0);
  const auto [tr, tt] = score_from_prediction_t(pred, noisy, t, schedule());
  CHECK(max_diff(tr.view({-1, 3}), vecs(sg.rot)) < 1e-10);
  CHECK(max_diff(tt.view({-1, 3}), vecs(sg.trans)) < 1e-12);
  CHECK_THROWS_AS(score_from_prediction(ns.clean, ns.noisy, 0.0, schedule()), std::invalid_argument);
}

TEST_CASE("dsm loss is zero only at equality and isotropic under axis relabeling") {
  torch::manual_seed(5);
  const auto a = torch::randn({2, 5, 3}, torch::kFloat64), b = torch::randn({2, 5, 3}, torch::kFloat64);
  const auto [r1, t1] = dsm_loss(a, a, b, b, 0.7, schedule());
  CHECK(r1.item<double>() > 0.0);
  CHECK(t1.item<double>() > 0.0);
  auto c = b.clone();
  c[1][2][0] += 1e-3;
  CHECK(dsm_loss(b, b, c, c, 0.7, schedule()).first.item<double>() > 0.0);
  Rng rng(5);
  const Mat3 q = random_rotation(rng).matrix();
  auto qt = torch::empty({3, 3}, torch::kFloat64);
  for (int u = 0; u < 3; ++u)
    for (int v = 0; v < 3; ++v) qt[u][v] = q(u, v);
  const auto rel = [&](const torch::Tensor& x) { return torch::matmul(x, qt.transpose(0, 1)); };
  const auto [r2, t2] = dsm_loss(rel(a), rel(a), rel(b), rel(b), 0.7, schedule());
  CHECK(std::abs(r2.item<double>() - r1.item<double>()) < 1e-12);
  CHECK(std::abs(t2.item<double>() - t1.item<double>()) < 1e-12);
}

TEST_CASE("torsion loss closed forms") {
  const auto make = [](double theta) {
    auto x = torch::zeros({1, 7, 2}, torch::kFloat64);
    x.select(-1, 1).fill_(1.0);
    x[0][0][0] = std::sin(theta);
    x[0][0][1] = std::cos(theta);
    return x;
  };
  auto mask = torch::zeros({1, 7}, torch::kFloat64);
  mask[0][0] = 1.0;
  const auto gt = make(0.0), alt = make(kPi);
  for (const double theta : {0.0, 0.3, kPi / 2, 2.0, kPi}) {
    const double v = torsion_loss(make(theta), gt, alt, mask).item<double>();
    CHECK(std::abs(v - (2.0 - 2.0 * std::abs(std::cos(theta)))) < 1e-9);
    CHECK(torsion_loss(make(theta), alt, gt, mask).item<double>() == v);
  }
  CHECK(std::abs(torsion_loss(make(kPi / 2), gt, alt, mask).item<double>() - 2.0) < 1e-9);
  CHECK(torsion_loss(gt, gt, alt, mask).item<double>() == 0.0);
  // Masked-out torsions do not count.
  auto off = make(kPi / 2);
  off[0][4][0] = 1.0;
  off[0][4][1] = 0.0;
  CHECK(std::abs(torsion_loss(off, gt, alt, mask).item<double>() - 2.0) < 1e-12);
}

TEST_CASE("backbone atoms from tensors match the rigid-group builder") {
  Rng rng(6);
  std::vector<ResidueType> seq;
  std::vector<Rigid> frames;
  std::vector<TorsionAngles> tors;
  std::uniform_real_distribution<double> angle(-kPi, kPi);
  for (int i = 0; i < kNumResidueTypes; ++i) {
    seq.push_back(static_cast<ResidueType>(i));
    frames.push_back(random_rigid(rng));
    TorsionAngles t;
    t.mask = torsion_mask_for(seq.back(), i == 0);
    for (int k = 0; k < kNumTorsions; ++k) t.set_angle(k, angle(rng));
    tors.push_back(t);
  }
  const AtomSet ref = atoms_from_frames_and_torsions(seq, frames, tors);
  const auto psi = torsions_to_tensor(tors).first.select(-2, kPsi);
  const auto atoms = backbone_atoms_t(residue_indices(seq), frames_to_tensors(frames, 1.0), psi);
  for (std::size_t i = 0; i < seq.size(); ++i)
    for (int a = 0; a < 4; ++a)
      for (int u = 0; u < 3; ++u)
        CHECK(std::abs(atoms[static_cast<int64_t>(i)][a][u].item<double>() - ref.at(i, a)[u]) < 1e-10);
}

TEST_CASE("auxiliary losses: zero at equality, the one-Angstrom case and the contact boundary") {
  Rng rng(7);
  std::vector<std::array<Vec3, 4>> gt(5);
  for (auto& r : gt)
    for (auto& a : r) a = Vec3::Random() * 4.0;
  auto pred = gt;
  const AuxLosses same = aux_losses(atoms_tensor(pred), atoms_tensor(gt));
  CHECK(same.l_omega.item<double>() == 0.0);
  CHECK(same.l_2d.item<double>() == 0.0);

  for (auto& r : pred)
    for (auto& a : r) a += Vec3::Random() * 0.5;
  const AuxLosses rnd = aux_losses(atoms_tensor(pred), atoms_tensor(gt));
  CHECK(std::abs(rnd.l_2d.item<double>() - l2d_oracle(pred, gt)) < 1e-12);

  std::vector<std::array<Vec3, 4>> one(1);
  for (int a = 0; a < 4; ++a) one[0][static_cast<std::size_t>(a)] = Vec3(1.5 * a, 0.0, 0.0);
  auto moved = one;
  moved[0][kSlotCA] += Vec3(0.0, 1.0, 0.0);
  CHECK(std::abs(aux_losses(atoms_tensor(moved), atoms_tensor(one)).l_omega.item<double>() - 0.25) < 1e-9);

  // Residue 1 shifted rigidly by 0.5 A: only cross pairs change. The closest
  // cross pair sits exactly at 6.0 A in the first layout and is excluded.
  const auto layout = [](double gap) {
    std::vector<std::array<Vec3, 4>> r(2);
    for (int a = 0; a < 4; ++a) {
      r[0][static_cast<std::size_t>(a)] = Vec3(a, 0.0, 0.0);
      r[1][static_cast<std::size_t>(a)] = Vec3(3.0 + gap + a, 0.0, 0.0);
    }
    return r;
  };
  const auto shift = [](std::vector<std::array<Vec3, 4>> r) {
    for (auto& a : r[1]) a += Vec3(0.5, 0.0, 0.0);
    return r;
  };
  const auto at_edge = layout(6.0), inside = layout(5.999);
  CHECK(aux_losses(atoms_tensor(shift(at_edge)), atoms_tensor(at_edge)).l_2d.item<double>() == 0.0);
  // Two ordered pairs at 5.999 A enter; C = (32 + 2) - 2.
  CHECK(std::abs(aux_losses(atoms_tensor(shift(inside)), atoms_tensor(inside)).l_2d.item<double>() - 0.5 / 32.0) <
        1e-12);
}

TEST_CASE("total loss assembly and the strict auxiliary gate") {
  const auto s = [](double v) { return torch::tensor(v, torch::kFloat64); };
  const auto [t1, r1] = total_loss({s(0.6), s(0.4), s(3.0), s(2.0), s(2.0)}, 0.1);
  CHECK(std::abs(r1.total - 5.0) < 1e-9);
  CHECK(std::abs(t1.item<double>() - 5.0) < 1e-9);
  const auto [t2, r2] = total_loss({s(0.6), s(0.4), s(3.0), s(2.0), s(2.0)}, 0.5);
  CHECK(std::abs(r2.total - 4.0) < 1e-12);
  const auto [t3, r3] = total_loss({s(0.6), s(0.4), s(3.0), s(2.0), s(2.0)}, 0.25);
  CHECK(std::abs(r3.total - 4.0) < 1e-12);
  const auto [t4, r4] = total_loss({s(0), s(0), s(0), s(0), s(0)}, 0.1);
  CHECK(r4.total == 0.0);
  CHECK(std::abs(r1.total - (r1.dsm_rot + r1.dsm_trans + 0.25 * (r1.l_omega + r1.l_2d) + r1.torsion)) < 1e-10);
  CHECK_THROWS_AS(total_loss({s(std::nan("")), s(0), s(0), s(0), s(0)}, 0.1), NonFiniteLoss);
}

TEST_CASE("auxiliary gradient vanishes exactly when the gate is off") {
  torch::manual_seed(9);
  const auto gt = torch::randn({2, 3, 4, 3}, torch::kFloat64) * 3.0;
  for (const double t : {0.25, 0.6, 0.1}) {
    auto pred = (gt + 0.3 * torch::randn_like(gt)).requires_grad_(true);
    const AuxLosses aux = aux_losses(pred, gt);
    const auto dsm = (pred * 0.0).sum();
    const auto [total, report] = total_loss({dsm, dsm, dsm, aux.l_omega, aux.l_2d}, t);
    total.backward();
    const double g = pred.grad().abs().max().item<double>();
    if (t < 0.25) {
      CHECK(g > 0.0);
    } else {
      CHECK(g == 0.0);
    }
  }
}

#include "fourdfold/sampler.hpp"

#include <cmath>
#include <string>

namespace fourdfold {

void SamplerOptions::validate() const {
  if (n_steps < 2) throw std::invalid_argument("SamplerOptions: n_steps must be >= 2");
  if (!(t_min > 0.0) || !(t_min < 1.0)) throw std::invalid_argument("SamplerOptions: t_min must lie in (0, 1)");
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("SamplerOptions: noise_scale must be non-negative");
  if (!(dt >= 0.0)) throw std::invalid_argument("SamplerOptions: dt must be non-negative");
}

FrameGrid sample_prior(std::size_t s, std::size_t n, const DiffusionSchedule& sched, Rng& rng) {
  const Igso3AngleSampler sampler(sched.sigma2(1.0), sched.rotation().cdf_grid_size, sched.rotation().series_terms);
  std::normal_distribution<double> normal(0.0, 1.0);
  FrameGrid grid(s, n);
  for (Rigid& f : grid.data()) {
    f.rot = sample_igso3(Rotation::identity(), sampler, rng);
    const double x = normal(rng), y = normal(rng), z = normal(rng);
    f.trans = Vec3(x, y, z);
  }
  return grid;
}

ReverseResult integrate_reverse(const DenoiseFn& denoise, std::size_t s, std::size_t n, const DiffusionSchedule& sched,
                                const SamplerOptions& opts, Rng& rng, std::optional<FrameGrid> init) {
  opts.validate();
  FrameGrid x = init ? std::move(*init) : sample_prior(s, n, sched, rng);
  if (x.s_count() != s || x.n_count() != n) throw std::invalid_argument("integrate_reverse: init grid shape differs");
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto time_at = [&](int k) {
    return k == opts.n_steps - 1 ? opts.t_min : 1.0 - k * (1.0 - opts.t_min) / (opts.n_steps - 1);
  };

  for (int k = 0; k + 1 < opts.n_steps; ++k) {
    const double t = time_at(k), t_next = time_at(k + 1);
    const double delta = t - t_next;
    const double delta_sigma = sched.sigma2(t) - sched.sigma2(t_next);
    const ScoreGrid score = score_from_prediction(denoise(x, t), x, t, sched);
    for (std::size_t e = 0; e < x.size(); ++e) {
      Rigid& f = x.data()[e];
      const double a = normal(rng), b = normal(rng), c = normal(rng);
      f.trans += (0.5 * f.trans + score.trans[e]) * delta + std::sqrt(delta) * opts.noise_scale * Vec3(a, b, c);
      const double u = normal(rng), v = normal(rng), w = normal(rng);
      const Vec3 step = score.rot[e] * delta_sigma + std::sqrt(delta_sigma) * opts.noise_scale * Vec3(u, v, w);
      f.rot = (f.rot * exp_so3(step)).orthonormalized();
      if (!f.trans.allFinite() || !f.rot.matrix().allFinite()) {
        throw SamplerDivergence("sampler diverged at step " + std::to_string(k) + " (t=" + std::to_string(t) + ")");
      }
    }
  }
  ReverseResult out{FrameGrid(), x};
  out.frames = denoise(x, opts.t_min);
  for (const Rigid& f : out.frames.data()) {
    if (!f.trans.allFinite() || !f.rot.matrix().allFinite()) {
      throw SamplerDivergence("sampler diverged at step " + std::to_string(opts.n_steps - 1) + " (final denoise)");
    }
  }
  return out;
}

Vec3 reference_centroid(const ProteinState& reference) {
  if (reference.frames.empty()) throw std::invalid_argument("reference_centroid: empty state");
  Vec3 c = Vec3::Zero();
  for (const Rigid& f : reference.frames) c += f.trans;
  return c / static_cast<double>(reference.frames.size());
}

TrunkInput make_trunk_input(const std::vector<ResidueType>& seq, const ProteinState& reference,
                            const std::vector<ProteinState>& motion, const FrameGrid& noisy_scaled, double t,
                            const Vec3& centre, torch::Dtype dtype) {
  const std::size_t n = seq.size();
  FrameGrid clean(motion.size() + 1, n);
  for (std::size_t k = 0; k <= motion.size(); ++k) {
    const ProteinState& st = k < motion.size() ? motion[k] : reference;
    if (st.frames.size() != n) throw std::invalid_argument("make_trunk_input: state length differs from sequence");
    for (std::size_t i = 0; i < n; ++i) clean.at(k, i) = Rigid{st.frames[i].rot, st.frames[i].trans - centre};
  }
  const FrameTensors c = frames_to_tensors(clean, kTranslationScale, dtype);
  const FrameTensors x = frames_to_tensors(noisy_scaled, 1.0, dtype);
  TrunkInput in;
  in.seq = residue_indices(seq).unsqueeze(0);
  in.t = torch::full({1}, t, torch::kFloat64);
  in.clean = {c.rot.unsqueeze(0), c.trans.unsqueeze(0)};
  in.noisy = {x.rot.unsqueeze(0), x.trans.unsqueeze(0)};
  return in;
}

Trajectory reverse_sample(Denoiser& model, const std::vector<ResidueType>& seq, const ProteinState& reference,
                          const std::vector<ProteinState>& motion, int s, const DiffusionSchedule& sched,
                          const SamplerOptions& opts, Rng& rng) {
  if (s < 1) throw std::invalid_argument("reverse_sample: s must be >= 1");
  if (static_cast<int>(motion.size()) != model->config().s_mot) {
    throw std::invalid_argument("reverse_sample: expected " + std::to_string(model->config().s_mot) + " motion states");
  }
  if (reference.sequence != seq) throw std::invalid_argument("reverse_sample: reference sequence differs");
  torch::NoGradGuard no_grad;
  const auto dtype = model->embedder->residue->weight.scalar_type();
  const Vec3 centre = reference_centroid(reference);
  torch::Tensor torsions;
  const DenoiseFn denoise = [&](const FrameGrid& noisy, double t) {
    const TrunkOutput out = model->forward(make_trunk_input(seq, reference, motion, noisy, t, centre, dtype));
    torsions = out.torsions[0];
    return tensors_to_frames({out.frames.rot[0], out.frames.trans[0]}, 1.0);
  };
  const ReverseResult res = integrate_reverse(denoise, static_cast<std::size_t>(s), seq.size(), sched, opts, rng);

  const auto tors = torsions.to(torch::kFloat64).contiguous();
  auto ta = tors.accessor<double, 4>();
  Trajectory traj;
  traj.dt = opts.dt > 0.0 ? opts.dt : 1.0;
  for (int k = 0; k < s; ++k) {
    ProteinState st;
    st.sequence = seq;
    st.step_time = reference.step_time + (k + 1) * traj.dt;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const Rigid& f = res.frames.at(static_cast<std::size_t>(k), i);
      st.frames.push_back(Rigid{f.rot, f.trans / kTranslationScale + centre});
      TorsionAngles a;
      a.mask = torsion_mask_for(seq[i], i == 0);
      for (int j = 0; j < kNumTorsions; ++j) {
        if (!a.mask[static_cast<std::size_t>(j)]) continue;
        a.angles[static_cast<std::size_t>(j)] = {ta[k][static_cast<int64_t>(i)][j][0], ta[k][static_cast<int64_t>(i)][j][1]};
      }
      st.torsions.push_back(a);
    }
    st.validate();
    traj.states.push_back(std::move(st));
  }
  return traj;
}

Trajectory iterative_rollout(Denoiser& model, const std::vector<ResidueType>& seq, const ProteinState& reference,
                             const std::vector<ProteinState>& motion, int total_steps, const DiffusionSchedule& sched,
                             const SamplerOptions& opts, Rng& rng) {
  if (total_steps < 1) throw std::invalid_argument("iterative_rollout: total_steps must be >= 1");
  Trajectory out;
  out.dt = opts.dt > 0.0 ? opts.dt : 1.0;
  ProteinState ref = reference;
  std::vector<ProteinState> window = motion;
  for (int k = 0; k < total_steps; ++k) {
    Trajectory one = reverse_sample(model, seq, ref, window, 1, sched, opts, rng);
    if (!window.empty()) {
      window.erase(window.begin());
      window.push_back(ref);
    }
    ref = one.states.front();
    out.states.push_back(ref);
  }
  return out;
}

}  // namespace fourdfold

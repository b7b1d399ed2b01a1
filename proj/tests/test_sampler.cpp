#include "fourdfold/dataio.hpp"
#include "fourdfold/sampler.hpp"

// libtorch defines its own CHECK; doctest's must win in test code.
#undef CHECK
#include <doctest.h>

#include "test_util.hpp"

#include <sstream>

using namespace fourdfold;
using fourdfold::testing::QuadratureCdf;

namespace {

const DiffusionSchedule& schedule() {
  static const DiffusionSchedule sched;
  return sched;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 2;
  c.d_v = 16;
  c.d_z = 8;
  c.ipa_heads = 2;
  c.ipa_c = 8;
  c.ipa_query_points = 2;
  c.ipa_value_points = 3;
  c.torsion_hidden = 16;
  c.r_max = 4;
  c.time_dim = 8;
  c.s_mot = 2;
  return c;
}

// Denoiser that knows the answer: translations (and optionally rotations) of x0.
DenoiseFn oracle(const FrameGrid& x0, bool rotations) {
  return [x0, rotations](const FrameGrid& noisy, double) {
    FrameGrid out = noisy;
    for (std::size_t e = 0; e < out.size(); ++e) {
      out.data()[e].trans = x0.data()[e].trans;
      if (rotations) out.data()[e].rot = x0.data()[e].rot;
    }
    return out;
  };
}

double mean_angle_cdf(const QuadratureCdf& cdf) {
  // E[w] = integral of (1 - F) over [0, pi].
  return fourdfold::testing::simpson([&](double w) { return 1.0 - cdf(w); }, 0.0, std::numbers::pi, 2000);
}

struct Fixture {
  Trajectory traj;
  Denoiser model{nullptr};
  Fixture() {
    SynthOptions o;
    o.n = 6;
    o.l = 8;
    traj = synth_trajectory(o);
    torch::manual_seed(0);
    model = Denoiser(tiny_config());
    model->to(torch::kFloat64);
    model->eval();
  }
  const std::vector<ResidueType>& seq() const { return traj.states.front().sequence; }
  std::vector<ProteinState> motion() const { return {traj.states[0], traj.states[1]}; }
  const ProteinState& reference() const { return traj.states[2]; }
};

}  // namespace

TEST_CASE("translation toy: analytic scores recover x0") {
  Rng rng(11);
  const std::size_t n = 2000;
  FrameGrid x0(1, n);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (Rigid& f : x0.data()) f.trans = Vec3(u(rng), u(rng), u(rng));
  SamplerOptions opts;
  opts.n_steps = 200;
  const ReverseResult res = integrate_reverse(oracle(x0, false), 1, n, schedule(), opts, rng);

  double mae = 0.0;
  for (std::size_t e = 0; e < n; ++e) mae += (res.frames.data()[e].trans - x0.data()[e].trans).cwiseAbs().sum();
  mae /= 3.0 * n;
  CHECK(mae < 0.05);

  // With exact scores each coordinate is linear Gaussian: x = c x0 + noise of
  // variance q. Propagating (c, q) through the Euler recursion from the N(0, 1)
  // prior gives the exact law of the pre-final state.
  double c = 0.0, q = 1.0;
  for (int k = 0; k + 1 < opts.n_steps; ++k) {
    const double t = 1.0 - k * (1.0 - opts.t_min) / (opts.n_steps - 1);
    const double t_next = k + 2 == opts.n_steps ? opts.t_min : 1.0 - (k + 1) * (1.0 - opts.t_min) / (opts.n_steps - 1);
    const double d = t - t_next, v = 1.0 - std::exp(-t);
    const double gain = 1.0 + 0.5 * d - d / v;
    c = gain * c + d * std::exp(-0.5 * t) / v;
    q = gain * gain * q + d;
  }
  double m = 0.0, var = 0.0;
  for (std::size_t e = 0; e < n; ++e) {
    const Vec3 r = res.pre_final.data()[e].trans - c * x0.data()[e].trans;
    m += r.sum();
    var += r.squaredNorm();
  }
  m /= 3.0 * n;
  var /= 3.0 * n;
  CHECK(std::abs(m) < 4.0 * std::sqrt(q / (3.0 * n)));
  CHECK(std::abs(var - q) / q < 0.05);
}

TEST_CASE("translation toy without noise converges monotonically") {
  Rng rng(12);
  FrameGrid x0(1, 10);
  for (Rigid& f : x0.data()) f.trans = Vec3::Random() * 2.0;
  std::vector<double> dist;
  const DenoiseFn inner = oracle(x0, false);
  const DenoiseFn track = [&](const FrameGrid& noisy, double t) {
    double d = 0.0;
    for (std::size_t e = 0; e < noisy.size(); ++e) d += (noisy.data()[e].trans - x0.data()[e].trans).norm();
    dist.push_back(d);
    return inner(noisy, t);
  };
  SamplerOptions opts;
  opts.n_steps = 200;
  opts.noise_scale = 0.0;
  const ReverseResult res = integrate_reverse(track, 1, 10, schedule(), opts, rng);
  REQUIRE(dist.size() == 200);
  for (std::size_t k = dist.size() / 4 + 1; k < dist.size(); ++k) CHECK(dist[k] <= dist[k - 1]);
  for (std::size_t e = 0; e < 10; ++e) CHECK((res.frames.data()[e].trans - x0.data()[e].trans).norm() == 0.0);
}

TEST_CASE("rotation toy: analytic scores concentrate on R0") {
  Rng rng(13);
  const std::size_t n = 2000;
  FrameGrid x0(1, n);
  const Rotation r0 = random_rotation(rng);
  for (Rigid& f : x0.data()) f.rot = r0;
  SamplerOptions opts;
  opts.n_steps = 200;
  const ReverseResult res = integrate_reverse(oracle(x0, true), 1, n, schedule(), opts, rng);

  double terminal = 0.0, pre = 0.0;
  for (std::size_t e = 0; e < n; ++e) {
    terminal += geodesic_angle(res.frames.data()[e].rot, r0);
    pre += geodesic_angle(res.pre_final.data()[e].rot, r0);
  }
  terminal /= n;
  pre /= n;
  CHECK(terminal < 0.1);
  // Before the final denoise the angles follow IGSO(3) at sigma^2(t_min).
  const double expected = mean_angle_cdf(QuadratureCdf(schedule().sigma2(opts.t_min), 4000));
  CHECK(std::abs(pre - expected) / expected < 0.1);
}

TEST_CASE("sampler options and divergence reporting") {
  Rng rng(14);
  SamplerOptions bad;
  bad.n_steps = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  SamplerOptions opts;
  opts.n_steps = 10;
  int calls = 0;
  const DenoiseFn blow_up = [&](const FrameGrid& noisy, double) {
    FrameGrid out = noisy;
    if (++calls == 4) out.data()[0].trans = Vec3(std::nan(""), 0.0, 0.0);
    return out;
  };
  try {
    integrate_reverse(blow_up, 1, 3, schedule(), opts, rng);
    FAIL("expected divergence");
  } catch (const SamplerDivergence& e) {
    CHECK(std::string(e.what()).find("step 3") != std::string::npos);
  }
}

TEST_CASE("reverse_sample returns valid states that survive a PDB round trip") {
  Fixture fx;
  Rng rng(15);
  SamplerOptions opts;
  opts.n_steps = 5;
  const Trajectory out = reverse_sample(fx.model, fx.seq(), fx.reference(), fx.motion(), 3, schedule(), opts, rng);
  REQUIRE(out.size() == 3);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const ProteinState& st = out.states[k];
    CHECK_NOTHROW(st.validate());
    CHECK(st.frames.size() == fx.seq().size());
    CHECK(st.step_time == doctest::Approx(fx.reference().step_time + static_cast<double>(k + 1)));
  }
  std::stringstream pdb;
  write_pdb(out, pdb);
  std::istringstream in(pdb.str());
  CHECK(read_pdb(in).size() == 3);

  CHECK_THROWS_AS(reverse_sample(fx.model, fx.seq(), fx.reference(), {fx.traj.states[0]}, 1, schedule(), opts, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(reverse_sample(fx.model, fx.seq(), fx.reference(), fx.motion(), 0, schedule(), opts, rng),
                  std::invalid_argument);
}

TEST_CASE("reverse_sample is reproducible from the seed") {
  Fixture fx;
  SamplerOptions opts;
  opts.n_steps = 4;
  Rng a(16), b(16);
  const Trajectory x = reverse_sample(fx.model, fx.seq(), fx.reference(), fx.motion(), 2, schedule(), opts, a);
  const Trajectory y = reverse_sample(fx.model, fx.seq(), fx.reference(), fx.motion(), 2, schedule(), opts, b);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < fx.seq().size(); ++i) {
      CHECK(x.states[k].frames[i].trans == y.states[k].frames[i].trans);
      CHECK(x.states[k].frames[i].rot.matrix() == y.states[k].frames[i].rot.matrix());
    }
}

TEST_CASE("iterative rollout: base case, window bookkeeping and length") {
  Fixture fx;
  SamplerOptions opts;
  opts.n_steps = 4;

  Rng a(17), b(17);
  const Trajectory one = iterative_rollout(fx.model, fx.seq(), fx.reference(), fx.motion(), 1, schedule(), opts, a);
  const Trajectory direct = reverse_sample(fx.model, fx.seq(), fx.reference(), fx.motion(), 1, schedule(), opts, b);
  REQUIRE(one.size() == 1);
  for (std::size_t i = 0; i < fx.seq().size(); ++i) {
    CHECK(one.states[0].frames[i].trans == direct.states[0].frames[i].trans);
    CHECK(one.states[0].frames[i].rot.matrix() == direct.states[0].frames[i].rot.matrix());
  }

  // Manual chaining with an explicit window: after k steps the motion states are
  // the last s_mot states before the current reference.
  Rng c(18), d(18);
  const Trajectory rolled = iterative_rollout(fx.model, fx.seq(), fx.reference(), fx.motion(), 4, schedule(), opts, c);
  CHECK(rolled.size() == 4);
  std::vector<ProteinState> history = fx.motion();
  history.push_back(fx.reference());
  for (int k = 0; k < 4; ++k) {
    const std::vector<ProteinState> window(history.end() - 3, history.end() - 1);
    const Trajectory step = reverse_sample(fx.model, fx.seq(), history.back(), window, 1, schedule(), opts, d);
    for (std::size_t i = 0; i < fx.seq().size(); ++i)
      CHECK(rolled.states[static_cast<std::size_t>(k)].frames[i].trans == step.states[0].frames[i].trans);
    history.push_back(step.states[0]);
  }
}

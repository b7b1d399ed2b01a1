#pragma once
// Reverse-time Euler-Maruyama integration of the frame diffusion, generic over
// the denoiser so analytic toys and the trained network share one loop.
#include "fourdfold/diffusion.hpp"
#include "fourdfold/network.hpp"

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

namespace fourdfold {

struct SamplerOptions {
  int n_steps = 100;
  double t_min = 0.01;
  double noise_scale = 1.0;
  double dt = 0.0;  // ps between generated states; 0 infers it from the conditioning states

  void validate() const;
};

class SamplerDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Predicted clean frames (scaled units) for the current noisy grid at time t.
using DenoiseFn = std::function<FrameGrid(const FrameGrid& noisy, double t)>;

struct ReverseResult {
  FrameGrid frames;     // after the final deterministic denoise
  FrameGrid pre_final;  // integrated state at t_min, before the final denoise
};

/// Euler-Maruyama on the grid t_k = 1 - k (1 - t_min) / (n_steps - 1); the last
/// grid point t_min replaces the stochastic update by the prediction itself.
/// `init` overrides the prior draw (scaled units).
ReverseResult integrate_reverse(const DenoiseFn& denoise, std::size_t s, std::size_t n, const DiffusionSchedule& sched,
                                const SamplerOptions& opts, Rng& rng, std::optional<FrameGrid> init = std::nullopt);

/// Draws S x N frames from the t = 1 priors: IGSO(3) about the identity at sigma^2(1), standard normal translations.
FrameGrid sample_prior(std::size_t s, std::size_t n, const DiffusionSchedule& sched, Rng& rng);

/// Samples `s` future states after `reference`. `motion` holds exactly s_mot states, oldest first.
Trajectory reverse_sample(Denoiser& model, const std::vector<ResidueType>& seq, const ProteinState& reference,
                          const std::vector<ProteinState>& motion, int s, const DiffusionSchedule& sched,
                          const SamplerOptions& opts, Rng& rng);

/// One step at a time with s = 1, sliding the motion window over generated states.
Trajectory iterative_rollout(Denoiser& model, const std::vector<ResidueType>& seq, const ProteinState& reference,
                             const std::vector<ProteinState>& motion, int total_steps, const DiffusionSchedule& sched,
                             const SamplerOptions& opts, Rng& rng);

/// Shift that moves the reference CA centroid to the origin (Angstrom).
Vec3 reference_centroid(const ProteinState& reference);

/// Trunk inputs for one window (batch of 1); frames centred on `centre` then scaled.
TrunkInput make_trunk_input(const std::vector<ResidueType>& seq, const ProteinState& reference,
                            const std::vector<ProteinState>& motion, const FrameGrid& noisy_scaled, double t,
                            const Vec3& centre, torch::Dtype dtype);

}  // namespace fourdfold

#pragma once

#include "fourdfold/features.hpp"
#include "fourdfold/torch_geom.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <string>
#include <vector>

namespace fourdfold {

struct ModelConfig {
  int layers = 4;
  int d_v = 128;
  int d_z = 64;
  int ipa_heads = 8;
  int ipa_c = 64;  // total scalar channels across heads
  int ipa_query_points = 8;
  int ipa_value_points = 12;
  int spatial_heads = 4;
  int temporal_heads = 4;
  int torsion_hidden = 128;
  int s_mot = 2;
  int s_ref = 1;
  int r_max = 32;
  int time_dim = 32;

  void validate() const;
  EmbedConfig embed() const { return {d_v, d_z, r_max, time_dim}; }
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Per-term outputs of invariant point attention before the final linear map.
struct IpaTerms {
  torch::Tensor o_bar;         // [B, N, H, d_z]
  torch::Tensor o;             // [B, N, H, c_h]
  torch::Tensor o_pts;         // [B, N, H, P_v, 3] mapped back to the local frame
  torch::Tensor o_pts_norm;    // [B, N, H, P_v]
  torch::Tensor o_prime;       // [B, N, H, P_v, 3] global points, not mapped back
  torch::Tensor o_prime_norm;  // [B, N, H, P_v]
  torch::Tensor attention;     // [B, H, N, N]
};

class IpaImpl : public torch::nn::Module {
 public:
  explicit IpaImpl(const ModelConfig& cfg);
  /// v [B, N, d_v], z [B, N, N, d_z], rot [B, N, 3, 3], trans [B, N, 3].
  IpaTerms terms(const torch::Tensor& v, const torch::Tensor& z, const torch::Tensor& rot, const torch::Tensor& trans);
  torch::Tensor forward(const torch::Tensor& v, const torch::Tensor& z, const torch::Tensor& rot, const torch::Tensor& trans);
  /// Concatenation order of the final linear input: o_bar, o, o_pts, |o_pts|, o_prime, |o_prime|.
  torch::Tensor concat(const IpaTerms& t) const;
  torch::Tensor gamma() const;

  int heads, c_head, pq, pv, d_z;
  torch::nn::Linear q{nullptr}, k{nullptr}, v_lin{nullptr};
  torch::nn::Linear q_pts{nullptr}, k_pts{nullptr}, v_pts{nullptr};
  torch::nn::Linear bias{nullptr};
  torch::Tensor gamma_raw;
  torch::nn::Linear out{nullptr};
};
TORCH_MODULE(Ipa);

/// Two-token attention between the reference and a noisy step at each residue.
class SpatialModuleImpl : public torch::nn::Module {
 public:
  explicit SpatialModuleImpl(const ModelConfig& cfg);
  /// v_ref [..., d_v] broadcastable against v_s [..., d_v]; returns A_s W^r + v_s.
  torch::Tensor forward(const torch::Tensor& v_ref, const torch::Tensor& v_s);
  /// Attention outputs (A_ref, A_s) before W^r.
  std::pair<torch::Tensor, torch::Tensor> attend(const torch::Tensor& v_ref, const torch::Tensor& v_s);

  int heads;
  torch::nn::Linear q{nullptr}, k{nullptr}, v{nullptr};
  torch::nn::Linear w_r{nullptr};
};
TORCH_MODULE(SpatialModule);

/// Per-residue temporal self-attention across motion, reference and noisy steps.
class MotionAlignmentImpl : public torch::nn::Module {
 public:
  explicit MotionAlignmentImpl(const ModelConfig& cfg);
  /// v_seq [B, S_hat, N, d_v], pe [S_hat, d_v]; returns the last `s` steps, residual-updated.
  torch::Tensor forward(const torch::Tensor& v_seq, const torch::Tensor& pe, int64_t s);

  int heads;
  torch::nn::Linear q{nullptr}, k{nullptr}, v{nullptr};
  torch::nn::Linear w_e{nullptr};
};
TORCH_MODULE(MotionAlignment);

class EdgeUpdateImpl : public torch::nn::Module {
 public:
  explicit EdgeUpdateImpl(const ModelConfig& cfg);
  /// v [B, N, d_v], z [B, N, N, d_z] -> LayerNorm(MLP(concat(v_down_i, v_down_j, z_ij))).
  torch::Tensor forward(const torch::Tensor& v, const torch::Tensor& z);

  torch::nn::Linear down{nullptr};
  torch::nn::Linear mlp1{nullptr}, mlp2{nullptr};
  torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(EdgeUpdate);

class BackboneUpdateImpl : public torch::nn::Module {
 public:
  explicit BackboneUpdateImpl(const ModelConfig& cfg);
  /// T <- T o (quat_to_rot(1, b, c, d), X_update); zero-initialized.
  FrameTensors forward(const torch::Tensor& v, const FrameTensors& frames);

  torch::nn::Linear linear{nullptr};
};
TORCH_MODULE(BackboneUpdate);

class TorsionHeadImpl : public torch::nn::Module {
 public:
  explicit TorsionHeadImpl(const ModelConfig& cfg);
  /// v [..., d_v] -> (normalized [..., 7, 2], raw [..., 7, 2]); pairs are (sin, cos).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& v);

  torch::nn::Linear l1{nullptr}, l2{nullptr}, l3{nullptr};
};
TORCH_MODULE(TorsionHead);

inline constexpr double kTorsionNormEps = 1e-8;

/// Divides each (sin, cos) pair by max(norm, eps).
torch::Tensor normalize_torsions(const torch::Tensor& raw);

struct TrunkInput {
  torch::Tensor seq;        // [B, N] int64
  torch::Tensor t;          // [B] diffusion time of the noisy steps
  FrameTensors noisy;       // [B, S, N, ...] scaled translations
  FrameTensors clean;       // [B, s_mot + 1, N, ...] motion steps oldest first, then the reference
};

struct TrunkOutput {
  FrameTensors frames;      // [B, S, N, ...] predicted clean frames, scaled translations
  torch::Tensor torsions;   // [B, S, N, 7, 2] normalized
  torch::Tensor raw_torsions;
};

class NonFiniteActivation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DenoiserImpl : public torch::nn::Module {
 public:
  explicit DenoiserImpl(const ModelConfig& cfg);

  TrunkOutput forward(const TrunkInput& in);

  /// Stage 1 bypasses the temporal block (its residual is the identity).
  void set_motion_alignment_enabled(bool enabled) { motion_enabled_ = enabled; }
  bool motion_alignment_enabled() const { return motion_enabled_; }

  /// Parameters of the temporal blocks, and everything else.
  std::vector<torch::Tensor> motion_parameters() const;
  std::vector<torch::Tensor> non_motion_parameters() const;

  const ModelConfig& config() const { return cfg_; }

  Embedder embedder{nullptr};
  torch::nn::ModuleList ipa, ipa_norm, spatial, motion, edge, backbone;
  TorsionHead torsion{nullptr};

 private:
  ModelConfig cfg_;
  bool motion_enabled_ = true;
};
TORCH_MODULE(Denoiser);

/// Stable order of named parameters; used by checkpoints and checksums.
std::vector<std::pair<std::string, torch::Tensor>> ordered_parameters(const torch::nn::Module& m);

/// FNV-1a over the raw bytes of the listed parameters.
std::string parameter_checksum(const std::vector<torch::Tensor>& params);

}  // namespace fourdfold

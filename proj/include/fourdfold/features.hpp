#pragma once

#include "fourdfold/protein.hpp"

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

namespace fourdfold {

struct EmbedConfig {
  int d_v = 128;
  int d_z = 64;
  int r_max = 32;
  int time_dim = 32;  // raw sinusoid width before projection
};

/// Node/edge tables imported from an external sequence model; never trained.
struct PrecomputedEmbedding {
  torch::Tensor node;  // [N, d_v]
  torch::Tensor edge;  // [N, N, d_z]
};

inline constexpr const char* kEmbeddingFormat = "fourdfold-embedding/1";

/// {"format", "d_v", "d_z", "node": N x d_v, "edge": N x N x d_z}
PrecomputedEmbedding load_precomputed_embedding(const std::string& path);
PrecomputedEmbedding precomputed_embedding_from_json(const std::string& text);

/// sin/cos of t at dim/2 log-spaced angular frequencies in [1, 1000].
torch::Tensor diffusion_time_features(double t, int dim, torch::Dtype dtype = torch::kFloat32);

/// Standard transformer encoding: row k = [sin(k w_0), cos(k w_0), sin(k w_1), ...], w_j = 10000^(-2j/dim).
torch::Tensor temporal_position_encoding(const std::vector<int>& step_indices, int dim,
                                         torch::Dtype dtype = torch::kFloat32);

torch::Tensor residue_indices(const std::vector<ResidueType>& seq);

class EmbedderImpl : public torch::nn::Module {
 public:
  explicit EmbedderImpl(const EmbedConfig& cfg);

  /// seq [B, N] int64 -> v0 [B, N, d_v], z0 [B, N, N, d_z].
  std::pair<torch::Tensor, torch::Tensor> embed_sequence(const torch::Tensor& seq);

  /// t [B] -> node term [B, d_v], edge term [B, d_z].
  std::pair<torch::Tensor, torch::Tensor> embed_time(const torch::Tensor& t);

  void set_precomputed(std::optional<PrecomputedEmbedding> emb);
  bool has_precomputed() const { return precomputed_.has_value(); }

  const EmbedConfig& config() const { return cfg_; }

  torch::nn::Embedding residue{nullptr};
  torch::nn::Embedding relpos{nullptr};
  torch::nn::Linear pair_left{nullptr};
  torch::nn::Linear pair_right{nullptr};
  torch::nn::Linear time_to_v{nullptr};
  torch::nn::Linear time_to_z{nullptr};

 private:
  EmbedConfig cfg_;
  std::optional<PrecomputedEmbedding> precomputed_;
};
TORCH_MODULE(Embedder);

}  // namespace fourdfold

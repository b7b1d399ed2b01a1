#include "fourdfold/features.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace fourdfold {

namespace {

torch::Tensor nested_to_tensor(const nlohmann::json& j, const std::vector<int64_t>& shape, const char* what) {
  std::vector<double> flat;
  std::function<void(const nlohmann::json&, std::size_t)> walk = [&](const nlohmann::json& node, std::size_t depth) {
    if (depth == shape.size()) {
      if (!node.is_number()) throw std::runtime_error(std::string("embedding ") + what + ": expected a number");
      flat.push_back(node.get<double>());
      return;
    }
    if (!node.is_array() || static_cast<int64_t>(node.size()) != shape[depth]) {
      throw std::runtime_error(std::string("embedding ") + what + ": shape mismatch at depth " + std::to_string(depth));
    }
    for (const auto& child : node) walk(child, depth + 1);
  };
  walk(j, 0);
  return torch::tensor(flat, torch::kFloat64).view(shape);
}

}  // namespace

PrecomputedEmbedding precomputed_embedding_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("embedding: invalid JSON: ") + e.what());
  }
  if (j.value("format", "") != kEmbeddingFormat) throw std::runtime_error("embedding: unsupported format");
  const int64_t d_v = j.at("d_v").get<int64_t>();
  const int64_t d_z = j.at("d_z").get<int64_t>();
  const auto& node = j.at("node");
  if (!node.is_array() || node.empty()) throw std::runtime_error("embedding: node must be a non-empty array");
  const int64_t n = static_cast<int64_t>(node.size());
  return {nested_to_tensor(node, {n, d_v}, "node"), nested_to_tensor(j.at("edge"), {n, n, d_z}, "edge")};
}

PrecomputedEmbedding load_precomputed_embedding(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("embedding: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return precomputed_embedding_from_json(buf.str());
}

torch::Tensor diffusion_time_features(double t, int dim, torch::Dtype dtype) {
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("diffusion_time_features: t must lie in [0, 1]");
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("diffusion_time_features: dim must be even and >= 2");
  const int half = dim / 2;
  auto freqs = torch::exp(torch::linspace(0.0, std::log(1000.0), half, torch::kFloat64));
  auto arg = freqs * t;
  return torch::cat({torch::sin(arg), torch::cos(arg)}).to(dtype);
}

torch::Tensor temporal_position_encoding(const std::vector<int>& step_indices, int dim, torch::Dtype dtype) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("temporal_position_encoding: dim must be even and >= 2");
  auto pe = torch::zeros({static_cast<int64_t>(step_indices.size()), dim}, torch::kFloat64);
  auto acc = pe.accessor<double, 2>();
  for (std::size_t r = 0; r < step_indices.size(); ++r) {
    for (int j = 0; j < dim / 2; ++j) {
      const double w = std::pow(10000.0, -2.0 * j / dim);
      acc[static_cast<int64_t>(r)][2 * j] = std::sin(step_indices[r] * w);
      acc[static_cast<int64_t>(r)][2 * j + 1] = std::cos(step_indices[r] * w);
    }
  }
  return pe.to(dtype);
}

torch::Tensor residue_indices(const std::vector<ResidueType>& seq) {
  std::vector<int64_t> idx;
  idx.reserve(seq.size());
  for (const auto r : seq) idx.push_back(static_cast<int64_t>(r));
  return torch::tensor(idx, torch::kInt64);
}

EmbedderImpl::EmbedderImpl(const EmbedConfig& cfg) : cfg_(cfg) {
  if (cfg.d_v <= 0 || cfg.d_z <= 0 || cfg.r_max <= 0) throw std::invalid_argument("Embedder: dimensions must be positive");
  residue = register_module("residue", torch::nn::Embedding(kNumResidueTypes, cfg.d_v));
  // 2 r_max + 1 clipped offsets; the last bucket is reserved for inter-chain pairs.
  relpos = register_module("relpos", torch::nn::Embedding(2 * cfg.r_max + 2, cfg.d_z));
  pair_left = register_module("pair_left", torch::nn::Linear(torch::nn::LinearOptions(cfg.d_v, cfg.d_z).bias(false)));
  pair_right = register_module("pair_right", torch::nn::Linear(torch::nn::LinearOptions(cfg.d_v, cfg.d_z).bias(false)));
  time_to_v = register_module("time_to_v", torch::nn::Linear(cfg.time_dim, cfg.d_v));
  time_to_z = register_module("time_to_z", torch::nn::Linear(cfg.time_dim, cfg.d_z));
}

void EmbedderImpl::set_precomputed(std::optional<PrecomputedEmbedding> emb) {
  if (emb) {
    if (emb->node.size(1) != cfg_.d_v || emb->edge.size(2) != cfg_.d_z) {
      throw std::invalid_argument("Embedder: precomputed embedding dimensions differ from the model");
    }
  }
  precomputed_ = std::move(emb);
}

std::pair<torch::Tensor, torch::Tensor> EmbedderImpl::embed_sequence(const torch::Tensor& seq) {
  const int64_t b = seq.size(0), n = seq.size(1);
  const auto dtype = residue->weight.scalar_type();
  if (precomputed_) {
    if (precomputed_->node.size(0) != n) throw std::invalid_argument("Embedder: precomputed embedding length differs");
    auto v = precomputed_->node.to(dtype).unsqueeze(0).expand({b, n, cfg_.d_v});
    auto z = precomputed_->edge.to(dtype).unsqueeze(0).expand({b, n, n, cfg_.d_z});
    return {v, z};
  }
  auto v = residue->forward(seq);
  auto pos = torch::arange(n, torch::kInt64);
  auto offset = (pos.unsqueeze(0) - pos.unsqueeze(1)).clamp(-cfg_.r_max, cfg_.r_max) + cfg_.r_max;  // [i, j] = j - i
  auto z = relpos->forward(offset).unsqueeze(0) + pair_left->forward(v).unsqueeze(2) + pair_right->forward(v).unsqueeze(1);
  return {v, z};
}

std::pair<torch::Tensor, torch::Tensor> EmbedderImpl::embed_time(const torch::Tensor& t) {
  const auto dtype = time_to_v->weight.scalar_type();
  const auto td = t.to(torch::kFloat64);
  std::vector<torch::Tensor> rows;
  for (int64_t k = 0; k < td.size(0); ++k) rows.push_back(diffusion_time_features(td[k].item<double>(), cfg_.time_dim, dtype));
  auto feats = torch::stack(rows);
  return {time_to_v->forward(feats), time_to_z->forward(feats)};
}

}  // namespace fourdfold

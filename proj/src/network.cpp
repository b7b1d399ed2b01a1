#include "fourdfold/network.hpp"

#include <cmath>
#include <set>

namespace fourdfold {

namespace {

torch::nn::Linear linear(int in, int out, bool bias = true) {
  return torch::nn::Linear(torch::nn::LinearOptions(in, out).bias(bias));
}

void zero_(torch::nn::Linear& l) {
  torch::NoGradGuard guard;
  l->weight.zero_();
  if (l->bias.defined()) l->bias.zero_();
}

// Softmax attention over the second-to-last token axis; q/k/v are [..., T, H, dh].
torch::Tensor token_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
  auto logits = torch::einsum("...thd,...uhd->...htu", {q, k}) * scale;
  auto a = torch::softmax(logits, -1);
  return torch::einsum("...htu,...uhd->...thd", {a, v});
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1 || d_v < 2 || d_z < 1 || ipa_heads < 1 || ipa_c < 1 || ipa_query_points < 1 || ipa_value_points < 1 ||
      spatial_heads < 1 || temporal_heads < 1 || torsion_hidden < 1 || s_mot < 0 || s_ref < 1 || r_max < 1 ||
      time_dim < 2) {
    throw std::invalid_argument("ModelConfig: all sizes must be positive");
  }
  if (ipa_c % ipa_heads != 0) throw std::invalid_argument("ModelConfig: ipa_c must be divisible by ipa_heads");
  if (d_v % spatial_heads != 0 || d_v % temporal_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_v must be divisible by the attention head counts");
  }
  if (d_v % 2 != 0 || time_dim % 2 != 0) throw std::invalid_argument("ModelConfig: d_v and time_dim must be even");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"layers", layers},
          {"d_v", d_v},
          {"d_z", d_z},
          {"ipa_heads", ipa_heads},
          {"ipa_c", ipa_c},
          {"ipa_query_points", ipa_query_points},
          {"ipa_value_points", ipa_value_points},
          {"spatial_heads", spatial_heads},
          {"temporal_heads", temporal_heads},
          {"torsion_hidden", torsion_hidden},
          {"s_mot", s_mot},
          {"s_ref", s_ref},
          {"r_max", r_max},
          {"time_dim", time_dim}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"layers",          "d_v",           "d_z",           "ipa_heads",
                                              "ipa_c",           "ipa_query_points", "ipa_value_points",
                                              "spatial_heads",   "temporal_heads", "torsion_hidden", "s_mot",
                                              "s_ref",           "r_max",         "time_dim"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("ModelConfig: unknown key '" + key + "'");
  }
  ModelConfig c;
  c.layers = j.value("layers", c.layers);
  c.d_v = j.value("d_v", c.d_v);
  c.d_z = j.value("d_z", c.d_z);
  c.ipa_heads = j.value("ipa_heads", c.ipa_heads);
  c.ipa_c = j.value("ipa_c", c.ipa_c);
  c.ipa_query_points = j.value("ipa_query_points", c.ipa_query_points);
  c.ipa_value_points = j.value("ipa_value_points", c.ipa_value_points);
  c.spatial_heads = j.value("spatial_heads", c.spatial_heads);
  c.temporal_heads = j.value("temporal_heads", c.temporal_heads);
  c.torsion_hidden = j.value("torsion_hidden", c.torsion_hidden);
  c.s_mot = j.value("s_mot", c.s_mot);
  c.s_ref = j.value("s_ref", c.s_ref);
  c.r_max = j.value("r_max", c.r_max);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Invariant point attention

IpaImpl::IpaImpl(const ModelConfig& cfg)
    : heads(cfg.ipa_heads),
      c_head(cfg.ipa_c / cfg.ipa_heads),
      pq(cfg.ipa_query_points),
      pv(cfg.ipa_value_points),
      d_z(cfg.d_z) {
  q = register_module("q", linear(cfg.d_v, cfg.ipa_c, false));
  k = register_module("k", linear(cfg.d_v, cfg.ipa_c, false));
  v_lin = register_module("v", linear(cfg.d_v, cfg.ipa_c, false));
  q_pts = register_module("q_pts", linear(cfg.d_v, heads * pq * 3, false));
  k_pts = register_module("k_pts", linear(cfg.d_v, heads * pq * 3, false));
  v_pts = register_module("v_pts", linear(cfg.d_v, heads * pv * 3, false));
  bias = register_module("bias", linear(cfg.d_z, heads, false));
  // softplus(log(e - 1)) = 1
  gamma_raw = register_parameter("gamma_raw", torch::full({heads}, std::log(std::exp(1.0) - 1.0)));
  const int concat_width = heads * (d_z + c_head + 8 * pv);
  out = register_module("out", linear(concat_width, cfg.d_v));
}

torch::Tensor IpaImpl::gamma() const { return torch::softplus(gamma_raw); }

IpaTerms IpaImpl::terms(const torch::Tensor& v, const torch::Tensor& z, const torch::Tensor& rot,
                        const torch::Tensor& trans) {
  const int64_t b = v.size(0), n = v.size(1);
  const auto qs = q->forward(v).view({b, n, heads, c_head});
  const auto ks = k->forward(v).view({b, n, heads, c_head});
  const auto vs = v_lin->forward(v).view({b, n, heads, c_head});

  const auto r = rot.view({b, n, 1, 1, 3, 3});
  const auto x = trans.view({b, n, 1, 1, 3});
  const auto to_global = [&](const torch::Tensor& local) { return rigid_apply(r, x, local); };
  const auto qg = to_global(q_pts->forward(v).view({b, n, heads, pq, 3}));
  const auto kg = to_global(k_pts->forward(v).view({b, n, heads, pq, 3}));
  const auto vg = to_global(v_pts->forward(v).view({b, n, heads, pv, 3}));

  const double w_c = std::sqrt(2.0 / (9.0 * pq));
  const double w_l = std::sqrt(1.0 / 3.0);
  auto scalar = torch::einsum("bihc,bjhc->bhij", {qs, ks}) / std::sqrt(static_cast<double>(c_head));
  auto pair_bias = bias->forward(z).permute({0, 3, 1, 2});
  auto diff = qg.unsqueeze(2) - kg.unsqueeze(1);                     // [b, i, j, h, p, 3]
  auto dist2 = diff.pow(2).sum({-1, -2}).permute({0, 3, 1, 2});      // [b, h, i, j]
  auto logits = w_l * (scalar + pair_bias) - (gamma() * (w_c / 2.0)).view({1, heads, 1, 1}) * dist2;
  auto a = torch::softmax(logits, -1);

  IpaTerms t;
  t.attention = a;
  t.o_bar = torch::einsum("bhij,bijd->bihd", {a, z});
  t.o = torch::einsum("bhij,bjhc->bihc", {a, vs});
  t.o_prime = torch::einsum("bhij,bjhpx->bihpx", {a, vg});
  t.o_pts = rigid_invert_apply(r, x, t.o_prime);
  t.o_pts_norm = torch::sqrt(t.o_pts.pow(2).sum(-1) + 1e-8);
  t.o_prime_norm = torch::sqrt(t.o_prime.pow(2).sum(-1) + 1e-8);
  return t;
}

torch::Tensor IpaImpl::concat(const IpaTerms& t) const {
  const int64_t b = t.o.size(0), n = t.o.size(1);
  return torch::cat({t.o_bar.reshape({b, n, -1}), t.o.reshape({b, n, -1}), t.o_pts.reshape({b, n, -1}),
                     t.o_pts_norm.reshape({b, n, -1}), t.o_prime.reshape({b, n, -1}),
                     t.o_prime_norm.reshape({b, n, -1})},
                    -1);
}

torch::Tensor IpaImpl::forward(const torch::Tensor& v, const torch::Tensor& z, const torch::Tensor& rot,
                               const torch::Tensor& trans) {
  return out->forward(concat(terms(v, z, rot, trans)));
}

// ---------------------------------------------------------------------------
// Reference spatial module

SpatialModuleImpl::SpatialModuleImpl(const ModelConfig& cfg) : heads(cfg.spatial_heads) {
  q = register_module("q", linear(cfg.d_v, cfg.d_v, false));
  k = register_module("k", linear(cfg.d_v, cfg.d_v, false));
  v = register_module("v", linear(cfg.d_v, cfg.d_v, false));
  w_r = register_module("w_r", linear(cfg.d_v, cfg.d_v, false));
}

std::pair<torch::Tensor, torch::Tensor> SpatialModuleImpl::attend(const torch::Tensor& v_ref, const torch::Tensor& v_s) {
  const auto tokens = torch::stack({v_ref.expand_as(v_s), v_s}, -2);  // [..., 2, d]
  auto shape = tokens.sizes().vec();
  shape.back() = heads;
  shape.push_back(tokens.size(-1) / heads);
  const auto out = token_attention(q->forward(tokens).view(shape), k->forward(tokens).view(shape),
                                   v->forward(tokens).view(shape))
                       .flatten(-2);
  return {out.select(-2, 0), out.select(-2, 1)};
}

torch::Tensor SpatialModuleImpl::forward(const torch::Tensor& v_ref, const torch::Tensor& v_s) {
  return w_r->forward(attend(v_ref, v_s).second) + v_s;
}

// ---------------------------------------------------------------------------
// Motion alignment

MotionAlignmentImpl::MotionAlignmentImpl(const ModelConfig& cfg) : heads(cfg.temporal_heads) {
  q = register_module("q", linear(cfg.d_v, cfg.d_v, false));
  k = register_module("k", linear(cfg.d_v, cfg.d_v, false));
  v = register_module("v", linear(cfg.d_v, cfg.d_v, false));
  w_e = register_module("w_e", linear(cfg.d_v, cfg.d_v, false));
  // Zero so enabling the block after stage 1 starts from the stage-1 function.
  zero_(w_e);
}

torch::Tensor MotionAlignmentImpl::forward(const torch::Tensor& v_seq, const torch::Tensor& pe, int64_t s) {
  const int64_t b = v_seq.size(0), s_hat = v_seq.size(1), n = v_seq.size(2), d = v_seq.size(3);
  if (pe.size(0) != s_hat) throw std::invalid_argument("MotionAlignment: position encoding length differs from S_hat");
  if (s < 1 || s > s_hat) throw std::invalid_argument("MotionAlignment: s out of range");
  const auto x = (v_seq + pe.view({1, s_hat, 1, d})).permute({0, 2, 1, 3});  // [b, n, S_hat, d]
  const std::vector<int64_t> shape = {b, n, s_hat, heads, d / heads};
  const auto a = token_attention(q->forward(x).view(shape), k->forward(x).view(shape), v->forward(x).view(shape))
                     .reshape({b, n, s_hat, d})
                     .permute({0, 2, 1, 3});
  const auto tail = a.narrow(1, s_hat - s, s);
  return w_e->forward(tail) + v_seq.narrow(1, s_hat - s, s);
}

// ---------------------------------------------------------------------------
// Edge and backbone updates, torsion head

EdgeUpdateImpl::EdgeUpdateImpl(const ModelConfig& cfg) {
  down = register_module("down", linear(cfg.d_v, cfg.d_v / 2));
  mlp1 = register_module("mlp1", linear(cfg.d_v + cfg.d_z, cfg.d_z));
  mlp2 = register_module("mlp2", linear(cfg.d_z, cfg.d_z));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.d_z})));
}

torch::Tensor EdgeUpdateImpl::forward(const torch::Tensor& v, const torch::Tensor& z) {
  const auto vd = down->forward(v);
  auto shape = z.sizes().vec();
  shape.back() = vd.size(-1);
  const auto zi = vd.unsqueeze(-2).expand(shape);
  const auto zj = vd.unsqueeze(-3).expand(shape);
  const auto z_in = torch::cat({zi, zj, z}, -1);
  return norm->forward(mlp2->forward(torch::relu(mlp1->forward(z_in))));
}

BackboneUpdateImpl::BackboneUpdateImpl(const ModelConfig& cfg) {
  linear = register_module("linear", fourdfold::linear(cfg.d_v, 6));
  zero_(linear);
}

FrameTensors BackboneUpdateImpl::forward(const torch::Tensor& v, const FrameTensors& frames) {
  const auto u = linear->forward(v);
  const FrameTensors update{rot_from_bcd(u.narrow(-1, 0, 3)), u.narrow(-1, 3, 3)};
  return rigid_compose(frames, update);
}

torch::Tensor normalize_torsions(const torch::Tensor& raw) {
  return raw / raw.norm(2, -1, true).clamp_min(kTorsionNormEps);
}

TorsionHeadImpl::TorsionHeadImpl(const ModelConfig& cfg) {
  l1 = register_module("l1", linear(cfg.d_v, cfg.torsion_hidden));
  l2 = register_module("l2", linear(cfg.torsion_hidden, cfg.torsion_hidden));
  l3 = register_module("l3", linear(cfg.torsion_hidden, kNumTorsions * 2));
}

std::pair<torch::Tensor, torch::Tensor> TorsionHeadImpl::forward(const torch::Tensor& v) {
  auto shape = v.sizes().vec();
  shape.back() = kNumTorsions;
  shape.push_back(2);
  const auto raw = l3->forward(torch::relu(l2->forward(torch::relu(l1->forward(v))))).view(shape);
  return {normalize_torsions(raw), raw};
}

// ---------------------------------------------------------------------------
// Trunk

DenoiserImpl::DenoiserImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  embedder = register_module("embedder", Embedder(cfg.embed()));
  ipa = register_module("ipa", torch::nn::ModuleList());
  ipa_norm = register_module("ipa_norm", torch::nn::ModuleList());
  spatial = register_module("spatial", torch::nn::ModuleList());
  motion = register_module("motion", torch::nn::ModuleList());
  edge = register_module("edge", torch::nn::ModuleList());
  backbone = register_module("backbone", torch::nn::ModuleList());
  for (int l = 0; l < cfg.layers; ++l) {
    ipa->push_back(Ipa(cfg));
    ipa_norm->push_back(torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.d_v})));
    spatial->push_back(SpatialModule(cfg));
    motion->push_back(MotionAlignment(cfg));
    edge->push_back(EdgeUpdate(cfg));
    backbone->push_back(BackboneUpdate(cfg));
  }
  torsion = register_module("torsion", TorsionHead(cfg));
}

TrunkOutput DenoiserImpl::forward(const TrunkInput& in) {
  const int64_t b = in.seq.size(0), n = in.seq.size(1);
  const int64_t s = in.noisy.rot.size(1), c = in.clean.rot.size(1);
  if (c != cfg_.s_mot + 1) {
    throw std::invalid_argument("Denoiser: expected " + std::to_string(cfg_.s_mot + 1) + " clean steps, got " +
                                std::to_string(c));
  }
  if (in.noisy.rot.size(0) != b || in.clean.rot.size(0) != b || in.noisy.rot.size(2) != n ||
      in.clean.rot.size(2) != n || in.t.numel() != b) {
    throw std::invalid_argument("Denoiser: batch or residue counts differ between inputs");
  }
  const int64_t s_hat = c + s;
  const int64_t dv = cfg_.d_v, dz = cfg_.d_z;
  const auto dtype = embedder->residue->weight.scalar_type();

  auto [v0, z0] = embedder->embed_sequence(in.seq);
  auto [tv_noisy, tz_noisy] = embedder->embed_time(in.t);
  auto [tv_clean, tz_clean] = embedder->embed_time(torch::zeros({b}, torch::kFloat64));
  const auto v_clean = (v0 + tv_clean.view({b, 1, dv})).unsqueeze(1).expand({b, c, n, dv});
  const auto v_noisy = (v0 + tv_noisy.view({b, 1, dv})).unsqueeze(1).expand({b, s, n, dv});
  const auto z_clean = (z0 + tz_clean.view({b, 1, 1, dz})).unsqueeze(1).expand({b, c, n, n, dz});
  const auto z_noisy = (z0 + tz_noisy.view({b, 1, 1, dz})).unsqueeze(1).expand({b, s, n, n, dz});
  auto v = torch::cat({v_clean, v_noisy}, 1);
  auto z = torch::cat({z_clean, z_noisy}, 1);

  std::vector<int> idx;
  for (int k = 0; k < cfg_.s_mot; ++k) idx.push_back(k);
  idx.push_back(cfg_.s_mot + cfg_.s_ref - 1);
  for (int64_t j = 0; j < s; ++j) idx.push_back(cfg_.s_mot + cfg_.s_ref + static_cast<int>(j));
  const auto pe = temporal_position_encoding(idx, cfg_.d_v, dtype);

  const FrameTensors clean{in.clean.rot.to(dtype), in.clean.trans.to(dtype)};
  FrameTensors noisy{in.noisy.rot.to(dtype), in.noisy.trans.to(dtype)};

  for (int l = 0; l < cfg_.layers; ++l) {
    const auto rot = torch::cat({clean.rot, noisy.rot}, 1).reshape({b * s_hat, n, 3, 3});
    const auto trans = torch::cat({clean.trans, noisy.trans}, 1).reshape({b * s_hat, n, 3});
    auto vf = v.reshape({b * s_hat, n, dv});
    const auto zf = z.reshape({b * s_hat, n, n, dz});
    vf = ipa_norm[l]->as<torch::nn::LayerNormImpl>()->forward(vf + ipa[l]->as<IpaImpl>()->forward(vf, zf, rot, trans));
    v = vf.view({b, s_hat, n, dv});

    auto v_n = spatial[l]->as<SpatialModuleImpl>()->forward(v.narrow(1, c - 1, 1), v.narrow(1, c, s));
    v = torch::cat({v.narrow(1, 0, c), v_n}, 1);
    if (motion_enabled_) {
      v_n = motion[l]->as<MotionAlignmentImpl>()->forward(v, pe, s);
      v = torch::cat({v.narrow(1, 0, c), v_n}, 1);
    }
    z = edge[l]->as<EdgeUpdateImpl>()->forward(v.reshape({b * s_hat, n, dv}), zf).view({b, s_hat, n, n, dz});
    noisy = backbone[l]->as<BackboneUpdateImpl>()->forward(v.narrow(1, c, s), noisy);

    if (!torch::isfinite(v).all().item<bool>() || !torch::isfinite(noisy.trans).all().item<bool>()) {
      throw NonFiniteActivation("Denoiser: non-finite activations after layer " + std::to_string(l));
    }
  }
  auto [tors, raw] = torsion->forward(v.narrow(1, c, s));
  return {noisy, tors, raw};
}

std::vector<torch::Tensor> DenoiserImpl::motion_parameters() const { return motion->parameters(); }

std::vector<torch::Tensor> DenoiserImpl::non_motion_parameters() const {
  std::vector<torch::Tensor> out;
  std::set<const void*> skip;
  for (const auto& p : motion->parameters()) skip.insert(p.unsafeGetTensorImpl());
  for (const auto& p : parameters()) {
    if (!skip.count(p.unsafeGetTensorImpl())) out.push_back(p);
  }
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> ordered_parameters(const torch::nn::Module& m) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : m.named_parameters(true)) out.emplace_back(item.key(), item.value());
  return out;
}

std::string parameter_checksum(const std::vector<torch::Tensor>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    const auto c = p.detach().contiguous().cpu();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const std::size_t count = static_cast<std::size_t>(c.numel()) * c.element_size();
    for (std::size_t k = 0; k < count; ++k) {
      h ^= bytes[k];
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fourdfold

#include "fourdfold/torch_geom.hpp"

#include <algorithm>
#include <cmath>

namespace fourdfold {

namespace {

class ScoreCoefficientFn : public torch::autograd::Function<ScoreCoefficientFn> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& c, double sigma2) {
    const torch::Tensor cd = c.detach().to(torch::kFloat64).contiguous().cpu();
    torch::Tensor value = torch::empty_like(cd);
    torch::Tensor slope = torch::empty_like(cd);
    const double* in = cd.data_ptr<double>();
    double* v = value.data_ptr<double>();
    double* s = slope.data_ptr<double>();
    for (int64_t k = 0; k < cd.numel(); ++k) {
      const ScoreCoefficient sc = igso3_score_coefficient(std::clamp(in[k], -1.0, 1.0), sigma2);
      v[k] = sc.value;
      s[k] = sc.slope;
    }
    ctx->save_for_backward({slope.to(c.dtype())});
    return value.to(c.dtype());
  }

  static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* ctx,
                                               torch::autograd::tensor_list grad) {
    const torch::Tensor slope = ctx->get_saved_variables()[0];
    return {grad[0] * slope, torch::Tensor()};
  }
};

}  // namespace

torch::Tensor quat_to_rot_t(const torch::Tensor& q) {
  const auto w = q.select(-1, 0), x = q.select(-1, 1), y = q.select(-1, 2), z = q.select(-1, 3);
  const auto r00 = 1 - 2 * (y * y + z * z), r01 = 2 * (x * y - w * z), r02 = 2 * (x * z + w * y);
  const auto r10 = 2 * (x * y + w * z), r11 = 1 - 2 * (x * x + z * z), r12 = 2 * (y * z - w * x);
  const auto r20 = 2 * (x * z - w * y), r21 = 2 * (y * z + w * x), r22 = 1 - 2 * (x * x + y * y);
  const auto row0 = torch::stack({r00, r01, r02}, -1);
  const auto row1 = torch::stack({r10, r11, r12}, -1);
  const auto row2 = torch::stack({r20, r21, r22}, -1);
  return torch::stack({row0, row1, row2}, -2);
}

torch::Tensor rot_from_bcd(const torch::Tensor& bcd) {
  const auto ones = torch::ones_like(bcd.select(-1, 0)).unsqueeze(-1);
  const auto q = torch::cat({ones, bcd}, -1);
  return quat_to_rot_t(q / q.norm(2, -1, true));
}

torch::Tensor rigid_apply(const torch::Tensor& rot, const torch::Tensor& trans, const torch::Tensor& points) {
  return torch::matmul(rot, points.unsqueeze(-1)).squeeze(-1) + trans;
}

torch::Tensor rigid_invert_apply(const torch::Tensor& rot, const torch::Tensor& trans, const torch::Tensor& points) {
  return torch::matmul(rot.transpose(-1, -2), (points - trans).unsqueeze(-1)).squeeze(-1);
}

FrameTensors rigid_compose(const FrameTensors& a, const FrameTensors& b) {
  return {torch::matmul(a.rot, b.rot), rigid_apply(a.rot, a.trans, b.trans)};
}

torch::Tensor vee_t(const torch::Tensor& m) {
  const auto at = [&](int a, int b) { return m.select(-2, a).select(-1, b); };
  return 0.5 * torch::stack({at(2, 1) - at(1, 2), at(0, 2) - at(2, 0), at(1, 0) - at(0, 1)}, -1);
}

torch::Tensor igso3_score_coefficient_t(const torch::Tensor& cos_omega, double sigma2) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("igso3_score_coefficient_t: sigma2 must be positive");
  return ScoreCoefficientFn::apply(cos_omega, sigma2);
}

torch::Tensor rot_score_t(const torch::Tensor& r_t, const torch::Tensor& r_0, double sigma2) {
  const auto rel = torch::matmul(r_0.transpose(-1, -2), r_t);
  const auto c = ((rel.diagonal(0, -2, -1).sum(-1) - 1.0) * 0.5).clamp(-1.0, 1.0);
  return igso3_score_coefficient_t(c, sigma2).unsqueeze(-1) * vee_t(rel);
}

torch::Tensor trans_score_t(const torch::Tensor& x_t, const torch::Tensor& x_0, double t) {
  if (!(t > 0.0)) throw std::invalid_argument("trans_score_t: t must be positive");
  return -(x_t - std::exp(-t / 2.0) * x_0) / (1.0 - std::exp(-t));
}

FrameTensors frames_to_tensors(const std::vector<Rigid>& frames, double scale, torch::Dtype dtype) {
  const int64_t n = static_cast<int64_t>(frames.size());
  auto rot = torch::empty({n, 3, 3}, torch::kFloat64);
  auto trans = torch::empty({n, 3}, torch::kFloat64);
  auto r = rot.accessor<double, 3>();
  auto x = trans.accessor<double, 2>();
  for (int64_t i = 0; i < n; ++i) {
    const Mat3& m = frames[static_cast<std::size_t>(i)].rot.matrix();
    for (int a = 0; a < 3; ++a) {
      x[i][a] = frames[static_cast<std::size_t>(i)].trans[a] * scale;
      for (int b = 0; b < 3; ++b) r[i][a][b] = m(a, b);
    }
  }
  return {rot.to(dtype), trans.to(dtype)};
}

FrameTensors frames_to_tensors(const FrameGrid& grid, double scale, torch::Dtype dtype) {
  FrameTensors flat = frames_to_tensors(grid.data(), scale, dtype);
  const int64_t s = static_cast<int64_t>(grid.s_count()), n = static_cast<int64_t>(grid.n_count());
  return {flat.rot.view({s, n, 3, 3}), flat.trans.view({s, n, 3})};
}

FrameGrid tensors_to_frames(const FrameTensors& t, double scale) {
  if (t.rot.dim() != 4 || t.trans.dim() != 3) throw std::invalid_argument("tensors_to_frames: expected [S, N, 3, 3] and [S, N, 3]");
  const auto rot = t.rot.detach().to(torch::kFloat64).contiguous();
  const auto trans = t.trans.detach().to(torch::kFloat64).contiguous();
  const auto s = static_cast<std::size_t>(rot.size(0)), n = static_cast<std::size_t>(rot.size(1));
  FrameGrid grid(s, n);
  auto r = rot.accessor<double, 4>();
  auto x = trans.accessor<double, 3>();
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t i = 0; i < n; ++i) {
      Mat3 m;
      Vec3 p;
      for (int u = 0; u < 3; ++u) {
        p[u] = x[static_cast<int64_t>(a)][static_cast<int64_t>(i)][u] / scale;
        for (int v = 0; v < 3; ++v) m(u, v) = r[static_cast<int64_t>(a)][static_cast<int64_t>(i)][u][v];
      }
      grid.at(a, i) = Rigid{Rotation(m).orthonormalized(), p};
    }
  }
  return grid;
}

}  // namespace fourdfold

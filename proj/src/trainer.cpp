#include "fourdfold/trainer.hpp"

#include "fourdfold/sampler.hpp"

#include <ATen/Parallel.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace fourdfold {

namespace {

torch::Tensor vec3s_to_tensor(const std::vector<Vec3>& v, int64_t s, int64_t n, torch::Dtype dtype) {
  auto out = torch::empty({s, n, 3}, torch::kFloat64);
  auto a = out.accessor<double, 3>();
  for (int64_t k = 0; k < s; ++k) {
    for (int64_t i = 0; i < n; ++i) {
      const Vec3& p = v[static_cast<std::size_t>(k * n + i)];
      for (int u = 0; u < 3; ++u) a[k][i][u] = p[u];
    }
  }
  return out.to(dtype);
}

// Everything about one (window, t, noise) draw that does not depend on the parameters.
struct Prepared {
  double t = 0.0;
  TrunkInput input;
  FrameTensors noisy;         // [S, N] scaled
  torch::Tensor target_rot;   // [S, N, 3]
  torch::Tensor target_trans;
  torch::Tensor seq;          // [N]
  torch::Tensor gt_torsions, alt_torsions, torsion_mask;  // [S, N, 7, 2] / [S, N, 7]
  torch::Tensor gt_atoms;     // [S, N, 4, 3] Angstrom, centred
};

Prepared prepare(const WindowSample& w, double t, const DiffusionSchedule& sched, Rng& rng, torch::Dtype dtype) {
  const auto& seq = w.reference.sequence;
  const std::size_t n = seq.size(), s = w.targets.size();
  const Vec3 centre = reference_centroid(w.reference);
  FrameGrid target(s, n);
  std::vector<torch::Tensor> gt, alt, mask;
  for (std::size_t k = 0; k < s; ++k) {
    const ProteinState& st = w.targets[k];
    for (std::size_t i = 0; i < n; ++i) target.at(k, i) = Rigid{st.frames[i].rot, st.frames[i].trans - centre};
    auto [a, m] = torsions_to_tensor(st.torsions, dtype);
    gt.push_back(a);
    mask.push_back(m);
    alt.push_back(torsions_to_tensor(alt_torsions(seq, st.torsions), dtype).first);
  }
  Prepared p;
  p.t = t;
  const NoisedSample ns = forward_noise(target, t, sched, rng);
  p.input = make_trunk_input(seq, w.reference, w.motion, ns.noisy, t, centre, dtype);
  p.noisy = frames_to_tensors(ns.noisy, 1.0, dtype);
  p.target_rot = vec3s_to_tensor(ns.rot_scores, static_cast<int64_t>(s), static_cast<int64_t>(n), dtype);
  p.target_trans = vec3s_to_tensor(ns.trans_scores, static_cast<int64_t>(s), static_cast<int64_t>(n), dtype);
  p.seq = residue_indices(seq);
  p.gt_torsions = torch::stack(gt);
  p.alt_torsions = torch::stack(alt);
  p.torsion_mask = torch::stack(mask);
  const FrameTensors gt_frames = frames_to_tensors(target, 1.0, dtype);
  p.gt_atoms = backbone_atoms_t(p.seq, gt_frames, p.gt_torsions.select(-2, kPsi));
  return p;
}

std::pair<torch::Tensor, LossReport> element_loss(const Prepared& p, const FrameTensors& pred, const torch::Tensor& tors,
                                                  const DiffusionSchedule& sched, const LossWeights& weights) {
  const auto [pred_rot, pred_trans] = score_from_prediction_t(pred, p.noisy, p.t, sched);
  const auto [dsm_rot, dsm_trans] = dsm_loss(pred_rot, pred_trans, p.target_rot, p.target_trans, p.t, sched);
  const auto tl = torsion_loss(tors, p.gt_torsions, p.alt_torsions, p.torsion_mask);
  const FrameTensors pred_angstrom{pred.rot, pred.trans / kTranslationScale};
  const auto atoms = backbone_atoms_t(p.seq, pred_angstrom, tors.select(-2, kPsi));
  const AuxLosses aux = aux_losses(atoms, p.gt_atoms);
  auto [total, report] = total_loss({dsm_rot, dsm_trans, tl, aux.l_omega, aux.l_2d}, p.t, weights);
  report.l2d_degenerate = aux.l2d_degenerate;
  return {total, report};
}

template <typename T>
T json_get(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (batch_size < 1 || !(learning_rate > 0.0) || epochs < 1 || max_steps < 0 || s < 1 || stride < 1 ||
      !(grad_clip > 0.0) || checkpoint_every < 0) {
    throw std::invalid_argument("TrainConfig: numeric settings must be positive");
  }
  if (stage != 1 && stage != 2) throw std::invalid_argument("TrainConfig: stage must be 1 or 2");
  if (!(t_min > 0.0) || !(t_min < 1.0)) throw std::invalid_argument("TrainConfig: t_min must lie in (0, 1)");
  if (split != "s2l" && split != "all") throw std::invalid_argument("TrainConfig: split must be 's2l' or 'all'");
  rotation.validate();
  model.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"epochs", epochs},
          {"max_steps", max_steps},
          {"stage", stage},
          {"seed", seed},
          {"s", s},
          {"stride", stride},
          {"t_min", t_min},
          {"grad_clip", grad_clip},
          {"w1", weights.w1},
          {"w2", weights.w2},
          {"sigma_min", rotation.sigma_min},
          {"sigma_max", rotation.sigma_max},
          {"model", model.to_json()},
          {"float64", float64},
          {"data", data},
          {"split", split},
          {"output", output},
          {"init_checkpoint", init_checkpoint},
          {"log", log},
          {"embedding", embedding},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const std::string& base_dir) {
  static const std::set<std::string> known = {
      "batch_size", "learning_rate", "epochs", "max_steps", "stage", "seed", "s", "stride", "t_min", "grad_clip",
      "w1", "w2", "sigma_min", "sigma_max", "model", "float64", "data", "split", "output", "init_checkpoint", "log",
      "embedding", "checkpoint_every"};
  if (!j.is_object()) throw std::invalid_argument("TrainConfig: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("TrainConfig: unknown key '" + key + "'");
  }
  const auto resolve = [&](const std::string& p) {
    if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
    return (std::filesystem::path(base_dir) / p).string();
  };
  TrainConfig c;
  c.batch_size = json_get(j, "batch_size", c.batch_size);
  c.learning_rate = json_get(j, "learning_rate", c.learning_rate);
  c.epochs = json_get(j, "epochs", c.epochs);
  c.max_steps = json_get(j, "max_steps", c.max_steps);
  c.stage = json_get(j, "stage", c.stage);
  c.seed = json_get(j, "seed", c.seed);
  c.s = json_get(j, "s", c.s);
  c.stride = json_get(j, "stride", c.stride);
  c.t_min = json_get(j, "t_min", c.t_min);
  c.grad_clip = json_get(j, "grad_clip", c.grad_clip);
  c.weights.w1 = json_get(j, "w1", c.weights.w1);
  c.weights.w2 = json_get(j, "w2", c.weights.w2);
  c.rotation.sigma_min = json_get(j, "sigma_min", c.rotation.sigma_min);
  c.rotation.sigma_max = json_get(j, "sigma_max", c.rotation.sigma_max);
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  c.float64 = json_get(j, "float64", c.float64);
  for (const auto& p : json_get(j, "data", std::vector<std::string>{})) c.data.push_back(resolve(p));
  c.split = json_get(j, "split", c.split);
  c.output = resolve(json_get(j, "output", c.output));
  c.init_checkpoint = resolve(json_get(j, "init_checkpoint", c.init_checkpoint));
  c.log = resolve(json_get(j, "log", c.log));
  c.embedding = resolve(json_get(j, "embedding", c.embedding));
  c.checkpoint_every = json_get(j, "checkpoint_every", c.checkpoint_every);
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("config: invalid JSON: ") + e.what());
  }
  TrainConfig c = from_json(j, std::filesystem::path(path).parent_path().string());
  if (const char* env = std::getenv("FOURDFOLD_SEED"); env && *env) {
    try {
      c.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("FOURDFOLD_SEED is not an unsigned integer: ") + env);
    }
  }
  return c;
}

std::vector<WindowSample> training_windows(const TrainConfig& cfg) {
  if (cfg.data.empty()) throw std::invalid_argument("training_windows: no data files configured");
  std::vector<WindowSample> out;
  for (const auto& path : cfg.data) {
    Trajectory traj = load_trajectory(path);
    if (cfg.split == "s2l") traj = split_s2l(traj).first;
    WindowList wl = make_windows(traj, cfg.model.s_mot, cfg.model.s_ref, cfg.s, cfg.stride,
                                 std::filesystem::path(path).stem().string());
    for (auto& w : wl.windows) out.push_back(std::move(w));
  }
  if (out.empty()) throw std::runtime_error("training_windows: every trajectory is shorter than one window");
  return out;
}

nlohmann::json StepRecord::to_json() const {
  return {{"step", step},           {"epoch", epoch},         {"stage", stage},
          {"lr", lr},               {"t_mean", t_mean},       {"grad_norm", grad_norm},
          {"dsm_rot", mean.dsm_rot}, {"dsm_trans", mean.dsm_trans}, {"torsion", mean.torsion},
          {"l_omega", mean.l_omega}, {"l_2d", mean.l_2d},      {"total", mean.total}};
}

void seed_torch(std::uint64_t seed) {
  at::set_num_threads(1);
  torch::manual_seed(seed);
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig cfg, std::vector<WindowSample> windows, std::optional<Denoiser> init)
    : Trainer(cfg, std::move(windows), [&]() -> Denoiser {
        cfg.validate();
        seed_torch(cfg.seed);
        if (cfg.stage == 2 && !init) {
          if (cfg.init_checkpoint.empty()) throw std::invalid_argument("Trainer: stage 2 needs init_checkpoint");
          return load_checkpoint(cfg.init_checkpoint).model;
        }
        Denoiser fresh(init ? (*init)->config() : cfg.model);
        if (init) copy_parameters(*init, fresh);
        return fresh;
      }()) {}

Trainer::Trainer(TrainConfig cfg, std::vector<WindowSample> windows, Denoiser model)
    : cfg_(std::move(cfg)), windows_(std::move(windows)), model_(std::move(model)), rng_(cfg_.seed) {
  cfg_.model = model_->config();
  cfg_.validate();
  if (windows_.empty()) throw std::invalid_argument("Trainer: no training windows");
  for (const auto& w : windows_) {
    if (static_cast<int>(w.targets.size()) != cfg_.s || static_cast<int>(w.motion.size()) != cfg_.model.s_mot) {
      throw std::invalid_argument("Trainer: window layout differs from the configuration");
    }
  }
  at::set_num_threads(1);
  if (cfg_.float64) model_->to(torch::kFloat64);
  if (!cfg_.embedding.empty()) model_->embedder->set_precomputed(load_precomputed_embedding(cfg_.embedding));
  sched_ = std::make_shared<DiffusionSchedule>(cfg_.rotation);
  configure_stage();
}

void Trainer::configure_stage() {
  const bool stage2 = cfg_.stage == 2;
  model_->set_motion_alignment_enabled(stage2);
  for (auto& p : model_->motion_parameters()) p.set_requires_grad(stage2);
  for (auto& p : model_->non_motion_parameters()) p.set_requires_grad(!stage2);
  trainable_ = stage2 ? model_->motion_parameters() : model_->non_motion_parameters();
  optimizer_ = std::make_unique<torch::optim::Adam>(trainable_, torch::optim::AdamOptions(cfg_.learning_rate));
}

std::int64_t Trainer::steps_per_epoch() const {
  const auto w = static_cast<std::int64_t>(windows_.size());
  return (w + cfg_.batch_size - 1) / cfg_.batch_size;
}

std::int64_t Trainer::total_steps() const {
  return cfg_.max_steps > 0 ? cfg_.max_steps : static_cast<std::int64_t>(cfg_.epochs) * steps_per_epoch();
}

double Trainer::learning_rate_at(std::int64_t step) const {
  const double horizon = static_cast<double>(std::max<std::int64_t>(total_steps(), 1));
  const double frac = std::min(static_cast<double>(step), horizon) / horizon;
  return cfg_.learning_rate * 0.5 * (1.0 + std::cos(M_PI * frac));
}

std::vector<std::size_t> Trainer::next_batch() {
  if (cursor_ >= order_.size()) {
    if (!order_.empty()) ++epoch_;
    order_.resize(windows_.size());
    for (std::size_t k = 0; k < order_.size(); ++k) order_[k] = k;
    for (std::size_t k = order_.size(); k > 1; --k) {
      std::uniform_int_distribution<std::size_t> pick(0, k - 1);
      std::swap(order_[k - 1], order_[pick(rng_)]);
    }
    cursor_ = 0;
  }
  const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(cfg_.batch_size));
  std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return batch;
}

std::pair<torch::Tensor, LossReport> Trainer::window_loss(const WindowSample& w, double t, Rng& rng) {
  const auto dtype = model_->embedder->residue->weight.scalar_type();
  const Prepared p = prepare(w, t, *sched_, rng, dtype);
  const TrunkOutput out = model_->forward(p.input);
  return element_loss(p, {out.frames.rot[0], out.frames.trans[0]}, out.torsions[0], *sched_, cfg_.weights);
}

std::pair<std::vector<torch::Tensor>, std::vector<LossReport>> Trainer::batch_losses(
    const std::vector<std::size_t>& batch, const std::vector<double>& ts) {
  const auto dtype = model_->embedder->residue->weight.scalar_type();
  std::vector<Prepared> prepared;
  bool same_n = true;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    prepared.push_back(prepare(windows_[batch[k]], ts[k], *sched_, rng_, dtype));
    same_n = same_n && prepared[k].seq.size(0) == prepared[0].seq.size(0);
  }
  std::vector<torch::Tensor> totals;
  std::vector<LossReport> reports;
  const auto add = [&](const Prepared& p, const FrameTensors& pred, const torch::Tensor& tors) {
    auto [total, report] = element_loss(p, pred, tors, *sched_, cfg_.weights);
    totals.push_back(total);
    reports.push_back(report);
  };
  if (same_n && !model_->embedder->has_precomputed()) {
    TrunkInput in;
    std::vector<torch::Tensor> seq, t, nr, nt, cr, ct;
    for (const auto& p : prepared) {
      seq.push_back(p.input.seq);
      t.push_back(p.input.t);
      nr.push_back(p.input.noisy.rot);
      nt.push_back(p.input.noisy.trans);
      cr.push_back(p.input.clean.rot);
      ct.push_back(p.input.clean.trans);
    }
    in.seq = torch::cat(seq);
    in.t = torch::cat(t);
    in.noisy = {torch::cat(nr), torch::cat(nt)};
    in.clean = {torch::cat(cr), torch::cat(ct)};
    const TrunkOutput out = model_->forward(in);
    for (std::size_t k = 0; k < prepared.size(); ++k) {
      const auto b = static_cast<int64_t>(k);
      add(prepared[k], {out.frames.rot[b], out.frames.trans[b]}, out.torsions[b]);
    }
  } else {
    for (const auto& p : prepared) {
      const TrunkOutput out = model_->forward(p.input);
      add(p, {out.frames.rot[0], out.frames.trans[0]}, out.torsions[0]);
    }
  }
  return {totals, reports};
}

StepRecord Trainer::step() {
  const std::vector<std::size_t> batch = next_batch();
  std::uniform_real_distribution<double> uniform_t(cfg_.t_min, 1.0);
  std::vector<double> ts;
  for (std::size_t k = 0; k < batch.size(); ++k) ts.push_back(uniform_t(rng_));

  StepRecord rec;
  rec.stage = cfg_.stage;
  rec.epoch = epoch_;
  rec.lr = learning_rate_at(step_);
  for (auto& group : optimizer_->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(rec.lr);

  optimizer_->zero_grad();
  auto [totals, reports] = batch_losses(batch, ts);
  const auto loss = torch::stack(totals).mean();
  loss.backward();
  rec.grad_norm = torch::nn::utils::clip_grad_norm_(trainable_, cfg_.grad_clip);
  if (!std::isfinite(rec.grad_norm)) {
    throw NonFiniteLoss("training diverged: non-finite gradient norm at step " + std::to_string(step_));
  }
  optimizer_->step();

  const double inv = 1.0 / static_cast<double>(reports.size());
  for (const auto& r : reports) {
    rec.mean.dsm_rot += r.dsm_rot * inv;
    rec.mean.dsm_trans += r.dsm_trans * inv;
    rec.mean.torsion += r.torsion * inv;
    rec.mean.l_omega += r.l_omega * inv;
    rec.mean.l_2d += r.l_2d * inv;
    rec.mean.total += r.total * inv;
    rec.mean.t += r.t * inv;
    rec.mean.l2d_degenerate = rec.mean.l2d_degenerate || r.l2d_degenerate;
  }
  rec.t_mean = rec.mean.t;
  rec.step = ++step_;
  return rec;
}

void Trainer::run(std::ostream* log, const std::function<bool(const StepRecord&)>& on_step) {
  while (step_ < total_steps()) {
    const StepRecord rec = step();
    if (log) *log << rec.to_json().dump() << '\n' << std::flush;
    if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) save(cfg_.output);
    if (on_step && !on_step(rec)) break;
  }
}

void Trainer::save(const std::string& path) {
  std::ostringstream rng_state;
  rng_state << rng_;
  nlohmann::json meta = {{"model", cfg_.model.to_json()},
                         {"train", cfg_.to_json()},
                         {"stage", cfg_.stage},
                         {"step", step_},
                         {"epoch", epoch_},
                         {"cursor", cursor_},
                         {"order", order_},
                         {"rng", rng_state.str()}};
  save_checkpoint(path, model_, meta, optimizer_.get());
}

std::unique_ptr<Trainer> Trainer::resume(const std::string& path, std::vector<WindowSample> windows) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  if (!ckpt.meta.contains("train")) throw std::runtime_error("resume: checkpoint has no training state");
  TrainConfig cfg = TrainConfig::from_json(ckpt.meta.at("train"));
  seed_torch(cfg.seed);
  std::unique_ptr<Trainer> tr(new Trainer(cfg, std::move(windows), ckpt.model));
  if (ckpt.has_optimizer) load_optimizer_state(ckpt, *tr->optimizer_);
  std::istringstream rng_state(ckpt.meta.at("rng").get<std::string>());
  rng_state >> tr->rng_;
  tr->order_ = ckpt.meta.at("order").get<std::vector<std::size_t>>();
  tr->cursor_ = ckpt.meta.at("cursor").get<std::size_t>();
  tr->epoch_ = ckpt.meta.at("epoch").get<int>();
  tr->step_ = ckpt.meta.at("step").get<std::int64_t>();
  if (tr->order_.size() != tr->windows_.size() && !tr->order_.empty()) {
    throw std::runtime_error("resume: window count differs from the checkpointed run");
  }
  return tr;
}

void train_stage1(const TrainConfig& cfg, const std::vector<WindowSample>& windows, std::ostream* log) {
  if (cfg.stage != 1) throw std::invalid_argument("train_stage1: config stage must be 1");
  Trainer tr(cfg, windows);
  tr.run(log);
  tr.save(cfg.output);
}

void train_stage2(const TrainConfig& cfg, const std::vector<WindowSample>& windows, std::ostream* log) {
  if (cfg.stage != 2) throw std::invalid_argument("train_stage2: config stage must be 2");
  Trainer tr(cfg, windows);
  tr.run(log);
  tr.save(cfg.output);
}

}  // namespace fourdfold

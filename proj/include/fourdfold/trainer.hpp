#pragma once
// Two-stage training. Stage 1 fits everything except the temporal blocks,
// which are bypassed; stage 2 fits only the temporal blocks.
#include "fourdfold/checkpoint.hpp"
#include "fourdfold/dataio.hpp"
#include "fourdfold/diffusion.hpp"
#include "fourdfold/network.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fourdfold {

struct TrainConfig {
  int batch_size = 4;
  double learning_rate = 1e-4;
  int epochs = 50;
  int max_steps = 0;  // > 0 replaces epochs as the run length and cosine horizon
  int stage = 1;
  std::uint64_t seed = 0;
  int s = 8;  // target steps per window
  int stride = 1;
  double t_min = 0.01;
  double grad_clip = 1.0;
  LossWeights weights;
  RotationSchedule rotation;
  ModelConfig model;
  bool float64 = false;

  std::vector<std::string> data;  // trajectory files
  std::string split = "s2l";      // "s2l": train on the first 90% of each file; "all": every state
  std::string output = "checkpoint.pt";
  std::string init_checkpoint;    // stage-1 checkpoint for stage 2
  std::string log;                // JSON-lines path, empty for none
  std::string embedding;          // optional precomputed embedding (fourdfold-embedding/1)
  int checkpoint_every = 0;       // steps; 0 saves only at the end

  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected. Relative paths resolve against `base_dir`.
  static TrainConfig from_json(const nlohmann::json& j, const std::string& base_dir = "");
  /// Reads a JSON config; FOURDFOLD_SEED, when set, overrides the seed.
  static TrainConfig load(const std::string& path);
};

/// Windows from every configured file, honouring the split.
std::vector<WindowSample> training_windows(const TrainConfig& cfg);

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  int stage = 1;
  double lr = 0.0;
  double t_mean = 0.0;
  double grad_norm = 0.0;
  LossReport mean;  // losses averaged over the batch
  nlohmann::json to_json() const;
};

class Trainer {
 public:
  /// Fresh run. Stage 2 copies weights from cfg.init_checkpoint unless `init` is given.
  Trainer(TrainConfig cfg, std::vector<WindowSample> windows, std::optional<Denoiser> init = std::nullopt);

  /// Continues from a checkpoint written by save(); optimizer, RNG and batch order included.
  static std::unique_ptr<Trainer> resume(const std::string& path, std::vector<WindowSample> windows);

  StepRecord step();
  /// Runs until total_steps(); `on_step` may return false to stop early.
  void run(std::ostream* log = nullptr, const std::function<bool(const StepRecord&)>& on_step = {});

  void save(const std::string& path);

  std::int64_t steps_done() const { return step_; }
  std::int64_t total_steps() const;
  std::int64_t steps_per_epoch() const;
  double learning_rate_at(std::int64_t step) const;

  Denoiser& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const DiffusionSchedule& schedule() const { return *sched_; }

  /// Loss of one window at a given t and noise draw, with gradients attached.
  std::pair<torch::Tensor, LossReport> window_loss(const WindowSample& w, double t, Rng& rng);

 private:
  Trainer(TrainConfig cfg, std::vector<WindowSample> windows, Denoiser model);
  void configure_stage();
  std::vector<std::size_t> next_batch();
  std::pair<std::vector<torch::Tensor>, std::vector<LossReport>> batch_losses(const std::vector<std::size_t>& batch,
                                                                              const std::vector<double>& ts);

  TrainConfig cfg_;
  std::vector<WindowSample> windows_;
  Denoiser model_{nullptr};
  std::shared_ptr<DiffusionSchedule> sched_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::vector<torch::Tensor> trainable_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int epoch_ = 0;
  std::int64_t step_ = 0;
};

/// Convenience wrappers writing cfg.output.
void train_stage1(const TrainConfig& cfg, const std::vector<WindowSample>& windows, std::ostream* log = nullptr);
void train_stage2(const TrainConfig& cfg, const std::vector<WindowSample>& windows, std::ostream* log = nullptr);

/// Deterministic torch setup: single thread, seeded generator.
void seed_torch(std::uint64_t seed);

}  // namespace fourdfold

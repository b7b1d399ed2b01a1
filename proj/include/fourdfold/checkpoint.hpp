#pragma once
// Checkpoint file: a torch archive holding every named parameter under
// "params/<name>", the optimizer state under "optim" (optional) and a JSON
// metadata string under "meta" whose "format" is kCheckpointFormat.
#include "fourdfold/network.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <memory>
#include <string>

namespace fourdfold {

inline constexpr const char* kCheckpointFormat = "fourdfold-ckpt/1";

/// `meta` must contain "model" (ModelConfig JSON); "format" is filled in.
void save_checkpoint(const std::string& path, const Denoiser& model, nlohmann::json meta,
                     torch::optim::Optimizer* optimizer = nullptr);

struct LoadedCheckpoint {
  nlohmann::json meta;
  Denoiser model{nullptr};
  bool has_optimizer = false;
  std::shared_ptr<torch::serialize::InputArchive> archive;
};

/// Rebuilds the model from meta["model"] and copies parameters bit-exactly. Throws std::runtime_error.
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Restores optimizer state saved alongside the parameters.
void load_optimizer_state(const LoadedCheckpoint& ckpt, torch::optim::Optimizer& optimizer);

/// Copies parameters of `src` into `dst` (same config). Used to start stage 2 from stage 1.
void copy_parameters(const Denoiser& src, Denoiser& dst);

}  // namespace fourdfold

#include "fourdfold/checkpoint.hpp"

#include <fstream>

namespace fourdfold {

void save_checkpoint(const std::string& path, const Denoiser& model, nlohmann::json meta,
                     torch::optim::Optimizer* optimizer) {
  if (!meta.contains("model")) meta["model"] = model->config().to_json();
  meta["format"] = kCheckpointFormat;
  meta["param_checksum"] = parameter_checksum(model->parameters());
  meta["dtype"] = model->embedder->residue->weight.scalar_type() == torch::kFloat64 ? "float64" : "float32";
  torch::serialize::OutputArchive archive;
  archive.write("meta", c10::IValue(meta.dump()));
  for (const auto& [name, p] : ordered_parameters(*model)) archive.write("params/" + name, p.detach(), false);
  if (optimizer) {
    torch::serialize::OutputArchive opt;
    optimizer->save(opt);
    archive.write("optim", opt);
  }
  // Write through a temporary so a crash never leaves a truncated checkpoint.
  const std::string tmp = path + ".tmp";
  archive.save_to(tmp);
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("checkpoint: cannot write " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  if (!std::ifstream(path)) throw std::runtime_error("checkpoint: cannot open " + path);
  LoadedCheckpoint out;
  out.archive = std::make_shared<torch::serialize::InputArchive>();
  try {
    out.archive->load_from(path);
  } catch (const c10::Error& e) {
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint archive");
  }
  c10::IValue meta;
  if (!out.archive->try_read("meta", meta) || !meta.isString()) throw std::runtime_error("checkpoint: missing metadata");
  out.meta = nlohmann::json::parse(meta.toStringRef());
  if (out.meta.value("format", "") != kCheckpointFormat) {
    throw std::runtime_error("checkpoint: unsupported format '" + out.meta.value("format", "") + "'");
  }
  const ModelConfig cfg = ModelConfig::from_json(out.meta.at("model"));
  out.model = Denoiser(cfg);
  if (out.meta.value("dtype", "float32") == "float64") out.model->to(torch::kFloat64);
  torch::NoGradGuard no_grad;
  for (auto& [name, p] : ordered_parameters(*out.model)) {
    torch::Tensor value;
    if (!out.archive->try_read("params/" + name, value)) throw std::runtime_error("checkpoint: missing parameter " + name);
    if (value.sizes() != p.sizes()) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    if (value.scalar_type() != p.scalar_type()) throw std::runtime_error("checkpoint: dtype mismatch for " + name);
    p.copy_(value);
  }
  torch::serialize::InputArchive probe;
  out.has_optimizer = out.archive->try_read("optim", probe);
  if (out.meta.contains("param_checksum") &&
      out.meta["param_checksum"].get<std::string>() != parameter_checksum(out.model->parameters())) {
    throw std::runtime_error("checkpoint: parameter checksum mismatch");
  }
  return out;
}

void load_optimizer_state(const LoadedCheckpoint& ckpt, torch::optim::Optimizer& optimizer) {
  torch::serialize::InputArchive opt;
  if (!ckpt.archive->try_read("optim", opt)) throw std::runtime_error("checkpoint: no optimizer state");
  optimizer.load(opt);
}

void copy_parameters(const Denoiser& src, Denoiser& dst) {
  const auto a = ordered_parameters(*src);
  auto b = ordered_parameters(*dst);
  if (a.size() != b.size()) throw std::invalid_argument("copy_parameters: models differ");
  torch::NoGradGuard no_grad;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].first != b[k].first || a[k].second.sizes() != b[k].second.sizes()) {
      throw std::invalid_argument("copy_parameters: parameter " + a[k].first + " differs");
    }
    b[k].second.copy_(a[k].second);
  }
}

}  // namespace fourdfold

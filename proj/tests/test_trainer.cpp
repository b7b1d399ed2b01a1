#include "fourdfold/dataio.hpp"
#include "fourdfold/trainer.hpp"

// libtorch defines its own CHECK; doctest's must win in test code.
#undef CHECK
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace fourdfold;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 2;
  c.d_v = 16;
  c.d_z = 8;
  c.ipa_heads = 2;
  c.ipa_c = 8;
  c.ipa_query_points = 2;
  c.ipa_value_points = 3;
  c.spatial_heads = 2;
  c.temporal_heads = 2;
  c.torsion_hidden = 16;
  c.r_max = 4;
  c.time_dim = 8;
  return c;
}

std::vector<WindowSample> windows(int n, int s, int length, std::uint64_t seed = 0) {
  SynthOptions o;
  o.n = n;
  o.l = length;
  o.seed = seed;
  return make_windows(synth_trajectory(o), 2, 1, s).windows;
}

// Keeps the first n residues of every state; the synthetic generator needs n >= 4.
std::vector<WindowSample> trimmed(std::vector<WindowSample> ws, std::size_t n) {
  const auto cut = [n](ProteinState& st) {
    st.sequence.resize(n);
    st.frames.resize(n);
    st.torsions.resize(n);
  };
  for (auto& w : ws) {
    for (auto& st : w.motion) cut(st);
    cut(w.reference);
    for (auto& st : w.targets) cut(st);
  }
  return ws;
}

TrainConfig tiny_train(int s) {
  TrainConfig c;
  c.model = tiny_config();
  c.s = s;
  c.batch_size = 2;
  c.seed = 3;
  c.max_steps = 10;
  c.learning_rate = 1e-3;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "fourdfold_trainer_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<double> totals(Trainer& tr, int steps) {
  std::vector<double> out;
  for (int k = 0; k < steps; ++k) out.push_back(tr.step().mean.total);
  return out;
}

// Loss at fixed (window, t, noise): replays the same noise stream each call.
double fixed_loss(Trainer& tr, const WindowSample& w, double t, std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  return tr.window_loss(w, t, rng).first.item<double>();
}

}  // namespace

TEST_CASE("total-loss gradient matches central finite differences at 64-bit") {
  TrainConfig cfg = tiny_train(2);
  cfg.float64 = true;
  const auto ws = trimmed(windows(4, 2, 12), 3);
  for (const int stage : {1, 2}) {
    CAPTURE(stage);
    cfg.stage = stage;
    Trainer tr(cfg, ws, std::optional<Denoiser>(Denoiser(tiny_config())));
    Denoiser model = tr.model();
    model->set_motion_alignment_enabled(true);
    for (auto& p : model->parameters()) p.set_requires_grad(true);
    // Break the zero-initialised output layers so every path carries gradient.
    {
      torch::NoGradGuard ng;
      for (auto& p : model->parameters()) p.add_(0.05 * torch::randn_like(p));
    }
    const double t = 0.1;  // auxiliary terms on
    const WindowSample& w = ws.front();

    for (auto& p : model->parameters()) p.mutable_grad() = torch::Tensor();
    Rng rng(99);
    tr.window_loss(w, t, rng).first.backward();

    // Directional derivative along a random direction covering every parameter.
    const auto params = model->parameters();
    std::vector<torch::Tensor> dirs;
    double analytic = 0.0;
    for (const auto& p : params) {
      dirs.push_back(torch::randn_like(p));
      if (p.grad().defined()) analytic += (p.grad() * dirs.back()).sum().item<double>();
    }
    const double h = 1e-6;
    const auto shift = [&](double a) {
      torch::NoGradGuard ng;
      for (std::size_t k = 0; k < params.size(); ++k) params[k].add_(a * dirs[k]);
    };
    shift(h);
    const double up = fixed_loss(tr, w, t, 99);
    shift(-2.0 * h);
    const double down = fixed_loss(tr, w, t, 99);
    shift(h);
    const double numeric = (up - down) / (2.0 * h);
    CHECK(std::abs(numeric - analytic) / std::abs(numeric) < 1e-4);

    // Entry-wise on a few coordinates of every tensor.
    Rng pick(7);
    for (const auto& [name, p] : ordered_parameters(*model)) {
      auto flat = p.view({-1});
      // Parameters off the loss path (the last edge update) have no grad; their FD slope must be 0.
      const auto g = p.grad().defined() ? p.grad().reshape({-1}) : torch::zeros_like(flat);
      for (int rep = 0; rep < 2; ++rep) {
        const auto idx = static_cast<int64_t>(std::uniform_int_distribution<int64_t>(0, flat.numel() - 1)(pick));
        const double orig = flat[idx].item<double>();
        {
          torch::NoGradGuard ng;
          flat[idx] = orig + h;
        }
        const double a = fixed_loss(tr, w, t, 99);
        {
          torch::NoGradGuard ng;
          flat[idx] = orig - h;
        }
        const double b = fixed_loss(tr, w, t, 99);
        {
          torch::NoGradGuard ng;
          flat[idx] = orig;
        }
        const double fd = (a - b) / (2.0 * h), an = g[idx].item<double>();
        CAPTURE(name);
        CHECK(std::abs(fd - an) <= 1e-4 * std::max(std::abs(fd), 1e-4));
      }
    }
  }
}

TEST_CASE("overfitting a single window reduces the loss tenfold") {
  TrainConfig cfg = tiny_train(2);
  cfg.batch_size = 1;
  cfg.max_steps = 500;
  cfg.learning_rate = 1e-2;
  // The two-layer test model stalls near 8x; one more layer and wider IPA clear 15x on every seed tried.
  cfg.model.layers = 3;
  cfg.model.d_v = 32;
  cfg.model.ipa_c = 32;
  cfg.model.ipa_heads = 4;
  cfg.model.ipa_query_points = 4;
  cfg.model.ipa_value_points = 8;
  cfg.model.torsion_hidden = 32;
  auto ws = windows(6, 2, 8);
  ws.resize(1);
  Trainer tr(cfg, ws);
  const std::vector<double> loss = totals(tr, 500);
  double start = 0.0, end = 0.0;
  for (int k = 0; k < 10; ++k) {
    start += loss[static_cast<std::size_t>(k)] / 10.0;
    end += loss[loss.size() - 1 - static_cast<std::size_t>(k)] / 10.0;
  }
  MESSAGE("loss " << start << " -> " << end);
  CHECK(end * 10.0 <= start);
}

TEST_CASE("stage 1 freezes the motion weights and stage 2 freezes everything else") {
  TrainConfig cfg = tiny_train(2);
  cfg.max_steps = 3;
  const auto ws = windows(4, 2, 10);
  Trainer one(cfg, ws);
  const std::string motion0 = parameter_checksum(one.model()->motion_parameters());
  const std::string rest0 = parameter_checksum(one.model()->non_motion_parameters());
  one.run();
  CHECK(parameter_checksum(one.model()->motion_parameters()) == motion0);
  CHECK(parameter_checksum(one.model()->non_motion_parameters()) != rest0);
  const auto ckpt = scratch("stage1.pt");
  one.save(ckpt.string());

  TrainConfig cfg2 = cfg;
  cfg2.stage = 2;
  cfg2.init_checkpoint = ckpt.string();
  Trainer two(cfg2, ws);
  const std::string motion1 = parameter_checksum(two.model()->motion_parameters());
  const std::string rest1 = parameter_checksum(two.model()->non_motion_parameters());
  CHECK(rest1 == parameter_checksum(one.model()->non_motion_parameters()));
  two.run();
  CHECK(parameter_checksum(two.model()->non_motion_parameters()) == rest1);
  CHECK(parameter_checksum(two.model()->motion_parameters()) != motion1);

  TrainConfig missing = cfg2;
  missing.init_checkpoint.clear();
  CHECK_THROWS_AS(Trainer(missing, ws), std::invalid_argument);
}

TEST_CASE("fixed seed reproduces the first ten losses") {
  const auto ws = windows(4, 2, 12);
  Trainer a(tiny_train(2), ws), b(tiny_train(2), ws);
  const auto la = totals(a, 10), lb = totals(b, 10);
  for (std::size_t k = 0; k < 10; ++k) CHECK(std::abs(la[k] - lb[k]) < 1e-6);
  TrainConfig other = tiny_train(2);
  other.seed = 4;
  Trainer c(other, ws);
  CHECK(totals(c, 10) != la);
}

TEST_CASE("resuming mid-run reproduces the uninterrupted losses") {
  const auto ws = windows(4, 2, 12);
  TrainConfig cfg = tiny_train(2);
  cfg.max_steps = 8;
  Trainer full(cfg, ws);
  const auto reference = totals(full, 8);

  Trainer first(cfg, ws);
  totals(first, 5);  // crosses an epoch boundary (8 windows, batch 2)
  const auto ckpt = scratch("resume.pt");
  first.save(ckpt.string());
  auto resumed = Trainer::resume(ckpt.string(), ws);
  CHECK(resumed->steps_done() == 5);
  const auto tail = totals(*resumed, 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(tail[k] - reference[5 + k]) < 1e-5);
}

TEST_CASE("checkpoint round trip is bit exact") {
  for (const bool f64 : {false, true}) {
    TrainConfig cfg = tiny_train(2);
    cfg.float64 = f64;
    cfg.max_steps = 2;
    const auto ws = windows(4, 2, 10);
    Trainer tr(cfg, ws);
    tr.run();
    const auto path = scratch(f64 ? "rt64.pt" : "rt32.pt");
    tr.save(path.string());
    const LoadedCheckpoint back = load_checkpoint(path.string());
    const auto a = ordered_parameters(*tr.model()), b = ordered_parameters(*back.model);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].first == b[k].first);
      CHECK(torch::equal(a[k].second, b[k].second));
    }
    CHECK(back.has_optimizer);
    CHECK(back.meta.at("step").get<int>() == 2);
  }
  std::ofstream(scratch("garbage.pt")) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(scratch("garbage.pt").string()), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(scratch("absent.pt").string()), std::runtime_error);
}

TEST_CASE("cosine schedule and epoch accounting") {
  TrainConfig cfg = tiny_train(2);
  cfg.max_steps = 0;
  cfg.epochs = 3;
  const auto ws = windows(4, 2, 10);  // 6 windows
  Trainer tr(cfg, ws);
  CHECK(tr.steps_per_epoch() == 3);
  CHECK(tr.total_steps() == 9);
  CHECK(tr.learning_rate_at(0) == doctest::Approx(cfg.learning_rate));
  CHECK(tr.learning_rate_at(9) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(tr.learning_rate_at(4) < tr.learning_rate_at(3));
  std::ostringstream log;
  tr.run(&log);
  std::istringstream lines(log.str());
  std::string line;
  int count = 0, last_epoch = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("t_mean"));
    CHECK(j.contains("total"));
    last_epoch = j.at("epoch").get<int>();
    ++count;
  }
  CHECK(count == 9);
  CHECK(last_epoch == 2);
}

TEST_CASE("training configuration JSON") {
  TrainConfig cfg = tiny_train(4);
  cfg.data = {"/abs/a.json"};
  cfg.output = "out.pt";
  const TrainConfig back = TrainConfig::from_json(cfg.to_json(), "/base");
  CHECK(back.to_json()["model"] == cfg.to_json()["model"]);
  CHECK(back.s == 4);
  CHECK(back.data.front() == "/abs/a.json");
  CHECK(back.output == "/base/out.pt");
  CHECK(TrainConfig().batch_size == 4);
  CHECK(TrainConfig().learning_rate == 1e-4);

  auto j = cfg.to_json();
  j["bogus"] = 1;
  CHECK_THROWS_AS(TrainConfig::from_json(j), std::invalid_argument);
  j = cfg.to_json();
  j["stage"] = 3;
  CHECK_THROWS_AS(TrainConfig::from_json(j), std::invalid_argument);

  const auto path = scratch("cfg.json");
  std::ofstream(path) << cfg.to_json().dump();
  ::setenv("FOURDFOLD_SEED", "1234", 1);
  CHECK(TrainConfig::load(path.string()).seed == 1234);
  ::setenv("FOURDFOLD_SEED", "abc", 1);
  CHECK_THROWS_AS(TrainConfig::load(path.string()), std::invalid_argument);
  ::unsetenv("FOURDFOLD_SEED");
  CHECK(TrainConfig::load(path.string()).seed == cfg.seed);
}

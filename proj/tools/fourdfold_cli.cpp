// fourdfold command line: synth, train, sample, eval.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.
#include "fourdfold/dataio.hpp"
#include "fourdfold/eval.hpp"
#include "fourdfold/sampler.hpp"
#include "fourdfold/trainer.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace fourdfold;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string kind = "hinge";
  int n = 16;
  int len = 64;
  std::string out;
  std::string pdb;
  SynthOptions opts;
};

int run_synth(const SynthArgs& a) {
  SynthOptions o = a.opts;
  o.kind = synth_kind_from_string(a.kind);
  o.n = a.n;
  o.l = a.len;
  const Trajectory traj = synth_trajectory(o);
  save_trajectory(traj, a.out);
  if (!a.pdb.empty()) write_pdb(traj, a.pdb);
  std::cout << "wrote " << traj.size() << " states of " << o.n << " residues to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  int stage = 0;
  std::string resume;
  std::string init;
  std::string output;
  int max_steps = -1;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = TrainConfig::load(a.config);
  if (a.stage) cfg.stage = a.stage;
  if (!a.init.empty()) cfg.init_checkpoint = a.init;
  if (!a.output.empty()) cfg.output = a.output;
  if (a.max_steps >= 0) cfg.max_steps = a.max_steps;
  cfg.validate();
  const std::vector<WindowSample> windows = training_windows(cfg);

  std::unique_ptr<Trainer> tr;
  if (!a.resume.empty()) {
    tr = Trainer::resume(a.resume, windows);
  } else {
    tr = std::make_unique<Trainer>(cfg, windows);
  }
  std::ofstream log_file;
  std::ostream* log = nullptr;
  if (!cfg.log.empty()) {
    log_file.open(cfg.log, a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log_file) throw std::runtime_error("cannot write " + cfg.log);
    log = &log_file;
  }
  const std::int64_t every = std::max<std::int64_t>(1, tr->total_steps() / 10);
  tr->run(log, [&](const StepRecord& r) {
    if (!a.quiet && (r.step % every == 0 || r.step == tr->total_steps())) {
      std::cerr << "stage " << r.stage << " step " << r.step << "/" << tr->total_steps() << " loss " << r.mean.total
                << "\n";
    }
    return true;
  });
  tr->save(cfg.output);
  std::cout << "stage " << cfg.stage << ": " << tr->steps_done() << " steps over " << windows.size()
            << " windows, checkpoint " << cfg.output << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string ckpt;
  std::string input;
  int steps = 8;
  std::string out;
  std::string json;
  std::uint64_t seed = 0;
  bool iterative = false;
  int n_steps = 100;
  double noise_scale = 1.0;
  int reference = -1;
};

int run_sample(const SampleArgs& a) {
  const LoadedCheckpoint ckpt = load_checkpoint(a.ckpt);
  Denoiser model = ckpt.model;
  model->eval();
  seed_torch(a.seed);
  const Trajectory input = load_trajectory(a.input);
  const int s_mot = model->config().s_mot;
  const int ref = a.reference < 0 ? static_cast<int>(input.size()) + a.reference : a.reference;
  if (ref < s_mot || ref >= static_cast<int>(input.size())) {
    throw UsageError("--reference must leave " + std::to_string(s_mot) + " motion states before it inside the input");
  }
  std::vector<ProteinState> motion(input.states.begin() + (ref - s_mot), input.states.begin() + ref);
  const ProteinState& reference = input.states[static_cast<std::size_t>(ref)];

  RotationSchedule rot;
  if (ckpt.meta.contains("train")) {
    rot.sigma_min = ckpt.meta["train"].value("sigma_min", rot.sigma_min);
    rot.sigma_max = ckpt.meta["train"].value("sigma_max", rot.sigma_max);
  }
  const DiffusionSchedule sched(rot);
  SamplerOptions opts;
  opts.n_steps = a.n_steps;
  opts.noise_scale = a.noise_scale;
  opts.dt = input.dt;
  Rng rng(a.seed);
  const Trajectory out = a.iterative
                             ? iterative_rollout(model, reference.sequence, reference, motion, a.steps, sched, opts, rng)
                             : reverse_sample(model, reference.sequence, reference, motion, a.steps, sched, opts, rng);
  write_pdb(out, a.out);
  if (!a.json.empty()) save_trajectory(out, a.json);
  std::cout << "sampled " << out.size() << " states after input state " << ref << (a.iterative ? " (iterative)" : "")
            << " to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> pred;
  std::string ref;
  std::string report;
  std::string csv;
  bool tica = false;
  int tica_lag = 10;
  bool no_align = false;
  int start = -1;
  std::vector<int> s_values;
};

// Index of the ground-truth state matching the first predicted step time.
std::size_t locate_start(const Trajectory& gt, const Trajectory& pred) {
  const double t0 = pred.states.front().step_time;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (std::abs(gt.states[k].step_time - t0) <= 1e-6 * std::max(1.0, gt.dt)) return k;
  }
  throw UsageError("cannot match prediction time " + std::to_string(t0) + " to the reference; pass --start");
}

int run_eval(const EvalArgs& a) {
  const Trajectory gt_full = load_trajectory(a.ref);
  std::vector<Trajectory> draws;
  for (const auto& p : a.pred) draws.push_back(load_trajectory(p));
  const std::size_t len = draws.front().size();
  for (const auto& d : draws) {
    if (d.size() != len) throw std::runtime_error("eval: predicted trajectories differ in length");
  }
  const std::size_t start = a.start >= 0 ? static_cast<std::size_t>(a.start) : locate_start(gt_full, draws.front());
  if (start + len > gt_full.size()) throw std::runtime_error("eval: reference ends before the predicted window");
  Trajectory gt;
  gt.dt = gt_full.dt;
  gt.states.assign(gt_full.states.begin() + static_cast<std::ptrdiff_t>(start),
                   gt_full.states.begin() + static_cast<std::ptrdiff_t>(start + len));

  std::vector<int> s_values = a.s_values.empty() ? kDefaultRValues : a.s_values;
  if (a.s_values.empty() && std::find(s_values.begin(), s_values.end(), static_cast<int>(len)) == s_values.end()) {
    s_values.push_back(static_cast<int>(len));
    std::sort(s_values.begin(), s_values.end());
  }
  const MetricReport report = r_table(draws, gt, s_values, !a.no_align);
  nlohmann::json settings = {{"pred", a.pred}, {"ref", a.ref}, {"start", start}, {"steps", len}};
  nlohmann::json out = report_to_json(report, settings);

  if (a.tica) {
    const Eigen::MatrixXd train = tica_features(gt_full);
    const TicaModel tm = tica_fit(train, a.tica_lag, 2);
    std::vector<ScatterSeries> series{{"reference", "#1f77b4", tica_project(tm, train)}};
    for (std::size_t k = 0; k < draws.size(); ++k) {
      // Superpose onto the same frame as the reference features, then drop that frame.
      Trajectory anchored = draws[k];
      anchored.states.insert(anchored.states.begin(), gt_full.states.front());
      const Eigen::MatrixXd f = tica_features(anchored).bottomRows(static_cast<Eigen::Index>(draws[k].size()));
      series.push_back({"sample " + std::to_string(k), "#d62728", tica_project(tm, f)});
    }
    const fs::path svg = fs::path(a.report).replace_extension(".tica.svg");
    write_text(svg.string(), scatter_svg(series, "TIC 1", "TIC 2"));
    out["tica"] = {{"lag", tm.lag},
                   {"eigenvalues", std::vector<double>(tm.eigenvalues.data(), tm.eigenvalues.data() + tm.eigenvalues.size())},
                   {"histogram", histogram2d_json(series)},
                   {"svg", svg.string()}};
  }
  write_text(a.report, out.dump(2) + "\n");
  if (!a.csv.empty()) write_text(a.csv, report_to_csv(report));
  std::cout << out["r_table"].dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fourdfold: generative protein backbone dynamics"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  SynthArgs synth;
  auto* cs = app.add_subcommand("synth", "write a synthetic trajectory");
  cs->add_option("--kind", synth.kind, "hinge, breathe or two_state")->check(CLI::IsMember({"hinge", "breathe", "two_state"}));
  cs->add_option("--n", synth.n, "residues");
  cs->add_option("--len", synth.len, "states");
  cs->add_option("--out", synth.out, "trajectory JSON")->required();
  cs->add_option("--pdb", synth.pdb, "also write a multi-model PDB");
  cs->add_option("--seed", synth.opts.seed);
  cs->add_option("--dt", synth.opts.dt, "ps between states");
  cs->add_option("--amplitude", synth.opts.amplitude);
  cs->add_option("--period", synth.opts.period, "states per oscillation");

  TrainArgs train;
  auto* ct = app.add_subcommand("train", "train one stage from a JSON config");
  ct->add_option("--config", train.config, "JSON training config")->required()->check(CLI::ExistingFile);
  ct->add_option("--stage", train.stage, "override the config stage")->check(CLI::IsMember({1, 2}));
  ct->add_option("--resume", train.resume, "checkpoint written by an interrupted run")->check(CLI::ExistingFile);
  ct->add_option("--init", train.init, "stage-1 checkpoint for stage 2");
  ct->add_option("--output", train.output, "checkpoint path");
  ct->add_option("--max-steps", train.max_steps, "override the run length")->check(CLI::NonNegativeNumber);
  ct->add_flag("--quiet", train.quiet, "no progress on stderr");

  SampleArgs sample;
  auto* cp = app.add_subcommand("sample", "generate future states after a trajectory");
  cp->add_option("--ckpt", sample.ckpt, "checkpoint")->required();
  cp->add_option("--input", sample.input, "conditioning trajectory (JSON or PDB)")->required();
  cp->add_option("--steps", sample.steps, "states to generate")->check(CLI::PositiveNumber);
  cp->add_option("--out", sample.out, "output PDB")->required();
  cp->add_option("--json", sample.json, "also write trajectory JSON");
  cp->add_option("--seed", sample.seed);
  cp->add_flag("--iterative", sample.iterative, "one state at a time, sliding the motion window");
  cp->add_option("--n-steps", sample.n_steps, "reverse-diffusion steps")->check(CLI::Range(2, 100000));
  cp->add_option("--noise-scale", sample.noise_scale)->check(CLI::NonNegativeNumber);
  cp->add_option("--reference", sample.reference, "input index of the reference state; negative counts from the end");

  EvalArgs ev;
  auto* ce = app.add_subcommand("eval", "R_s table and optional TICA projection");
  ce->add_option("--pred", ev.pred, "sampled trajectories (draws of one window)")->required()->check(CLI::ExistingFile);
  ce->add_option("--ref", ev.ref, "ground-truth trajectory")->required()->check(CLI::ExistingFile);
  ce->add_option("--report", ev.report, "report JSON")->required();
  ce->add_option("--csv", ev.csv, "also write CSV");
  ce->add_flag("--tica", ev.tica, "project onto the first two TICs of the reference");
  ce->add_option("--tica-lag", ev.tica_lag)->check(CLI::PositiveNumber);
  ce->add_flag("--no-align", ev.no_align, "skip Kabsch superposition");
  ce->add_option("--start", ev.start, "reference index of the first predicted state");
  ce->add_option("--s", ev.s_values, "R_s horizons")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  try {
    if (*cs) return run_synth(synth);
    if (*ct) return run_train(train);
    if (*cp) return run_sample(sample);
    if (*ce) return run_eval(ev);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

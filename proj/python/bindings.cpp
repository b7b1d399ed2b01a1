// Python bindings. Trajectories cross the boundary as opaque handles plus numpy
// views of the Cα coordinates; models stay on the C++ side.
#include "fourdfold/checkpoint.hpp"
#include "fourdfold/dataio.hpp"
#include "fourdfold/eval.hpp"
#include "fourdfold/igso3.hpp"
#include "fourdfold/sampler.hpp"
#include "fourdfold/trainer.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace fourdfold;

namespace {

// (L, N, 3) Cα coordinates; the frame origin is the Cα atom.
py::array_t<double> ca_array(const Trajectory& traj) {
  const std::size_t l = traj.size(), n = l ? traj.states.front().size() : 0;
  py::array_t<double> out({l, n, std::size_t{3}});
  auto v = out.mutable_unchecked<3>();
  for (std::size_t k = 0; k < l; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (int d = 0; d < 3; ++d) v(k, i, d) = traj.states[k].frames[i].trans[d];
  return out;
}

std::string seq_letters(const Trajectory& traj) {
  std::string s;
  for (ResidueType r : traj.sequence()) s += one_letter(r);
  return s;
}

Trajectory synth(const std::string& kind, int n, int l, std::uint64_t seed, double dt, double amplitude, double period) {
  SynthOptions o;
  o.kind = synth_kind_from_string(kind);
  o.n = n;
  o.l = l;
  o.seed = seed;
  o.dt = dt;
  o.amplitude = amplitude;
  o.period = period;
  return synth_trajectory(o);
}

std::string train(const std::string& config, int stage, int max_steps, const std::string& output,
                  const std::string& init) {
  TrainConfig cfg = TrainConfig::load(config);
  if (stage) cfg.stage = stage;
  if (max_steps >= 0) cfg.max_steps = max_steps;
  if (!output.empty()) cfg.output = output;
  if (!init.empty()) cfg.init_checkpoint = init;
  cfg.validate();
  Trainer tr(cfg, training_windows(cfg));
  {
    py::gil_scoped_release release;
    tr.run();
  }
  tr.save(cfg.output);
  return cfg.output;
}

Trajectory sample(const std::string& ckpt_path, const Trajectory& input, int steps, int reference, std::uint64_t seed,
                  int n_steps, double noise_scale, bool iterative) {
  const LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  Denoiser model = ckpt.model;
  model->eval();
  seed_torch(seed);
  const int s_mot = model->config().s_mot;
  const int ref = reference < 0 ? static_cast<int>(input.size()) + reference : reference;
  if (ref < s_mot || ref >= static_cast<int>(input.size()))
    throw std::invalid_argument("reference must leave " + std::to_string(s_mot) + " motion states before it");
  const std::vector<ProteinState> motion(input.states.begin() + (ref - s_mot), input.states.begin() + ref);
  const ProteinState& ref_state = input.states[static_cast<std::size_t>(ref)];
  RotationSchedule rot;
  if (ckpt.meta.contains("train")) {
    rot.sigma_min = ckpt.meta["train"].value("sigma_min", rot.sigma_min);
    rot.sigma_max = ckpt.meta["train"].value("sigma_max", rot.sigma_max);
  }
  const DiffusionSchedule sched(rot);
  SamplerOptions opts;
  opts.n_steps = n_steps;
  opts.noise_scale = noise_scale;
  opts.dt = input.dt;
  Rng rng(seed);
  py::gil_scoped_release release;
  return iterative ? iterative_rollout(model, ref_state.sequence, ref_state, motion, steps, sched, opts, rng)
                   : reverse_sample(model, ref_state.sequence, ref_state, motion, steps, sched, opts, rng);
}

}  // namespace

PYBIND11_MODULE(_fourdfold, m) {
  m.doc() = "Protein trajectory generation core";

  py::class_<Trajectory>(m, "Trajectory")
      .def_property_readonly("dt", [](const Trajectory& t) { return t.dt; })
      .def_property_readonly("n_residues", [](const Trajectory& t) { return t.size() ? t.states.front().size() : 0; })
      .def_property_readonly("sequence", &seq_letters)
      .def_property_readonly("step_times",
                             [](const Trajectory& t) {
                               std::vector<double> out;
                               for (const auto& s : t.states) out.push_back(s.step_time);
                               return out;
                             })
      .def("__len__", &Trajectory::size)
      .def("ca", &ca_array, "Cα coordinates as an (L, N, 3) array in Angstrom")
      .def("slice",
           [](const Trajectory& t, std::size_t begin, std::size_t end) {
             if (begin > end || end > t.size()) throw py::index_error("slice out of range");
             Trajectory out;
             out.dt = t.dt;
             out.states.assign(t.states.begin() + static_cast<std::ptrdiff_t>(begin),
                               t.states.begin() + static_cast<std::ptrdiff_t>(end));
             return out;
           })
      .def("to_json", &trajectory_to_json)
      .def_static("from_json", &trajectory_from_json)
      .def("save", &save_trajectory, py::arg("path"))
      .def("write_pdb", [](const Trajectory& t, const std::string& path) { write_pdb(t, path); }, py::arg("path"));

  m.def("load_trajectory", &load_trajectory, py::arg("path"), "JSON or PDB, chosen by extension");
  m.def("synth", &synth, py::arg("kind") = "hinge", py::arg("n") = 16, py::arg("l") = 64, py::arg("seed") = 0,
        py::arg("dt") = 1.0, py::arg("amplitude") = 0.5, py::arg("period") = 24.0);

  m.def("ca_rmse",
        [](const Trajectory& a, std::size_t i, const Trajectory& b, std::size_t j, bool align) {
          return ca_rmse(a.states.at(i), b.states.at(j), align);
        },
        py::arg("pred"), py::arg("i"), py::arg("gt"), py::arg("j"), py::arg("align") = true);
  m.def("r_table",
        [](const std::vector<Trajectory>& draws, const Trajectory& gt, const std::vector<int>& s_values, bool align) {
          const MetricReport r = r_table(draws, gt, s_values, align);
          py::dict out;
          out["per_step"] = r.per_step;
          py::dict table;
          for (const auto& [s, v] : r.r_table) table[py::int_(s)] = v;
          out["r"] = table;
          out["n_samples"] = r.n_samples;
          out["truncated"] = r.truncated;
          return out;
        },
        py::arg("draws"), py::arg("gt"), py::arg("s_values") = kDefaultRValues, py::arg("align") = true);

  m.def("igso3_density", [](double omega, double sigma2) { return igso3_density(omega, sigma2); }, py::arg("omega"),
        py::arg("sigma2"));
  m.def("igso3_expected_score_norm2", [](double sigma2) { return igso3_expected_score_norm2(sigma2); },
        py::arg("sigma2"));

  m.def("train", &train, py::arg("config"), py::arg("stage") = 0, py::arg("max_steps") = -1, py::arg("output") = "",
        py::arg("init") = "", "Trains from a JSON config and returns the checkpoint path");
  m.def("sample", &sample, py::arg("ckpt"), py::arg("input"), py::arg("steps") = 8, py::arg("reference") = -1,
        py::arg("seed") = 0, py::arg("n_steps") = 100, py::arg("noise_scale") = 1.0, py::arg("iterative") = false);
}

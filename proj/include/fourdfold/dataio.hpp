#pragma once

#include "fourdfold/protein.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fourdfold {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kTrajectoryFormat = "fourdfold-traj/1";

/// Dispatches on extension: ".pdb" reads multi-model PDB, anything else JSON.
Trajectory load_trajectory(const std::string& path);
void save_trajectory(const Trajectory& traj, const std::string& path);

std::string trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const std::string& text);

/// Multi-model PDB. Frames and torsions are recomputed from coordinates.
Trajectory read_pdb(std::istream& in);
void write_pdb(const Trajectory& traj, std::ostream& out, const RigidGroupTemplates& templates = default_templates());
void write_pdb(const Trajectory& traj, const std::string& path,
               const RigidGroupTemplates& templates = default_templates());

struct WindowSample {
  std::vector<ProteinState> motion;   // s_mot steps, oldest first
  ProteinState reference;             // step immediately before the targets
  std::vector<ProteinState> targets;  // s steps
  std::string protein_id;
  std::size_t window_start = 0;
};

struct WindowList {
  std::vector<WindowSample> windows;
  bool too_short = false;
};

/// Window layout [motion..., reference block..., targets...]; the reference is
/// the last state of the s_ref block. Count = floor((L - span) / stride) + 1.
WindowList make_windows(const Trajectory& traj, int s_mot, int s_ref, int s, int stride = 1,
                        const std::string& protein_id = "");

/// First floor(0.9 L) states train, the rest evaluate. Requires L >= 20.
std::pair<Trajectory, Trajectory> split_s2l(const Trajectory& traj);

enum class SplitMode { S2L, O2O };

struct SplitSpec {
  SplitMode mode = SplitMode::O2O;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
};

SplitSpec split_o2o(const std::vector<std::string>& protein_ids, const std::array<double, 3>& fractions,
                    std::uint64_t seed);

enum class SynthKind { Hinge, Breathe, TwoState };

SynthKind synth_kind_from_string(const std::string& name);

struct SynthOptions {
  SynthKind kind = SynthKind::Hinge;
  int n = 16;
  int l = 64;
  double dt = 1.0;         // ps
  std::uint64_t seed = 0;
  double amplitude = 0.5;  // rad for hinge, fractional stretch for breathe, psi offset for two_state
  double period = 24.0;    // states per oscillation
  double jitter = 0.02;    // hinge/breathe: per-state dihedral jitter as a fraction of amplitude
  double noise = 0.1;      // two_state: per-coordinate translation jitter bound, Angstrom
  int mean_dwell = 8;      // two_state mean dwell in states
};

Trajectory synth_trajectory(const SynthOptions& opts);

/// The two generator conformations used by the two_state kind (noise-free).
std::array<ProteinState, 2> synth_two_state_conformations(const SynthOptions& opts);

/// Backbone built from per-residue (phi, psi) with ideal bond geometry and trans
/// peptides; side chains placed at chi angles from chis (radians, per residue).
ProteinState build_peptide(const std::vector<ResidueType>& seq, const std::vector<double>& phi,
                           const std::vector<double>& psi, const std::vector<std::array<double, 4>>& chis,
                           const RigidGroupTemplates& templates = default_templates());

}  // namespace fourdfold

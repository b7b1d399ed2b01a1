#pragma once

// Residue-level protein parameterization: one backbone frame per residue plus
// seven torsions (omega, phi, psi, chi1..chi4), and the rigid-group machinery
// that turns them into heavy-atom coordinates in the 14-slot layout.

#include "fourdfold/geom.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fourdfold {

constexpr int kNumResidueTypes = 20;
constexpr int kAtomsPerResidue = 14;
constexpr int kNumTorsions = 7;

enum TorsionIndex : int { kOmega = 0, kPhi = 1, kPsi = 2, kChi1 = 3, kChi2 = 4, kChi3 = 5, kChi4 = 6 };

// Backbone slots are fixed across residue types.
enum BackboneSlot : int { kSlotN = 0, kSlotCA = 1, kSlotC = 2, kSlotO = 3 };

// Alphabetical by three-letter code.
enum class ResidueType : std::uint8_t {
  ALA, ARG, ASN, ASP, CYS, GLN, GLU, GLY, HIS, ILE,
  LEU, LYS, MET, PHE, PRO, SER, THR, TRP, TYR, VAL
};

/// Accepts three-letter (any case) or one-letter codes; throws std::invalid_argument otherwise.
ResidueType residue_from_code(std::string_view code);
std::string_view three_letter(ResidueType r);
char one_letter(ResidueType r);
std::vector<ResidueType> parse_sequence(std::string_view one_letter_codes);
std::string sequence_string(const std::vector<ResidueType>& seq);
int num_chi(ResidueType r);

struct TorsionAngles {
  // (sin, cos) per torsion in TorsionIndex order.
  std::array<std::array<double, 2>, kNumTorsions> angles{};
  std::array<bool, kNumTorsions> mask{};

  TorsionAngles() {
    for (auto& a : angles) a = {0.0, 1.0};
  }

  double angle(int k) const;
  void set_angle(int k, double radians);
};

/// Torsions defined for this residue type (omega/phi cleared for a chain start).
std::array<bool, kNumTorsions> torsion_mask_for(ResidueType r, bool chain_start);

struct AtomSet {
  std::size_t n = 0;
  std::vector<Vec3> coords;            // n * kAtomsPerResidue, Angstrom
  std::vector<std::uint8_t> exists;    // n * kAtomsPerResidue

  AtomSet() = default;
  explicit AtomSet(std::size_t residues)
      : n(residues), coords(residues * kAtomsPerResidue, Vec3::Zero()), exists(residues * kAtomsPerResidue, 0) {}

  Vec3& at(std::size_t i, int slot) { return coords.at(i * kAtomsPerResidue + static_cast<std::size_t>(slot)); }
  const Vec3& at(std::size_t i, int slot) const {
    return coords.at(i * kAtomsPerResidue + static_cast<std::size_t>(slot));
  }
  bool has(std::size_t i, int slot) const {
    return exists.at(i * kAtomsPerResidue + static_cast<std::size_t>(slot)) != 0;
  }
  void set(std::size_t i, int slot, const Vec3& p) {
    at(i, slot) = p;
    exists.at(i * kAtomsPerResidue + static_cast<std::size_t>(slot)) = 1;
  }
};

struct ProteinState {
  std::vector<ResidueType> sequence;
  std::vector<Rigid> frames;
  std::vector<TorsionAngles> torsions;
  double step_time = 0.0;  // ps

  std::size_t size() const { return sequence.size(); }
  /// Throws std::invalid_argument on length mismatch or invalid rotations.
  void validate() const;
};

struct Trajectory {
  std::vector<ProteinState> states;
  double dt = 1.0;  // ps between stored states

  std::size_t size() const { return states.size(); }
  const std::vector<ResidueType>& sequence() const;
  void validate() const;
};

struct RigidGroup {
  std::string name;
  int torsion = -1;  // TorsionIndex rotating this group, -1 for backbone
  int parent = -1;   // index into ResidueTemplate::groups
  Rigid default_frame;
  std::vector<std::pair<int, Vec3>> atoms;  // (slot, local coordinate)
};

struct ResidueTemplate {
  ResidueType type = ResidueType::ALA;
  std::array<std::string, kAtomsPerResidue> slot_names;  // "" for unused slots
  int atom_count = 0;
  std::vector<std::array<int, 4>> chi_atoms;  // slots defining each chi
  std::vector<RigidGroup> groups;
  int symmetric_chi = -1;  // 0-based chi index whose group is 180-degree symmetric
  std::vector<std::pair<int, int>> swap_pairs;

  /// -1 when the residue has no such atom.
  int slot_of(std::string_view atom) const;
};

class RigidGroupTemplates {
 public:
  /// Parses and checksum-validates the template JSON. Throws std::runtime_error.
  static RigidGroupTemplates from_json_text(std::string_view text);
  static RigidGroupTemplates load(const std::string& path);

  const ResidueTemplate& operator[](ResidueType r) const { return residues_[static_cast<int>(r)]; }
  const std::string& checksum() const { return checksum_; }
  std::string canonical_text() const;

 private:
  std::array<ResidueTemplate, kNumResidueTypes> residues_;
  std::string checksum_;
};

/// Table compiled into the library.
const RigidGroupTemplates& default_templates();

std::string fnv1a64_hex(std::string_view text);

/// Signed dihedral p0-p1-p2-p3 in (-pi, pi].
double dihedral(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3);

/// Backbone frame: origin ca, x along c - ca, z along x cross (n - ca).
/// Throws DegenerateGeometry on coincident or collinear atoms.
Rigid frames_from_backbone(const Vec3& n, const Vec3& ca, const Vec3& c);

/// Frames of every rigid group of one residue, expressed in the residue frame.
std::vector<Rigid> residue_group_frames(const ResidueTemplate& tmpl, const TorsionAngles& torsions);

AtomSet atoms_from_frames_and_torsions(const std::vector<ResidueType>& seq, const std::vector<Rigid>& frames,
                                       const std::vector<TorsionAngles>& torsions,
                                       const RigidGroupTemplates& templates = default_templates());

AtomSet atoms_from_state(const ProteinState& state, const RigidGroupTemplates& templates = default_templates());

/// Missing defining atoms clear the corresponding mask entry.
std::vector<TorsionAngles> torsions_from_atoms(const std::vector<ResidueType>& seq, const AtomSet& atoms,
                                               const RigidGroupTemplates& templates = default_templates());

/// Frames from N/CA/C plus torsions from all atoms. Throws on missing backbone atoms.
ProteinState state_from_atoms(const std::vector<ResidueType>& seq, const AtomSet& atoms,
                              const RigidGroupTemplates& templates = default_templates());

/// Shifts the symmetric chi of each residue by pi; identity elsewhere.
std::vector<TorsionAngles> alt_torsions(const std::vector<ResidueType>& seq, const std::vector<TorsionAngles>& torsions,
                                        const RigidGroupTemplates& templates = default_templates());

std::vector<Vec3> ca_coords(const ProteinState& state);

}  // namespace fourdfold

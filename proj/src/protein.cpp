#include "fourdfold/protein.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fourdfold {

namespace {

constexpr std::array<std::string_view, kNumResidueTypes> kThree = {
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL"};
constexpr std::array<char, kNumResidueTypes> kOne = {'A', 'R', 'N', 'D', 'C', 'Q', 'E', 'G', 'H', 'I',
                                                     'L', 'K', 'M', 'F', 'P', 'S', 'T', 'W', 'Y', 'V'};
constexpr std::array<int, kNumResidueTypes> kNumChi = {0, 4, 2, 2, 1, 3, 3, 0, 2, 2,
                                                       2, 4, 3, 2, 2, 1, 1, 2, 2, 1};

Mat3 rot_x(double s, double c) {
  Mat3 m;
  m << 1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c;
  return m;
}

}  // namespace

ResidueType residue_from_code(std::string_view code) {
  if (code.size() == 1) {
    const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(code[0])));
    for (int k = 0; k < kNumResidueTypes; ++k) {
      if (kOne[k] == ch) return static_cast<ResidueType>(k);
    }
  } else if (code.size() == 3) {
    std::string up(code);
    for (char& ch : up) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    for (int k = 0; k < kNumResidueTypes; ++k) {
      if (kThree[k] == up) return static_cast<ResidueType>(k);
    }
  }
  throw std::invalid_argument("unknown residue code '" + std::string(code) + "'");
}

std::string_view three_letter(ResidueType r) { return kThree.at(static_cast<int>(r)); }
char one_letter(ResidueType r) { return kOne.at(static_cast<int>(r)); }
int num_chi(ResidueType r) { return kNumChi.at(static_cast<int>(r)); }

std::vector<ResidueType> parse_sequence(std::string_view one_letter_codes) {
  std::vector<ResidueType> out;
  out.reserve(one_letter_codes.size());
  for (const char ch : one_letter_codes) out.push_back(residue_from_code(std::string_view(&ch, 1)));
  return out;
}

std::string sequence_string(const std::vector<ResidueType>& seq) {
  std::string out;
  for (const auto r : seq) out.push_back(one_letter(r));
  return out;
}

double TorsionAngles::angle(int k) const { return std::atan2(angles.at(k)[0], angles.at(k)[1]); }

void TorsionAngles::set_angle(int k, double radians) { angles.at(k) = {std::sin(radians), std::cos(radians)}; }

std::array<bool, kNumTorsions> torsion_mask_for(ResidueType r, bool chain_start) {
  std::array<bool, kNumTorsions> m{};
  m[kOmega] = !chain_start;
  m[kPhi] = !chain_start;
  m[kPsi] = true;
  for (int k = 0; k < num_chi(r); ++k) m[kChi1 + k] = true;
  return m;
}

void ProteinState::validate() const {
  if (frames.size() != sequence.size() || torsions.size() != sequence.size()) {
    throw std::invalid_argument("ProteinState: sequence, frames and torsions must share length");
  }
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!frames[i].rot.is_valid(1e-6) || !frames[i].trans.allFinite()) {
      throw std::invalid_argument("ProteinState: invalid frame at residue " + std::to_string(i));
    }
  }
}

const std::vector<ResidueType>& Trajectory::sequence() const {
  if (states.empty()) throw std::invalid_argument("Trajectory: no states");
  return states.front().sequence;
}

void Trajectory::validate() const {
  if (states.empty()) throw std::invalid_argument("Trajectory: at least one state required");
  for (std::size_t s = 0; s < states.size(); ++s) {
    states[s].validate();
    if (states[s].sequence != states.front().sequence) {
      throw std::invalid_argument("Trajectory: sequence differs at state " + std::to_string(s));
    }
  }
}

double dihedral(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3) {
  const Vec3 b0 = p0 - p1;
  const Vec3 b1 = (p2 - p1).normalized();
  const Vec3 b2 = p3 - p2;
  const Vec3 v = b0 - b0.dot(b1) * b1;
  const Vec3 w = b2 - b2.dot(b1) * b1;
  return std::atan2(b1.cross(v).dot(w), v.dot(w));
}

Rigid frames_from_backbone(const Vec3& n, const Vec3& ca, const Vec3& c) {
  const Vec3 ex = c - ca;
  const Vec3 ey = n - ca;
  const double lx = ex.norm();
  const double ly = ey.norm();
  if (lx < 1e-8 || ly < 1e-8) throw DegenerateGeometry("frames_from_backbone: coincident atoms");
  const Vec3 e1 = ex / lx;
  const Vec3 z = e1.cross(ey);
  if (z.norm() < 1e-8 * ly) throw DegenerateGeometry("frames_from_backbone: collinear atoms");
  const Vec3 e3 = z.normalized();
  const Vec3 e2 = e3.cross(e1);
  Mat3 m;
  m.col(0) = e1;
  m.col(1) = e2;
  m.col(2) = e3;
  return {Rotation(m), ca};
}

std::vector<Rigid> residue_group_frames(const ResidueTemplate& tmpl, const TorsionAngles& torsions) {
  std::vector<Rigid> frames(tmpl.groups.size());
  for (std::size_t g = 0; g < tmpl.groups.size(); ++g) {
    const RigidGroup& group = tmpl.groups[g];
    if (group.parent < 0) {
      frames[g] = group.default_frame;
      continue;
    }
    const auto& sc = torsions.angles.at(group.torsion);
    const double norm = std::max(std::hypot(sc[0], sc[1]), 1e-12);
    const Rigid local = compose(group.default_frame, Rigid{Rotation(rot_x(sc[0] / norm, sc[1] / norm)), Vec3::Zero()});
    frames[g] = compose(frames.at(static_cast<std::size_t>(group.parent)), local);
  }
  return frames;
}

AtomSet atoms_from_frames_and_torsions(const std::vector<ResidueType>& seq, const std::vector<Rigid>& frames,
                                       const std::vector<TorsionAngles>& torsions,
                                       const RigidGroupTemplates& templates) {
  if (frames.size() != seq.size() || torsions.size() != seq.size()) {
    throw std::invalid_argument("atoms_from_frames_and_torsions: length mismatch");
  }
  AtomSet out(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const ResidueTemplate& tmpl = templates[seq[i]];
    const std::vector<Rigid> groups = residue_group_frames(tmpl, torsions[i]);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const RigidGroup& group = tmpl.groups[g];
      if (group.torsion >= 0 && !torsions[i].mask[group.torsion]) continue;
      const Rigid global = compose(frames[i], groups[g]);
      for (const auto& [slot, local] : group.atoms) out.set(i, slot, apply(global, local));
    }
  }
  return out;
}

AtomSet atoms_from_state(const ProteinState& state, const RigidGroupTemplates& templates) {
  return atoms_from_frames_and_torsions(state.sequence, state.frames, state.torsions, templates);
}

std::vector<TorsionAngles> torsions_from_atoms(const std::vector<ResidueType>& seq, const AtomSet& atoms,
                                               const RigidGroupTemplates& templates) {
  if (atoms.n != seq.size()) throw std::invalid_argument("torsions_from_atoms: length mismatch");
  std::vector<TorsionAngles> out(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    TorsionAngles& t = out[i];
    t.mask = torsion_mask_for(seq[i], i == 0);
    auto fill = [&](int k, std::size_t r0, int a0, std::size_t r1, int a1, std::size_t r2, int a2, std::size_t r3,
                    int a3, double shift) {
      if (!t.mask[k]) return;
      if (!atoms.has(r0, a0) || !atoms.has(r1, a1) || !atoms.has(r2, a2) || !atoms.has(r3, a3)) {
        t.mask[k] = false;
        t.angles[k] = {0.0, 1.0};
        return;
      }
      t.set_angle(k, dihedral(atoms.at(r0, a0), atoms.at(r1, a1), atoms.at(r2, a2), atoms.at(r3, a3)) + shift);
    };
    if (i > 0) {
      fill(kOmega, i - 1, kSlotCA, i - 1, kSlotC, i, kSlotN, i, kSlotCA, 0.0);
      fill(kPhi, i - 1, kSlotC, i, kSlotN, i, kSlotCA, i, kSlotC, 0.0);
    }
    // The psi group places O; its rotation angle is dihedral(N, CA, C, O) shifted by pi.
    fill(kPsi, i, kSlotN, i, kSlotCA, i, kSlotC, i, kSlotO, std::numbers::pi);
    const ResidueTemplate& tmpl = templates[seq[i]];
    for (std::size_t k = 0; k < tmpl.chi_atoms.size(); ++k) {
      const auto& c = tmpl.chi_atoms[k];
      fill(kChi1 + static_cast<int>(k), i, c[0], i, c[1], i, c[2], i, c[3], 0.0);
    }
  }
  return out;
}

ProteinState state_from_atoms(const std::vector<ResidueType>& seq, const AtomSet& atoms,
                              const RigidGroupTemplates& templates) {
  ProteinState st;
  st.sequence = seq;
  st.frames.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!atoms.has(i, kSlotN) || !atoms.has(i, kSlotCA) || !atoms.has(i, kSlotC)) {
      throw std::invalid_argument("state_from_atoms: residue " + std::to_string(i + 1) + " lacks N, CA or C");
    }
    st.frames.push_back(frames_from_backbone(atoms.at(i, kSlotN), atoms.at(i, kSlotCA), atoms.at(i, kSlotC)));
  }
  st.torsions = torsions_from_atoms(seq, atoms, templates);
  return st;
}

std::vector<TorsionAngles> alt_torsions(const std::vector<ResidueType>& seq, const std::vector<TorsionAngles>& torsions,
                                        const RigidGroupTemplates& templates) {
  if (torsions.size() != seq.size()) throw std::invalid_argument("alt_torsions: length mismatch");
  std::vector<TorsionAngles> out = torsions;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const int chi = templates[seq[i]].symmetric_chi;
    if (chi < 0) continue;
    auto& sc = out[i].angles[kChi1 + chi];
    sc = {-sc[0], -sc[1]};
  }
  return out;
}

std::vector<Vec3> ca_coords(const ProteinState& state) {
  std::vector<Vec3> out;
  out.reserve(state.frames.size());
  for (const auto& f : state.frames) out.push_back(f.trans);
  return out;
}

}  // namespace fourdfold

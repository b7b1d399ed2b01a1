#include "fourdfold/dataio.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace fourdfold {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

constexpr double kBondCN = 1.329;
constexpr double kAngleCaCN = 116.2 * kDeg;
constexpr double kAngleCNCa = 121.7 * kDeg;

// NeRF: place d so that |cd| = bond, angle(b, c, d) = angle, dihedral(a, b, c, d) = torsion.
Vec3 nerf(const Vec3& a, const Vec3& b, const Vec3& c, double bond, double angle, double torsion) {
  const Vec3 bc = (c - b).normalized();
  const Vec3 n = (b - a).cross(bc).normalized();
  const Vec3 m = n.cross(bc);
  return c - bond * std::cos(angle) * bc + bond * std::sin(angle) * std::cos(torsion) * m +
         bond * std::sin(angle) * std::sin(torsion) * n;
}

struct Base {
  std::vector<ResidueType> seq;
  std::vector<double> phi, psi;
  std::vector<std::array<double, 4>> chis;
  int pivot = 0;
};

Base make_base(const SynthOptions& opts) {
  if (opts.n < 4 || opts.l < 1) throw std::invalid_argument("synth_trajectory: require n >= 4 and l >= 1");
  Rng rng(opts.seed);
  std::uniform_int_distribution<int> pick(0, kNumResidueTypes - 1);
  Base b;
  for (int i = 0; i < opts.n; ++i) b.seq.push_back(static_cast<ResidueType>(pick(rng)));
  // Two helical segments joined by an extended pivot.
  b.phi.assign(opts.n, -57.0 * kDeg);
  b.psi.assign(opts.n, -47.0 * kDeg);
  b.pivot = opts.n / 2 - 1;
  b.psi[b.pivot] = 120.0 * kDeg;
  b.phi[b.pivot + 1] = -90.0 * kDeg;
  std::uniform_int_distribution<int> rotamer(0, 2);
  constexpr std::array<double, 3> kRotamers = {-60.0 * kDeg, 180.0 * kDeg, 60.0 * kDeg};
  for (int i = 0; i < opts.n; ++i) {
    std::array<double, 4> chi{};
    for (auto& c : chi) c = kRotamers[rotamer(rng)];
    b.chis.push_back(chi);
  }
  return b;
}

void translate_state(ProteinState& st, const Vec3& shift) {
  for (auto& f : st.frames) f.trans += shift;
}

// Recompute torsions after moving frames so the state stays self-consistent.
void refresh_torsions(ProteinState& st) {
  const AtomSet atoms = atoms_from_state(st);
  const auto recomputed = torsions_from_atoms(st.sequence, atoms);
  for (std::size_t i = 0; i < st.size(); ++i) {
    st.torsions[i].angles[kOmega] = recomputed[i].angles[kOmega];
    st.torsions[i].angles[kPhi] = recomputed[i].angles[kPhi];
    st.torsions[i].mask[kOmega] = recomputed[i].mask[kOmega];
    st.torsions[i].mask[kPhi] = recomputed[i].mask[kPhi];
  }
}

Vec3 ca_centroid(const ProteinState& st, std::size_t begin, std::size_t end) {
  Vec3 c = Vec3::Zero();
  for (std::size_t i = begin; i < end; ++i) c += st.frames[i].trans;
  return c / static_cast<double>(end - begin);
}

}  // namespace

SynthKind synth_kind_from_string(const std::string& name) {
  if (name == "hinge") return SynthKind::Hinge;
  if (name == "breathe") return SynthKind::Breathe;
  if (name == "two_state") return SynthKind::TwoState;
  throw std::invalid_argument("unknown synth kind '" + name + "' (hinge, breathe, two_state)");
}

ProteinState build_peptide(const std::vector<ResidueType>& seq, const std::vector<double>& phi,
                           const std::vector<double>& psi, const std::vector<std::array<double, 4>>& chis,
                           const RigidGroupTemplates& templates) {
  const std::size_t n = seq.size();
  if (n == 0 || phi.size() != n || psi.size() != n || chis.size() != n) {
    throw std::invalid_argument("build_peptide: length mismatch");
  }
  // Intra-residue geometry follows the backbone template so frames are exact.
  const ResidueTemplate& gly = templates[ResidueType::GLY];
  Vec3 t_n = Vec3::Zero(), t_ca = Vec3::Zero(), t_c = Vec3::Zero();
  for (const auto& [slot, p] : gly.groups.front().atoms) {
    if (slot == kSlotN) t_n = p;
    if (slot == kSlotCA) t_ca = p;
    if (slot == kSlotC) t_c = p;
  }
  const double bond_nca = (t_n - t_ca).norm();
  const double bond_cac = (t_c - t_ca).norm();
  const double angle_ncac = std::acos((t_n - t_ca).normalized().dot((t_c - t_ca).normalized()));

  std::vector<Vec3> bn(n), bca(n), bc(n);
  bn[0] = t_n;
  bca[0] = t_ca;
  bc[0] = t_c;
  for (std::size_t i = 1; i < n; ++i) {
    bn[i] = nerf(bn[i - 1], bca[i - 1], bc[i - 1], kBondCN, kAngleCaCN, psi[i - 1]);
    bca[i] = nerf(bca[i - 1], bc[i - 1], bn[i], bond_nca, kAngleCNCa, kPi);
    bc[i] = nerf(bc[i - 1], bn[i], bca[i], bond_cac, angle_ncac, phi[i]);
  }
  ProteinState st;
  st.sequence = seq;
  for (std::size_t i = 0; i < n; ++i) {
    st.frames.push_back(frames_from_backbone(bn[i], bca[i], bc[i]));
    TorsionAngles t;
    t.mask = torsion_mask_for(seq[i], i == 0);
    // With a trans peptide, O is anti to the next N, so the psi-group angle equals psi.
    t.set_angle(kPsi, psi[i]);
    for (int k = 0; k < num_chi(seq[i]); ++k) t.set_angle(kChi1 + k, chis[i][static_cast<std::size_t>(k)]);
    st.torsions.push_back(t);
  }
  refresh_torsions(st);
  return st;
}

std::array<ProteinState, 2> synth_two_state_conformations(const SynthOptions& opts) {
  const Base b = make_base(opts);
  ProteinState a = build_peptide(b.seq, b.phi, b.psi, b.chis);
  std::vector<double> psi = b.psi;
  psi[b.pivot] += opts.amplitude;
  ProteinState c = build_peptide(b.seq, b.phi, psi, b.chis);
  const Vec3 center = ca_centroid(a, 0, a.size());
  translate_state(a, -center);
  translate_state(c, -center);
  return {a, c};
}

Trajectory synth_trajectory(const SynthOptions& opts) {
  const Base b = make_base(opts);
  Rng rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Trajectory traj;
  traj.dt = opts.dt;
  const double omega_t = 2.0 * kPi / opts.period;
  const std::size_t n = b.seq.size();

  if (opts.kind == SynthKind::TwoState) {
    const auto confs = synth_two_state_conformations(opts);
    std::uniform_real_distribution<double> jitter(-opts.noise, opts.noise);
    std::exponential_distribution<double> dwell(1.0 / std::max(1, opts.mean_dwell));
    int which = 0;
    int remaining = std::max(1, static_cast<int>(std::lround(dwell(rng))));
    for (int s = 0; s < opts.l; ++s) {
      if (remaining == 0) {
        which = 1 - which;
        remaining = std::max(1, static_cast<int>(std::lround(dwell(rng))));
      }
      --remaining;
      ProteinState st = confs[static_cast<std::size_t>(which)];
      for (auto& f : st.frames) f.trans += Vec3(jitter(rng), jitter(rng), jitter(rng));
      refresh_torsions(st);
      st.step_time = s * opts.dt;
      traj.states.push_back(std::move(st));
    }
    return traj;
  }

  const double sigma = opts.jitter * std::abs(opts.amplitude);
  Vec3 center = Vec3::Zero();
  Vec3 domain_axis = Vec3::Zero();
  for (int s = 0; s < opts.l; ++s) {
    const double phase = omega_t * s;
    std::vector<double> phi = b.phi, psi = b.psi;
    if (opts.kind == SynthKind::Hinge) {
      psi[b.pivot] += opts.amplitude * std::sin(phase);
      phi[b.pivot + 1] += 0.5 * opts.amplitude * std::cos(phase);
    }
    if (sigma > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        phi[i] += sigma * normal(rng);
        psi[i] += sigma * normal(rng);
      }
    }
    ProteinState st = build_peptide(b.seq, phi, psi, b.chis);
    if (s == 0) {
      center = ca_centroid(st, 0, n);
      domain_axis = ca_centroid(st, b.pivot + 1, n) - ca_centroid(st, 0, b.pivot + 1);
    }
    if (opts.kind == SynthKind::Breathe) {
      const Vec3 shift = opts.amplitude * std::sin(phase) * domain_axis;
      for (std::size_t i = static_cast<std::size_t>(b.pivot) + 1; i < n; ++i) st.frames[i].trans += shift;
      refresh_torsions(st);
    }
    translate_state(st, -center);
    st.step_time = s * opts.dt;
    traj.states.push_back(std::move(st));
  }
  return traj;
}

}  // namespace fourdfold

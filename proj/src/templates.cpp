#include "fourdfold/protein.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fourdfold {

namespace detail {
extern const std::string_view kEmbeddedTemplates;
}

namespace {

constexpr const char* kTemplateFormat = "fourdfold-templates/1";

std::string fmt6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

ResidueTemplate parse_residue(ResidueType type, const nlohmann::json& r) {
  ResidueTemplate t;
  t.type = type;
  const auto& atoms = r.at("atoms");
  if (atoms.size() > kAtomsPerResidue) throw std::runtime_error("templates: too many atoms");
  for (std::size_t k = 0; k < atoms.size(); ++k) t.slot_names[k] = atoms[k].get<std::string>();
  t.atom_count = static_cast<int>(atoms.size());
  if (t.slot_names[kSlotN] != "N" || t.slot_names[kSlotCA] != "CA" || t.slot_names[kSlotC] != "C" ||
      t.slot_names[kSlotO] != "O") {
    throw std::runtime_error("templates: backbone slots must be N, CA, C, O");
  }
  auto slot = [&](const std::string& name) {
    const int s = t.slot_of(name);
    if (s < 0) throw std::runtime_error("templates: unknown atom " + name);
    return s;
  };
  for (const auto& chi : r.at("chi_atoms")) {
    std::array<int, 4> ids{};
    for (int k = 0; k < 4; ++k) ids[k] = slot(chi.at(k).get<std::string>());
    t.chi_atoms.push_back(ids);
  }
  for (const auto& g : r.at("groups")) {
    RigidGroup group;
    group.name = g.at("name").get<std::string>();
    group.torsion = g.at("torsion").get<int>();
    group.parent = g.at("parent").get<int>();
    const auto& rot = g.at("default_frame").at("rot");
    const auto& tr = g.at("default_frame").at("trans");
    Mat3 m;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) m(a, b) = rot.at(3 * a + b).get<double>();
    group.default_frame = {Rotation(m), Vec3(tr.at(0).get<double>(), tr.at(1).get<double>(), tr.at(2).get<double>())};
    for (const auto& a : g.at("atoms")) {
      const auto& xyz = a.at(1);
      group.atoms.emplace_back(slot(a.at(0).get<std::string>()),
                               Vec3(xyz.at(0).get<double>(), xyz.at(1).get<double>(), xyz.at(2).get<double>()));
    }
    t.groups.push_back(std::move(group));
  }
  if (r.contains("symmetric_chi")) {
    t.symmetric_chi = r["symmetric_chi"].at("chi").get<int>();
    for (const auto& p : r["symmetric_chi"].at("swap")) {
      t.swap_pairs.emplace_back(slot(p.at(0).get<std::string>()), slot(p.at(1).get<std::string>()));
    }
  }
  return t;
}

}  // namespace

int ResidueTemplate::slot_of(std::string_view atom) const {
  for (int k = 0; k < atom_count; ++k) {
    if (slot_names[k] == atom) return k;
  }
  return -1;
}

std::string fnv1a64_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char ch : text) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RigidGroupTemplates::canonical_text() const {
  // Residues sorted by three-letter code, which is the enum order.
  std::string out;
  for (const auto& t : residues_) {
    out += std::string(three_letter(t.type)) + ":" + one_letter(t.type) + ";";
    for (const auto& g : t.groups) {
      out += "g" + g.name + "," + std::to_string(g.torsion) + "," + std::to_string(g.parent) + ";";
      const Mat3& m = g.default_frame.rot.matrix();
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) out += fmt6(m(a, b)) + ",";
      for (int a = 0; a < 3; ++a) out += fmt6(g.default_frame.trans[a]) + ",";
      for (const auto& [slot, p] : g.atoms) {
        out += t.slot_names[slot] + "=" + fmt6(p.x()) + "," + fmt6(p.y()) + "," + fmt6(p.z()) + ";";
      }
    }
    if (t.symmetric_chi >= 0) out += "sym" + std::to_string(t.symmetric_chi) + ";";
  }
  return out;
}

RigidGroupTemplates RigidGroupTemplates::from_json_text(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("templates: parse error: ") + e.what());
  }
  if (doc.value("format", "") != kTemplateFormat) {
    throw std::runtime_error("templates: unsupported format, expected " + std::string(kTemplateFormat));
  }
  RigidGroupTemplates out;
  const auto& residues = doc.at("residues");
  if (residues.size() != kNumResidueTypes) throw std::runtime_error("templates: expected 20 residue types");
  for (int k = 0; k < kNumResidueTypes; ++k) {
    const auto type = static_cast<ResidueType>(k);
    const std::string name(three_letter(type));
    if (!residues.contains(name)) throw std::runtime_error("templates: missing residue " + name);
    out.residues_[k] = parse_residue(type, residues[name]);
    if (residues[name].at("one_letter").get<std::string>() != std::string(1, one_letter(type))) {
      throw std::runtime_error("templates: one-letter code mismatch for " + name);
    }
  }
  out.checksum_ = fnv1a64_hex(out.canonical_text());
  const std::string declared = doc.at("checksum").get<std::string>();
  if (declared != out.checksum_) {
    throw std::runtime_error("templates: checksum mismatch (file " + declared + ", computed " + out.checksum_ + ")");
  }
  return out;
}

RigidGroupTemplates RigidGroupTemplates::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("templates: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

const RigidGroupTemplates& default_templates() {
  static const RigidGroupTemplates table = RigidGroupTemplates::from_json_text(detail::kEmbeddedTemplates);
  return table;
}

}  // namespace fourdfold

#include "fourdfold/dataio.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace fourdfold {

namespace {

using nlohmann::json;

bool ends_with(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  std::string tail = s.substr(s.size() - suffix.size());
  std::transform(tail.begin(), tail.end(), tail.begin(), [](unsigned char c) { return std::tolower(c); });
  return tail == suffix;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(' ');
  return s.substr(b, e - b + 1);
}

std::string field(const std::string& line, std::size_t start, std::size_t len) {
  if (line.size() <= start) return "";
  return line.substr(start, std::min(len, line.size() - start));
}

double parse_double(const std::string& text, const std::string& what, int line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (trim(text.substr(used)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError("PDB line " + std::to_string(line_no) + ": bad " + what + " '" + text + "'");
}

struct PdbResidue {
  std::string key;  // chain + resSeq + iCode
  ResidueType type = ResidueType::GLY;
  std::map<std::string, Vec3> atoms;
};

ProteinState model_to_state(const std::vector<PdbResidue>& residues, int model_no) {
  const RigidGroupTemplates& templates = default_templates();
  std::vector<ResidueType> seq;
  AtomSet atoms(residues.size());
  for (std::size_t i = 0; i < residues.size(); ++i) {
    seq.push_back(residues[i].type);
    const ResidueTemplate& tmpl = templates[residues[i].type];
    for (const auto& [name, p] : residues[i].atoms) {
      const int slot = tmpl.slot_of(name);
      if (slot >= 0) atoms.set(i, slot, p);
    }
    for (const int slot : {kSlotN, kSlotCA, kSlotC}) {
      if (!atoms.has(i, slot)) {
        throw ParseError("PDB model " + std::to_string(model_no) + " residue " + std::to_string(i + 1) + " (" +
                         residues[i].key + ") is missing backbone atom " + tmpl.slot_names[slot]);
      }
    }
  }
  try {
    return state_from_atoms(seq, atoms, templates);
  } catch (const DegenerateGeometry& e) {
    throw ParseError("PDB model " + std::to_string(model_no) + ": " + e.what());
  }
}

std::string pdb_atom_name(const std::string& name) {
  if (name.size() >= 4) return name.substr(0, 4);
  std::string out = " " + name;
  out.resize(4, ' ');
  return out;
}

}  // namespace

std::string trajectory_to_json(const Trajectory& traj) {
  traj.validate();
  json doc;
  doc["format"] = kTrajectoryFormat;
  doc["sequence"] = sequence_string(traj.sequence());
  doc["dt_ps"] = traj.dt;
  json states = json::array();
  for (const auto& st : traj.states) {
    json frames = json::array();
    for (const auto& f : st.frames) {
      const Quat q = f.rot.to_quaternion();
      frames.push_back(json::array({json::array({q[0], q[1], q[2], q[3]}),
                                    json::array({f.trans.x(), f.trans.y(), f.trans.z()})}));
    }
    json torsions = json::array();
    json masks = json::array();
    for (const auto& t : st.torsions) {
      json pairs = json::array();
      json mask = json::array();
      for (int k = 0; k < kNumTorsions; ++k) {
        pairs.push_back(json::array({t.angles[k][0], t.angles[k][1]}));
        mask.push_back(t.mask[k]);
      }
      torsions.push_back(pairs);
      masks.push_back(mask);
    }
    states.push_back({{"frames", frames}, {"torsions", torsions}, {"masks", masks}, {"step_time", st.step_time}});
  }
  doc["states"] = states;
  return doc.dump();
}

Trajectory trajectory_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("trajectory JSON: ") + e.what());
  }
  try {
    if (doc.value("format", "") != kTrajectoryFormat) {
      throw ParseError("trajectory JSON: expected format " + std::string(kTrajectoryFormat));
    }
    Trajectory traj;
    traj.dt = doc.at("dt_ps").get<double>();
    const std::vector<ResidueType> seq = parse_sequence(doc.at("sequence").get<std::string>());
    const auto& states = doc.at("states");
    if (states.empty()) throw ParseError("trajectory JSON: no states");
    for (std::size_t s = 0; s < states.size(); ++s) {
      const auto& js = states[s];
      ProteinState st;
      st.sequence = seq;
      st.step_time = js.value("step_time", 0.0);
      const auto& frames = js.at("frames");
      const auto& torsions = js.at("torsions");
      if (frames.size() != seq.size() || torsions.size() != seq.size()) {
        throw ParseError("trajectory JSON: state " + std::to_string(s) + " length differs from sequence");
      }
      for (const auto& f : frames) {
        const auto& q = f.at(0);
        const auto& x = f.at(1);
        st.frames.push_back({quat_to_rot(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                                         q.at(3).get<double>()),
                             Vec3(x.at(0).get<double>(), x.at(1).get<double>(), x.at(2).get<double>())});
      }
      for (std::size_t i = 0; i < seq.size(); ++i) {
        TorsionAngles t;
        t.mask = torsion_mask_for(seq[i], i == 0);
        for (int k = 0; k < kNumTorsions; ++k) {
          t.angles[k] = {torsions[i].at(k).at(0).get<double>(), torsions[i].at(k).at(1).get<double>()};
        }
        if (js.contains("masks")) {
          for (int k = 0; k < kNumTorsions; ++k) t.mask[k] = js["masks"].at(i).at(k).get<bool>();
        }
        st.torsions.push_back(t);
      }
      traj.states.push_back(std::move(st));
    }
    return traj;
  } catch (const json::exception& e) {
    throw ParseError(std::string("trajectory JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("trajectory JSON: ") + e.what());
  }
}

Trajectory read_pdb(std::istream& in) {
  Trajectory traj;
  std::vector<PdbResidue> current;
  bool in_model = false;
  bool saw_atoms = false;
  int model_no = 0;
  int line_no = 0;
  auto flush = [&]() {
    if (current.empty()) return;
    ProteinState st = model_to_state(current, model_no);
    if (!traj.states.empty() && st.sequence != traj.states.front().sequence) {
      throw ParseError("PDB model " + std::to_string(model_no) + ": sequence differs from model 1");
    }
    traj.states.push_back(std::move(st));
    current.clear();
  };
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string rec = field(line, 0, 6);
    if (rec == "MODEL ") {
      flush();
      in_model = true;
      ++model_no;
    } else if (rec == "ENDMDL") {
      flush();
      in_model = false;
    } else if (rec == "ATOM  ") {
      if (!in_model && model_no == 0) model_no = 1;
      saw_atoms = true;
      const std::string name = trim(field(line, 12, 4));
      const std::string alt = field(line, 16, 1);
      if (alt != " " && alt != "" && alt != "A") continue;
      if (!name.empty() && name[0] == 'H') continue;
      const std::string res_name = trim(field(line, 17, 3));
      const std::string key = field(line, 21, 1) + trim(field(line, 22, 4)) + trim(field(line, 26, 1));
      if (line.size() < 54) throw ParseError("PDB line " + std::to_string(line_no) + ": truncated ATOM record");
      const Vec3 p(parse_double(field(line, 30, 8), "x", line_no), parse_double(field(line, 38, 8), "y", line_no),
                   parse_double(field(line, 46, 8), "z", line_no));
      if (current.empty() || current.back().key != key) {
        PdbResidue r;
        r.key = key;
        try {
          r.type = residue_from_code(res_name);
        } catch (const std::invalid_argument&) {
          throw ParseError("PDB line " + std::to_string(line_no) + ": unknown residue " + res_name);
        }
        current.push_back(std::move(r));
      }
      current.back().atoms.emplace(name, p);
    }
  }
  flush();
  if (!saw_atoms || traj.states.empty()) throw ParseError("PDB: no ATOM records");
  return traj;
}

void write_pdb(const Trajectory& traj, std::ostream& out, const RigidGroupTemplates& templates) {
  traj.validate();
  char buf[128];
  for (std::size_t s = 0; s < traj.states.size(); ++s) {
    const ProteinState& st = traj.states[s];
    const AtomSet atoms = atoms_from_state(st, templates);
    std::snprintf(buf, sizeof(buf), "MODEL     %4zu\n", s + 1);
    out << buf;
    int serial = 1;
    for (std::size_t i = 0; i < st.size(); ++i) {
      const ResidueTemplate& tmpl = templates[st.sequence[i]];
      for (int slot = 0; slot < tmpl.atom_count; ++slot) {
        if (!atoms.has(i, slot)) continue;
        const Vec3& p = atoms.at(i, slot);
        const std::string& name = tmpl.slot_names[slot];
        std::snprintf(buf, sizeof(buf), "ATOM  %5d %4s %3s A%4zu    %8.3f%8.3f%8.3f%6.2f%6.2f          %2c\n",
                      serial++ % 100000, pdb_atom_name(name).c_str(), std::string(three_letter(st.sequence[i])).c_str(),
                      (i + 1) % 10000, p.x(), p.y(), p.z(), 1.0, 0.0, name[0]);
        out << buf;
      }
    }
    std::snprintf(buf, sizeof(buf), "TER   %5d      %3s A%4zu\n", serial, std::string(three_letter(st.sequence.back())).c_str(),
                  st.size() % 10000);
    out << buf << "ENDMDL\n";
  }
  out << "END\n";
}

void write_pdb(const Trajectory& traj, const std::string& path, const RigidGroupTemplates& templates) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_pdb(traj, out, templates);
  if (!out) throw std::runtime_error("write failed: " + path);
}

Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  if (ends_with(path, ".pdb")) return read_pdb(in);
  std::stringstream buf;
  buf << in.rdbuf();
  Trajectory traj = trajectory_from_json(buf.str());
  traj.validate();
  return traj;
}

void save_trajectory(const Trajectory& traj, const std::string& path) {
  const std::string text = trajectory_to_json(traj);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

WindowList make_windows(const Trajectory& traj, int s_mot, int s_ref, int s, int stride,
                        const std::string& protein_id) {
  if (s_mot < 0 || s_ref < 1 || s < 1 || stride < 1) {
    throw std::invalid_argument("make_windows: require s_mot >= 0, s_ref >= 1, s >= 1, stride >= 1");
  }
  WindowList out;
  const std::size_t span = static_cast<std::size_t>(s_mot + s_ref + s);
  if (traj.size() < span) {
    out.too_short = true;
    return out;
  }
  const std::size_t count = (traj.size() - span) / static_cast<std::size_t>(stride) + 1;
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t start = w * static_cast<std::size_t>(stride);
    WindowSample ws;
    ws.protein_id = protein_id;
    ws.window_start = start;
    for (int k = 0; k < s_mot; ++k) ws.motion.push_back(traj.states[start + k]);
    ws.reference = traj.states[start + s_mot + s_ref - 1];
    for (int k = 0; k < s; ++k) ws.targets.push_back(traj.states[start + s_mot + s_ref + k]);
    out.windows.push_back(std::move(ws));
  }
  return out;
}

std::pair<Trajectory, Trajectory> split_s2l(const Trajectory& traj) {
  if (traj.size() < 20) throw std::invalid_argument("split_s2l: trajectory needs at least 20 states");
  const std::size_t n_train = (traj.size() * 9) / 10;
  Trajectory train, held;
  train.dt = held.dt = traj.dt;
  train.states.assign(traj.states.begin(), traj.states.begin() + static_cast<std::ptrdiff_t>(n_train));
  held.states.assign(traj.states.begin() + static_cast<std::ptrdiff_t>(n_train), traj.states.end());
  return {train, held};
}

SplitSpec split_o2o(const std::vector<std::string>& protein_ids, const std::array<double, 3>& fractions,
                    std::uint64_t seed) {
  const std::size_t n = protein_ids.size();
  if (n < 3) throw std::invalid_argument("split_o2o: need at least 3 proteins for three partitions");
  for (const double f : fractions) {
    if (!(f > 0.0)) throw std::invalid_argument("split_o2o: fractions must be positive");
  }
  const double total = fractions[0] + fractions[1] + fractions[2];
  std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fractions[1] / total * n)));
  std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fractions[2] / total * n)));
  while (n_val + n_test > n - 1) {
    if (n_val >= n_test && n_val > 1) --n_val;
    else if (n_test > 1) --n_test;
    else break;
  }
  std::vector<std::string> ids = protein_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw std::invalid_argument("split_o2o: duplicate protein ids");
  }
  Rng rng(seed);
  // Fisher-Yates with an explicit draw so the partition is portable across standard libraries.
  for (std::size_t k = ids.size() - 1; k > 0; --k) {
    const std::size_t j = static_cast<std::size_t>(rng() % (k + 1));
    std::swap(ids[k], ids[j]);
  }
  SplitSpec spec;
  spec.mode = SplitMode::O2O;
  spec.seed = seed;
  const std::size_t n_train = n - n_val - n_test;
  spec.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  spec.validation.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                         ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  spec.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return spec;
}

}  // namespace fourdfold

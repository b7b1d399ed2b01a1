#!/usr/bin/env python3
"""Generate data/residue_templates.json.

Rigid-group templates for the 20 standard residues, AlphaFold2 layout:
group 0 = backbone (N, CA, C, CB), psi group (O), chi1..chi4 groups.
Side-chain coordinates come from Amber-style internal coordinates
(bond length, bond angle, dihedral) placed with NeRF, then re-expressed
in each group's local frame at zero torsion.

Usage: gen_residue_templates.py [output.json]
"""

import json
import math
import sys

import numpy as np

PI = math.pi
DEG = PI / 180.0
RING = 2.0 * PI / 3.0  # aromatic rings are exact hexagons so the chi flip maps them onto themselves

ONE_LETTER = {
    "ALA": "A", "ARG": "R", "ASN": "N", "ASP": "D", "CYS": "C",
    "GLN": "Q", "GLU": "E", "GLY": "G", "HIS": "H", "ILE": "I",
    "LEU": "L", "LYS": "K", "MET": "M", "PHE": "F", "PRO": "P",
    "SER": "S", "THR": "T", "TRP": "W", "TYR": "Y", "VAL": "V",
}

ATOM14 = {
    "ALA": ["N", "CA", "C", "O", "CB"],
    "ARG": ["N", "CA", "C", "O", "CB", "CG", "CD", "NE", "CZ", "NH1", "NH2"],
    "ASN": ["N", "CA", "C", "O", "CB", "CG", "OD1", "ND2"],
    "ASP": ["N", "CA", "C", "O", "CB", "CG", "OD1", "OD2"],
    "CYS": ["N", "CA", "C", "O", "CB", "SG"],
    "GLN": ["N", "CA", "C", "O", "CB", "CG", "CD", "OE1", "NE2"],
    "GLU": ["N", "CA", "C", "O", "CB", "CG", "CD", "OE1", "OE2"],
    "GLY": ["N", "CA", "C", "O"],
    "HIS": ["N", "CA", "C", "O", "CB", "CG", "ND1", "CD2", "CE1", "NE2"],
    "ILE": ["N", "CA", "C", "O", "CB", "CG1", "CG2", "CD1"],
    "LEU": ["N", "CA", "C", "O", "CB", "CG", "CD1", "CD2"],
    "LYS": ["N", "CA", "C", "O", "CB", "CG", "CD", "CE", "NZ"],
    "MET": ["N", "CA", "C", "O", "CB", "CG", "SD", "CE"],
    "PHE": ["N", "CA", "C", "O", "CB", "CG", "CD1", "CD2", "CE1", "CE2", "CZ"],
    "PRO": ["N", "CA", "C", "O", "CB", "CG", "CD"],
    "SER": ["N", "CA", "C", "O", "CB", "OG"],
    "THR": ["N", "CA", "C", "O", "CB", "OG1", "CG2"],
    "TRP": ["N", "CA", "C", "O", "CB", "CG", "CD1", "CD2", "NE1", "CE2",
            "CE3", "CZ2", "CZ3", "CH2"],
    "TYR": ["N", "CA", "C", "O", "CB", "CG", "CD1", "CD2", "CE1", "CE2",
            "CZ", "OH"],
    "VAL": ["N", "CA", "C", "O", "CB", "CG1", "CG2"],
}

CHI_ATOMS = {
    "ALA": [],
    "ARG": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD"],
            ["CB", "CG", "CD", "NE"], ["CG", "CD", "NE", "CZ"]],
    "ASN": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "OD1"]],
    "ASP": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "OD1"]],
    "CYS": [["N", "CA", "CB", "SG"]],
    "GLN": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD"],
            ["CB", "CG", "CD", "OE1"]],
    "GLU": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD"],
            ["CB", "CG", "CD", "OE1"]],
    "GLY": [],
    "HIS": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "ND1"]],
    "ILE": [["N", "CA", "CB", "CG1"], ["CA", "CB", "CG1", "CD1"]],
    "LEU": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD1"]],
    "LYS": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD"],
            ["CB", "CG", "CD", "CE"], ["CG", "CD", "CE", "NZ"]],
    "MET": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "SD"],
            ["CB", "CG", "SD", "CE"]],
    "PHE": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD1"]],
    "PRO": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD"]],
    "SER": [["N", "CA", "CB", "OG"]],
    "THR": [["N", "CA", "CB", "OG1"]],
    "TRP": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD1"]],
    "TYR": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD1"]],
    "VAL": [["N", "CA", "CB", "CG1"]],
}

# chi index (0-based) whose pi rotation only relabels symmetric atoms.
SYMMETRIC_CHI = {
    "ASP": {"chi": 1, "swap": [["OD1", "OD2"]]},
    "GLU": {"chi": 2, "swap": [["OE1", "OE2"]]},
    "PHE": {"chi": 1, "swap": [["CD1", "CD2"], ["CE1", "CE2"]]},
    "TYR": {"chi": 1, "swap": [["CD1", "CD2"], ["CE1", "CE2"]]},
}

# (atom, ref_a, ref_b, ref_c, bond, angle_rad, dihedral)
# dihedral: ("chi", k, offset) or ("fixed", value)
SIDECHAIN = {
    "ARG": [
        ("CG", "N", "CA", "CB", 1.526, 1.91114, ("chi", 0, 0.0)),
        ("CD", "CA", "CB", "CG", 1.526, 1.91114, ("chi", 1, 0.0)),
        ("NE", "CB", "CG", "CD", 1.463, 1.94081, ("chi", 2, 0.0)),
        ("CZ", "CG", "CD", "NE", 1.340, 2.15025, ("chi", 3, 0.0)),
        ("NH1", "CD", "NE", "CZ", 1.340, 2.0944, ("fixed", 0.0)),
        ("NH2", "CD", "NE", "CZ", 1.340, 2.0944, ("fixed", PI)),
    ],
    "ASN": [
        ("CG", "N", "CA", "CB", 1.522, 1.93906, ("chi", 0, 0.0)),
        ("OD1", "CA", "CB", "CG", 1.229, 2.10138, ("chi", 1, 0.0)),
        ("ND2", "CA", "CB", "CG", 1.335, 2.03505, ("chi", 1, PI)),
    ],
    "ASP": [
        ("CG", "N", "CA", "CB", 1.522, 1.93906, ("chi", 0, 0.0)),
        ("OD1", "CA", "CB", "CG", 1.250, 2.04204, ("chi", 1, 0.0)),
        ("OD2", "CA", "CB", "CG", 1.250, 2.04204, ("chi", 1, PI)),
    ],
    "CYS": [
        ("SG", "N", "CA", "CB", 1.810, 1.89543, ("chi", 0, 0.0)),
    ],
    "GLN": [
        ("CG", "N", "CA", "CB", 1.526, 1.91114, ("chi", 0, 0.0)),
        ("CD", "CA", "CB", "CG", 1.522, 1.93906, ("chi", 1, 0.0)),
        ("OE1", "CB", "CG", "CD", 1.229, 2.10138, ("chi", 2, 0.0)),
        ("NE2", "CB", "CG", "CD", 1.335, 2.03505, ("chi", 2, PI)),
    ],
    "GLU": [
        ("CG", "N", "CA", "CB", 1.526, 1.91114, ("chi", 0, 0.0)),
        ("CD", "CA", "CB", "CG", 1.522, 1.93906, ("chi", 1, 0.0)),
        ("OE1", "CB", "CG", "CD", 1.250, 2.04204, ("chi", 2, 0.0)),
        ("OE2", "CB", "CG", "CD", 1.250, 2.04204, ("chi", 2, PI)),
    ],
    "HIS": [
        ("CG", "N", "CA", "CB", 1.504, 1.97397, ("chi", 0, 0.0)),
        ("ND1", "CA", "CB", "CG", 1.385, 2.0944, ("chi", 1, 0.0)),
        ("CE1", "CB", "CG", "ND1", 1.343, 1.88496, ("fixed", PI)),
        ("NE2", "CG", "ND1", "CE1", 1.335, 1.88496, ("fixed", 0.0)),
        ("CD2", "ND1", "CE1", "NE2", 1.394, 1.88496, ("fixed", 0.0)),
    ],
    "ILE": [
        ("CG1", "N", "CA", "CB", 1.526, 1.91114, ("chi", 0, 0.0)),
        ("CG2", "N", "CA", "CB", 1.526, 1.91114, ("chi", 0, -123.2 * DEG)),
        ("CD1", "CA", "CB", "CG1", 1.526, 1.91114, ("chi", 1, 0.0)),
    ],
    "LEU": [
        ("CG", "N", "CA", "CB", 1.526, 1.91114, ("chi", 0, 0.0)),
        ("CD1", "CA", "CB", "CG", 1.526, 1.91114, ("chi", 1, 0.0)),
        ("CD2", "CA", "CB", "CG", 1.526, 1.91114, ("chi", 1, 122.8 * DEG)),
    ],
    "LYS": [
        ("CG", "N", "CA", "CB", 1.526, 1.91114, ("chi", 0, 0.0)),
        ("CD", "CA", "CB", "CG", 1.526, 1.91114, ("chi", 1, 0.0)),
        ("CE", "CB", "CG", "CD", 1.526, 1.91114, ("chi", 2, 0.0)),
        ("NZ", "CG", "CD", "CE", 1.471, 1.94081, ("chi", 3, 0.0)),
    ],
    "MET": [
        ("CG", "N", "CA", "CB", 1.526, 1.91114, ("chi", 0, 0.0)),
        ("SD", "CA", "CB", "CG", 1.810, 2.00189, ("chi", 1, 0.0)),
        ("CE", "CB", "CG", "SD", 1.810, 1.72613, ("chi", 2, 0.0)),
    ],
    "PHE": [
        ("CG", "N", "CA", "CB", 1.510, 1.98968, ("chi", 0, 0.0)),
        ("CD1", "CA", "CB", "CG", 1.400, RING, ("chi", 1, 0.0)),
        ("CE1", "CB", "CG", "CD1", 1.400, RING, ("fixed", PI)),
        ("CZ", "CG", "CD1", "CE1", 1.400, RING, ("fixed", 0.0)),
        ("CE2", "CD1", "CE1", "CZ", 1.400, RING, ("fixed", 0.0)),
        ("CD2", "CE1", "CZ", "CE2", 1.400, RING, ("fixed", 0.0)),
    ],
    "PRO": [
        ("CG", "N", "CA", "CB", 1.526, 1.91114, ("chi", 0, 0.0)),
        ("CD", "CA", "CB", "CG", 1.526, 1.91114, ("chi", 1, 0.0)),
    ],
    "SER": [
        ("OG", "N", "CA", "CB", 1.410, 1.91114, ("chi", 0, 0.0)),
    ],
    "THR": [
        ("OG1", "N", "CA", "CB", 1.410, 1.91114, ("chi", 0, 0.0)),
        ("CG2", "N", "CA", "CB", 1.526, 1.91114, ("chi", 0, -120.3 * DEG)),
    ],
    "TRP": [
        ("CG", "N", "CA", "CB", 1.495, 2.0176, ("chi", 0, 0.0)),
        ("CD1", "CA", "CB", "CG", 1.352, 2.18166, ("chi", 1, 0.0)),
        ("NE1", "CB", "CG", "CD1", 1.381, 1.89717, ("fixed", PI)),
        ("CE2", "CG", "CD1", "NE1", 1.380, 1.94779, ("fixed", 0.0)),
        ("CZ2", "CD1", "NE1", "CE2", 1.400, 2.3178, ("fixed", PI)),
        ("CH2", "NE1", "CE2", "CZ2", 1.400, 2.0944, ("fixed", PI)),
        ("CZ3", "CE2", "CZ2", "CH2", 1.400, 2.0944, ("fixed", 0.0)),
        ("CE3", "CZ2", "CH2", "CZ3", 1.400, 2.0944, ("fixed", 0.0)),
        ("CD2", "CH2", "CZ3", "CE3", 1.404, 2.0944, ("fixed", 0.0)),
    ],
    "TYR": [
        ("CG", "N", "CA", "CB", 1.510, 1.98968, ("chi", 0, 0.0)),
        ("CD1", "CA", "CB", "CG", 1.400, RING, ("chi", 1, 0.0)),
        ("CE1", "CB", "CG", "CD1", 1.400, RING, ("fixed", PI)),
        ("CZ", "CG", "CD1", "CE1", 1.400, RING, ("fixed", 0.0)),
        ("OH", "CD1", "CE1", "CZ", 1.364, RING, ("fixed", PI)),
        ("CE2", "CD1", "CE1", "CZ", 1.400, RING, ("fixed", 0.0)),
        ("CD2", "CE1", "CZ", "CE2", 1.400, RING, ("fixed", 0.0)),
    ],
    "VAL": [
        ("CG1", "N", "CA", "CB", 1.526, 1.91114, ("chi", 0, 0.0)),
        ("CG2", "N", "CA", "CB", 1.526, 1.91114, ("chi", 0, 122.8 * DEG)),
    ],
}

# Backbone in the residue frame: CA at origin, C on +x, N in the xy plane.
BACKBONE = {
    "N": np.array([-0.525, 1.363, 0.0]),
    "CA": np.array([0.0, 0.0, 0.0]),
    "C": np.array([1.526, 0.0, 0.0]),
    "CB": np.array([-0.529, -0.774, -1.205]),
}
O_IN_PSI_FRAME = np.array([0.627, 1.062, 0.0])

TORSION_NAMES = ["omega", "phi", "psi", "chi1", "chi2", "chi3", "chi4"]


def make_frame(ex, ey, origin):
    e1 = ex / np.linalg.norm(ex)
    e2 = ey - np.dot(ey, e1) * e1
    e2 /= np.linalg.norm(e2)
    e3 = np.cross(e1, e2)
    return np.stack([e1, e2, e3], axis=1), np.asarray(origin, dtype=float)


def rot_x(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def dihedral(p0, p1, p2, p3):
    b0 = p0 - p1
    b1 = p2 - p1
    b2 = p3 - p2
    b1 = b1 / np.linalg.norm(b1)
    v = b0 - np.dot(b0, b1) * b1
    w = b2 - np.dot(b2, b1) * b1
    return math.atan2(np.dot(np.cross(b1, v), w), np.dot(v, w))


def nerf(a, b, c, bond, angle, torsion):
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.cross(n, bc)
    d2 = np.array([-bond * math.cos(angle),
                   bond * math.sin(angle) * math.cos(torsion),
                   bond * math.sin(angle) * math.sin(torsion)])
    return c + d2[0] * bc + d2[1] * m + d2[2] * n


def build_residue(name, chis):
    pos = {k: v.copy() for k, v in BACKBONE.items()}
    if name == "GLY":
        del pos["CB"]
    for atom, ra, rb, rc, bond, angle, spec in SIDECHAIN.get(name, []):
        if spec[0] == "chi":
            tor = chis[spec[1]] + spec[2]
        else:
            tor = spec[1]
        pos[atom] = nerf(pos[ra], pos[rb], pos[rc], bond, angle, tor)
    return pos


def to_local(rot, origin, p):
    return rot.T @ (p - origin)


def generate_residue(name):
    chi_defs = CHI_ATOMS[name]
    n_chi = len(chi_defs)
    build_chis = [(-65.0 + 37.0 * k) * DEG for k in range(4)]
    pos = build_residue(name, build_chis)

    for k, chi_atoms in enumerate(chi_defs):
        got = dihedral(*[pos[a] for a in chi_atoms])
        err = math.atan2(math.sin(got - build_chis[k]), math.cos(got - build_chis[k]))
        assert abs(err) < 1e-9, (name, k, got, build_chis[k])

    # Atom -> group: the highest chi whose rotation moves the atom.
    group_of = {"N": 0, "CA": 0, "C": 0, "O": 1}
    if name != "GLY":
        group_of["CB"] = 0
    for atom in pos:
        if atom in group_of:
            continue
        owner = None
        for k in range(n_chi):
            bumped = list(build_chis)
            bumped[k] += 0.3
            moved = build_residue(name, bumped)
            if np.linalg.norm(moved[atom] - pos[atom]) > 1e-9:
                owner = k
        assert owner is not None, (name, atom)
        group_of[atom] = 2 + owner

    groups = []
    # backbone group: identity default frame, atoms already local.
    groups.append({
        "name": "backbone", "torsion": -1, "parent": -1,
        "default_frame": {"rot": np.eye(3).reshape(-1).tolist(), "trans": [0.0, 0.0, 0.0]},
        "atoms": [[a, BACKBONE[a].tolist()] for a in ATOM14[name] if group_of.get(a) == 0],
    })
    # psi group: O rotates about CA->C.
    psi_rot, psi_origin = make_frame(BACKBONE["C"] - BACKBONE["CA"],
                                     BACKBONE["CA"] - BACKBONE["N"], BACKBONE["C"])
    groups.append({
        "name": "psi", "torsion": 2, "parent": 0,
        "default_frame": {"rot": psi_rot.reshape(-1).tolist(), "trans": psi_origin.tolist()},
        "atoms": [["O", O_IN_PSI_FRAME.tolist()]],
    })

    # chi groups. Global (residue-frame) rotated frame of chi k is
    # F_k = make_frame(a3-a2, a1-a2, a3) composed with rot_x(chi_k).
    rotated = {}
    for k, chi_atoms in enumerate(chi_defs):
        a1, a2, a3 = (pos[x] for x in chi_atoms[:3])
        rot0, org0 = make_frame(a3 - a2, a1 - a2, a3)
        rot_k = rot0 @ rot_x(build_chis[k])
        rotated[k] = (rot_k, org0)
        if k == 0:
            parent_idx, parent_rot, parent_org = 0, np.eye(3), np.zeros(3)
        else:
            parent_idx = 2 + (k - 1)
            parent_rot, parent_org = rotated[k - 1]
        default_rot = parent_rot.T @ rot0
        default_trans = parent_rot.T @ (org0 - parent_org)
        atoms = []
        for a in ATOM14[name]:
            if group_of.get(a) == 2 + k:
                atoms.append([a, to_local(rot_k, org0, pos[a]).tolist()])
        groups.append({
            "name": "chi%d" % (k + 1), "torsion": 3 + k, "parent": parent_idx,
            "default_frame": {"rot": default_rot.reshape(-1).tolist(),
                              "trans": default_trans.tolist()},
            "atoms": atoms,
        })

    # Re-number chi groups: index 2 + k, parents computed above already.
    for g in groups:
        g["default_frame"]["rot"] = [round(x, 9) for x in g["default_frame"]["rot"]]
        g["default_frame"]["trans"] = [round(x, 9) for x in g["default_frame"]["trans"]]
        g["atoms"] = [[a, [round(x, 9) for x in xyz]] for a, xyz in g["atoms"]]

    placed = sorted(a for g in groups for a, _ in g["atoms"])
    assert placed == sorted(ATOM14[name]), (name, placed)

    if name in SYMMETRIC_CHI:
        sym = SYMMETRIC_CHI[name]
        local = {a: np.array(xyz) for a, xyz in groups[2 + sym["chi"]]["atoms"]}
        flip = np.diag([1.0, -1.0, -1.0])
        for a, b in sym["swap"]:
            assert np.linalg.norm(flip @ local[a] - local[b]) < 1e-8, (name, a, b)
        for a, xyz in local.items():
            if all(a not in pair for pair in sym["swap"]):
                assert np.linalg.norm(flip @ xyz - xyz) < 1e-8, (name, a)

    entry = {
        "one_letter": ONE_LETTER[name],
        "atoms": ATOM14[name],
        "chi_atoms": chi_defs,
        "groups": groups,
    }
    if name in SYMMETRIC_CHI:
        entry["symmetric_chi"] = SYMMETRIC_CHI[name]
    return entry


def fnv1a64(text):
    h = 0xcbf29ce484222325
    for byte in text.encode("ascii"):
        h ^= byte
        h = (h * 0x100000001b3) & 0xFFFFFFFFFFFFFFFF
    return "%016x" % h


def canonical_text(residues):
    """Must match fourdfold::templates_canonical_text()."""
    parts = []
    for name in sorted(residues):
        r = residues[name]
        parts.append("%s:%s;" % (name, r["one_letter"]))
        for g in r["groups"]:
            parts.append("g%s,%d,%d;" % (g["name"], g["torsion"], g["parent"]))
            for x in g["default_frame"]["rot"] + g["default_frame"]["trans"]:
                parts.append("%.6f," % x)
            for a, xyz in g["atoms"]:
                parts.append("%s=%.6f,%.6f,%.6f;" % (a, xyz[0], xyz[1], xyz[2]))
        if "symmetric_chi" in r:
            parts.append("sym%d;" % r["symmetric_chi"]["chi"])
    return "".join(parts)


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "data/residue_templates.json"
    residues = {name: generate_residue(name) for name in sorted(ATOM14)}
    doc = {
        "format": "fourdfold-templates/1",
        "torsions": TORSION_NAMES,
        "residues": residues,
        "checksum": fnv1a64(canonical_text(residues)),
    }
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    print("wrote", out, doc["checksum"])


if __name__ == "__main__":
    main()

"""Generative modelling of protein trajectories: Python front end to the C++ core."""

# libtorch is resolved from the torch wheel; loading torch first makes its
# shared libraries visible to the extension.
import torch  # noqa: F401

from ._fourdfold import (
    Trajectory,
    ca_rmse,
    igso3_density,
    igso3_expected_score_norm2,
    load_trajectory,
    r_table,
    sample,
    synth,
    train,
)

__all__ = [
    "Trajectory",
    "ca_rmse",
    "igso3_density",
    "igso3_expected_score_norm2",
    "load_trajectory",
    "r_table",
    "sample",
    "synth",
    "train",
]

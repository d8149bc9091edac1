"""Candidate map ranking by Dirichlet energy and per-vertex medoid fusion."""

import os
from dataclasses import dataclass

import numpy as np

from .fmaps import PointMap, save_pointmap

DEFAULT_CANDIDATES = 128
DEFAULT_MEDOID_K = 16


@dataclass
class CandidateSet:
    maps: list  # list of PointMap
    energies: np.ndarray

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=np.float64)
        if len(self.maps) != self.energies.size:
            raise ValueError("maps and energies must have equal length")


def dirichlet_energy(pi, mesh1, mesh2, L2):
    """Smoothness of a map: trace(G^T L2 G) for pulled-back source coordinates G.

    Evaluated in the edge-difference form sum_{i<j} w_ij |g_i - g_j|^2, which
    equals the trace because L2 has zero row sums but is exactly zero for
    constant maps instead of accumulating rounding noise.
    """
    G = mesh1.vertices[pi.targets]  # (v2, 3)
    off = L2.rows != L2.cols
    d = G[L2.rows[off]] - G[L2.cols[off]]
    return float(np.sum(-L2.vals[off] * np.einsum("ec,ec->e", d, d)))


def rank_candidates(maps, mesh1, mesh2, L2):
    """Candidates sorted by increasing energy (stable for ties)."""
    energies = np.array([dirichlet_energy(p, mesh1, mesh2, L2) for p in maps])
    order = np.argsort(energies, kind="stable")
    return CandidateSet([maps[i] for i in order], energies[order])


def select_best(cands):
    """Candidate with minimal Dirichlet energy; ties go to the lowest index."""
    if not cands.maps:
        raise ValueError("candidate set is empty")
    return cands.maps[int(np.argmin(cands.energies))]


def select_medoid(cands, k=DEFAULT_MEDOID_K, mesh1=None):
    """Per-vertex medoid over the k smoothest candidates ("Dirichlet medoid").

    For each target vertex, among the k candidate matches pick the one with
    the smallest total 3D distance to the other k-1 matches; ties go to the
    candidate with lower energy rank.
    """
    if mesh1 is None:
        raise ValueError("mesh1 (source mesh) is required")
    if not (1 <= k <= len(cands.maps)):
        raise ValueError(f"k={k} outside [1, {len(cands.maps)}]")
    order = np.argsort(cands.energies, kind="stable")[:k]
    chosen = [cands.maps[i] for i in order]
    if k == 1:
        return chosen[0]
    idx = np.stack([p.targets for p in chosen])  # (k, v2)
    pos = mesh1.vertices[idx]  # (k, v2, 3)
    diff = pos[:, None, :, :] - pos[None, :, :, :]  # (k, k, v2, 3)
    dist = np.sqrt(np.einsum("klvc,klvc->klv", diff, diff))
    totals = dist.sum(axis=1)  # (k, v2)
    winner = np.argmin(totals, axis=0)  # (v2,)
    return PointMap(idx[winner, np.arange(idx.shape[1])])


def dump_candidates(cands, out_dir):
    """Audit dump: one point-map file per candidate plus an energies CSV."""
    os.makedirs(out_dir, exist_ok=True)
    for i, p in enumerate(cands.maps):
        save_pointmap(os.path.join(out_dir, f"candidate_{i:04d}.map"), p)
    with open(os.path.join(out_dir, "energies.csv"), "w") as fh:
        fh.write("candidate,energy\n")
        for i, e in enumerate(cands.energies):
            fh.write(f"{i},{float(e)!r}\n")

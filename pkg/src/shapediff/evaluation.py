"""Correspondence metrics: graph geodesics, mean error, PCK, sign accuracy.

Geodesic distances are shortest paths on the edge graph weighted by edge
length (Dijkstra).  On the mesh densities used here the graph metric
overshoots the true polyhedral geodesic by well under 10%, which is far
below every tolerance that consumes it.  Errors are reported as a fraction
of the square root of surface area, times 100; since meshes are
area-normalized at load this is just the raw distance times 100.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .mesh import cotan_laplacian, vertex_area_matrix
from .sign_correction import correct_signs, extract_features
from .spectral import eigenbasis


@dataclass
class MetricReport:
    mean_geodesic_error_x100: float
    pck: list
    per_pair: list = field(default_factory=list)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(
                {
                    "mean_geodesic_error_x100": self.mean_geodesic_error_x100,
                    "pck": [[t, f] for t, f in self.pck],
                    "per_pair": self.per_pair,
                },
                fh,
                indent=2,
                sort_keys=True,
            )

    def pck_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "fraction"])
            for t, f in self.pck:
                writer.writerow([repr(float(t)), repr(float(f))])


def _edge_graph(mesh):
    i = mesh.edges[:, 0]
    j = mesh.edges[:, 1]
    w = np.linalg.norm(mesh.vertices[i] - mesh.vertices[j], axis=1)
    g = sp.coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
        shape=(mesh.num_vertices, mesh.num_vertices),
    )
    return g.tocsr()


def geodesic_distances(mesh, sources=None):
    """Shortest-path distances from each source to every vertex.

    Returns an array of shape (len(sources), num_vertices); sources defaults
    to all vertices.
    """
    graph = _edge_graph(mesh)
    if sources is None:
        indices = None
    else:
        indices = np.asarray(sources, dtype=np.int64)
    dist = dijkstra(graph, directed=False, indices=indices)
    return np.atleast_2d(dist)


def _per_vertex_errors(pi, gt, mesh1):
    pred = np.asarray(pi.targets, dtype=np.int64)
    ref = np.asarray(gt.targets, dtype=np.int64)
    if pred.shape != ref.shape:
        raise ValueError(
            f"prediction has {pred.size} targets, ground truth has {ref.size}"
        )
    sources = np.unique(ref)
    dist = geodesic_distances(mesh1, sources)
    row = {int(s): k for k, s in enumerate(sources)}
    return np.array([dist[row[int(r)], p] for r, p in zip(ref, pred)])


def mean_geodesic_error(pi, gt, mesh1):
    """Mean geodesic distance on mesh1 between prediction and ground truth,
    times 100 (unit: percent of sqrt surface area)."""
    return float(_per_vertex_errors(pi, gt, mesh1).mean() * 100.0)


def pck_curve(pi, gt, mesh1, thresholds):
    """Fraction of vertices with geodesic error at or below each threshold.

    Thresholds are in the same sqrt-area-normalized unit (not x100).
    """
    errs = _per_vertex_errors(pi, gt, mesh1)
    return [(float(t), float(np.mean(errs <= t))) for t in thresholds]


def sign_accuracy(params, mesh, n, trials, seed=0):
    """Mean Sign Correction Accuracy.

    Per trial, the eigenbasis is computed with two different solver seeds,
    both are sign-corrected, and the fraction of columns that agree
    (mass-weighted inner product > 0.99) is recorded.  Returns the mean
    fraction over trials and eigenvectors.
    """
    L = cotan_laplacian(mesh)
    A = vertex_area_matrix(mesh)
    rng = np.random.default_rng(seed)
    fractions = []
    for _ in range(trials):
        s1, s2 = rng.integers(2**31, size=2)
        b1 = eigenbasis(L, A, n, seed=int(s1), mesh_id="sign-acc-a")
        b2 = eigenbasis(L, A, n, seed=int(s2), mesh_id="sign-acc-b")
        h1, _ = correct_signs(extract_features(params, mesh, b1), b1)
        h2, _ = correct_signs(extract_features(params, mesh, b2), b2)
        inner = np.einsum("vk,vk->k", h1.evecs, h1.area[:, None] * h2.evecs)
        fractions.append(np.mean(inner > 0.99))
    return float(np.mean(fractions))


def build_report(pairs, thresholds=None):
    """Aggregate a MetricReport over (name, pi, gt, mesh1) evaluation pairs."""
    if thresholds is None:
        thresholds = [0.01 * k for k in range(0, 21)]
    all_errs = []
    per_pair = []
    for name, pi, gt, mesh1 in pairs:
        errs = _per_vertex_errors(pi, gt, mesh1)
        all_errs.append(errs)
        per_pair.append({"pair": name, "mean_geodesic_error_x100":
                         float(errs.mean() * 100.0)})
    errs = np.concatenate(all_errs)
    pck = [(float(t), float(np.mean(errs <= t))) for t in thresholds]
    return MetricReport(float(errs.mean() * 100.0), pck, per_pair)

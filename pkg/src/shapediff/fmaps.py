"""Functional-map algebra: construction, composition, refinement, conversion.

Convention: a functional map C with src basis 1 and dst basis 2 is the
(n2 x n1) matrix acting on spectral coefficients of functions on shape 1,
coeffs2 = C @ coeffs1.  Point maps are stored as an index list: entry j is the
matched source vertex for target vertex j.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import SingularityError
from .spectral import project

KDTREE_MAX_DIM = 32
CONDITION_WARN = 1e8


@dataclass
class FunctionalMap:
    matrix: np.ndarray  # (n2, n1)
    src_basis_id: str = ""
    dst_basis_id: str = ""
    warnings: list = field(default_factory=list)

    @property
    def resolution(self):
        return (self.matrix.shape[1], self.matrix.shape[0])


@dataclass
class PointMap:
    targets: np.ndarray  # (v2,) indices into the source shape's vertices

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.int64)

    def __len__(self):
        return self.targets.size


def fmap_from_pointmap(pi, basis1, basis2):
    """Spectral representation of a point map: C = Phi2^T A2 Phi1[pi].

    ``pi`` maps vertices of shape 2 into shape 1; the result maps coefficient
    vectors on shape 1 to shape 2.
    """
    targets = pi.targets
    if targets.size != basis2.v:
        raise ValueError(
            f"point map has {targets.size} rows, basis2 has {basis2.v} vertices"
        )
    if targets.min() < 0 or targets.max() >= basis1.v:
        raise ValueError("point map index out of range for basis1")
    gathered = basis1.evecs[targets]  # (v2, n1)
    C = project(basis2, gathered)
    return FunctionalMap(C, basis1.mesh_id, basis2.mesh_id)


def fmap_from_descriptors(F1, F2, basis1, basis2, ridge=1e-6):
    """Least-squares functional map from descriptor preservation.

    Solves argmin_C ||C (Phi1^T A1 F1) - Phi2^T A2 F2||^2 + ridge ||C||^2 in
    closed form via the normal equations.
    """
    if F1.values.shape[1] != F2.values.shape[1]:
        raise ValueError("descriptor counts differ between shapes")
    G1 = project(basis1, F1.values)  # (n1, p)
    G2 = project(basis2, F2.values)  # (n2, p)
    gram = G1 @ G1.T
    if ridge > 0:
        gram = gram + ridge * np.eye(gram.shape[0])
    else:
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularityError(
                "descriptor system is rank deficient; pass ridge > 0"
            )
    C = np.linalg.solve(gram, G1 @ G2.T).T
    return FunctionalMap(C, basis1.mesh_id, basis2.mesh_id)


def compose_via_template(C_1T, C_2T):
    """Pairwise map from two template-wise maps (each maps shape coefficients
    to template coefficients): C12 = pinv(C_2T) @ C_1T, realized as a
    least-squares solve so near-singular predictions degrade gracefully.
    """
    B = C_2T.matrix
    if B.shape[0] != C_1T.matrix.shape[0]:
        raise ValueError("template dimensions differ between the two maps")
    C, *_ = np.linalg.lstsq(B, C_1T.matrix, rcond=None)
    out = FunctionalMap(C, C_1T.src_basis_id, C_2T.src_basis_id)
    cond = np.linalg.cond(B)
    if not np.isfinite(cond) or cond > CONDITION_WARN:
        out.warnings.append(f"ill-conditioned template map (cond={cond:.3e})")
    return out


def _nearest_rows(points, queries):
    """Exact nearest neighbour with lowest-index tie-break."""
    dim = points.shape[1]
    if dim <= KDTREE_MAX_DIM:
        tree = cKDTree(points)
        dist, idx = tree.query(queries)
        # resolve exact-distance ties to the lowest index
        balls = tree.query_ball_point(queries, np.maximum(dist, 0.0))
        for j, cand in enumerate(balls):
            if len(cand) > 1:
                idx[j] = min(cand)
        return np.asarray(idx, dtype=np.int64)
    # brute force in chunks; argmin picks the lowest index on ties
    out = np.empty(len(queries), dtype=np.int64)
    sq_p = np.einsum("ij,ij->i", points, points)
    chunk = max(1, 2_000_000 // max(len(points), 1))
    for start in range(0, len(queries), chunk):
        q = queries[start : start + chunk]
        d2 = sq_p[None, :] - 2.0 * (q @ points.T)
        out[start : start + chunk] = np.argmin(d2, axis=1)
    return out


def pointmap_from_fmap(C12, basis1, basis2):
    """Nearest-neighbour conversion of a functional map to a point map.

    Target vertex j matches argmin_i ||C Phi1[i, :]^T - Phi2[j, :]^T||, ties
    broken by the lowest index.
    """
    n1, n2 = C12.resolution
    embedded = basis1.evecs[:, :n1] @ C12.matrix.T  # (v1, n2)
    queries = basis2.evecs[:, :n2]
    return PointMap(_nearest_rows(embedded, queries))


def zoomout(C12, basis1, basis2, target_dim, step=1):
    """Spectral upsampling: alternate point-map conversion and re-embedding
    at increasing resolution until target_dim."""
    n1, n2 = C12.resolution
    if n1 != n2:
        raise ValueError("zoomout expects a square starting map")
    k = n1
    if target_dim < k:
        raise ValueError(f"target_dim {target_dim} below current dimension {k}")
    if basis1.n < target_dim or basis2.n < target_dim:
        raise ValueError(
            f"bases carry only {min(basis1.n, basis2.n)} eigenvectors, "
            f"target_dim {target_dim} unavailable"
        )
    C = C12
    while k < target_dim:
        pi = pointmap_from_fmap(C, basis1, basis2)
        k = min(k + step, target_dim)
        C = fmap_from_pointmap(pi, basis1.truncated(k), basis2.truncated(k))
    return C


def pairwise_lstsq(pi_T1, pi_T2, basis1, basis2, dim):
    """Template-vertex-space alternative to composition: solve
    argmin_C || Phi2[pi_T2] C - Phi1[pi_T1] || over the first ``dim`` columns."""
    A = basis2.evecs[pi_T2.targets, :dim]
    B = basis1.evecs[pi_T1.targets, :dim]
    C, *_ = np.linalg.lstsq(A, B, rcond=None)
    return FunctionalMap(C, basis1.mesh_id, basis2.mesh_id)


_MAGIC = b"FMAP"
_VERSION = 1


def save_fmap(path, fmap):
    src = fmap.src_basis_id.encode("utf-8")
    dst = fmap.dst_basis_id.encode("utf-8")
    n2, n1 = fmap.matrix.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IqqII", _VERSION, n1, n2, len(src), len(dst)))
        fh.write(src)
        fh.write(dst)
        fh.write(np.ascontiguousarray(fmap.matrix, dtype="<f8").tobytes())


def load_fmap(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a functional map file")
        version, n1, n2, ls, ld = struct.unpack("<IqqII", fh.read(28))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        src = fh.read(ls).decode("utf-8")
        dst = fh.read(ld).decode("utf-8")
        mat = np.frombuffer(fh.read(8 * n1 * n2), dtype="<f8").reshape(n2, n1).copy()
    return FunctionalMap(mat, src, dst)


def save_pointmap(path, pi):
    with open(path, "w") as fh:
        for t in pi.targets:
            fh.write(f"{t}\n")


def load_pointmap(path):
    with open(path) as fh:
        targets = [int(line) for line in fh if line.strip()]
    return PointMap(np.asarray(targets, dtype=np.int64))

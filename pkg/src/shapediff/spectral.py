"""Generalized eigenpairs of the (stiffness, mass) pencil and spectral filtering.

The first n eigenpairs of L phi = lambda A phi are computed with shift-invert
Lanczos at a small negative shift, which makes the smallest eigenvalues of the
pencil converge fast.  The start vector is drawn from a seeded generator so
sign patterns are reproducible per seed.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import SolverError

SHIFT = -1e-3
RESIDUAL_TOL = 1e-8
MULTIPLICITY_REL_TOL = 1e-4
MAX_N = 256


@dataclass
class SpectralBasis:
    """First-n eigenbasis of a mesh: eigenvalues, A-orthonormal eigenvectors, area."""

    evals: np.ndarray  # (n,)
    evecs: np.ndarray  # (v, n), columns A-orthonormal
    area: np.ndarray  # (v,) diagonal of the mass matrix
    mesh_id: str = ""
    seed: int = 0

    @property
    def n(self):
        return self.evals.size

    @property
    def v(self):
        return self.evecs.shape[0]

    def inner(self, f, g):
        """A-weighted inner product(s) of column stacks (or single vectors)."""
        g = np.asarray(g)
        weighted = self.area * g if g.ndim == 1 else self.area[:, None] * g
        return np.asarray(f).T @ weighted

    def truncated(self, k):
        if k > self.n:
            raise ValueError(f"basis has only {self.n} eigenpairs, requested {k}")
        return SpectralBasis(self.evals[:k], self.evecs[:, :k], self.area,
                             self.mesh_id, self.seed)

    def multiplicity_groups(self, rel_tol=MULTIPLICITY_REL_TOL):
        """Indices grouped by numerically repeated eigenvalues."""
        groups = [[0]]
        for i in range(1, self.n):
            scale = max(abs(self.evals[i]), abs(self.evals[i - 1]), 1e-12)
            if (self.evals[i] - self.evals[i - 1]) / scale < rel_tol:
                groups[-1].append(i)
            else:
                groups.append([i])
        return groups

    def with_signs(self, signs):
        """Copy with eigenvector columns flipped by the given +-1 vector."""
        signs = np.asarray(signs, dtype=np.float64)
        return SpectralBasis(self.evals, self.evecs * signs[None, :], self.area,
                             self.mesh_id, self.seed)


def eigenbasis(L, A, n, seed=0, mesh_id=""):
    """First n eigenpairs of L phi = lambda A phi via shift-invert Lanczos."""
    v = L.dim
    if n >= v:
        raise ValueError(f"n must be < number of vertices ({n} >= {v})")
    if n > MAX_N:
        raise ValueError(f"n must be <= {MAX_N}")
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(v)
    Lc = L.to_csr().tocsc()
    Ac = A.to_csr().tocsc()
    try:
        evals, evecs = spla.eigsh(
            Lc, k=n, M=Ac, sigma=SHIFT, which="LM", v0=v0, maxiter=50 * n
        )
    except spla.ArpackNoConvergence as exc:
        raise SolverError(f"eigensolver did not converge: {exc}") from exc
    order = np.argsort(evals, kind="stable")
    evals = evals[order]
    evecs = evecs[:, order]
    a = A.diagonal()
    # relative residual check per eigenpair
    R = Lc @ evecs - (a[:, None] * evecs) * evals[None, :]
    denom = np.linalg.norm(a[:, None] * evecs, axis=0)
    res = np.linalg.norm(R, axis=0) / np.maximum(denom, 1e-300)
    worst = float(res.max())
    if worst > RESIDUAL_TOL:
        raise SolverError(f"eigenpair residual {worst:.3e} exceeds {RESIDUAL_TOL:.1e}")
    return SpectralBasis(evals, np.ascontiguousarray(evecs), a, mesh_id, seed)


def project(basis, f):
    """Spectral coefficients Phi^T A f of the column stack f."""
    f = np.asarray(f, dtype=np.float64)
    stack = f[:, None] if f.ndim == 1 else f
    if stack.shape[0] != basis.v:
        raise ValueError(f"expected {basis.v} rows, got {stack.shape[0]}")
    out = basis.evecs.T @ (basis.area[:, None] * stack)
    return out[:, 0] if f.ndim == 1 else out


def synthesize(basis, coeffs):
    """Inverse of project on the bandlimited subspace: Phi @ coeffs."""
    return basis.evecs @ np.asarray(coeffs, dtype=np.float64)


def spectral_smooth(basis, f, time):
    """Heat-kernel low-pass: Phi diag(exp(-lambda t)) Phi^T A f."""
    if time < 0:
        raise ValueError("diffusion time must be >= 0")
    coeffs = project(basis, f)
    decay = np.exp(-basis.evals * time)
    if np.asarray(coeffs).ndim == 1:
        return basis.evecs @ (decay * coeffs)
    return basis.evecs @ (decay[:, None] * coeffs)


_MAGIC = b"SBAS"
_VERSION = 1


def save_basis(path, basis):
    """Binary basis cache: header (v, n, seed, mesh_id), eigenvalues, Phi column-major."""
    mesh_id = basis.mesh_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IqqqI", _VERSION, basis.v, basis.n, basis.seed, len(mesh_id)))
        fh.write(mesh_id)
        fh.write(basis.evals.astype("<f8").tobytes())
        fh.write(np.asfortranarray(basis.evecs, dtype="<f8").tobytes(order="F"))
        fh.write(basis.area.astype("<f8").tobytes())


def load_basis(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a basis cache file")
        version, v, n, seed, idlen = struct.unpack("<IqqqI", fh.read(32))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        mesh_id = fh.read(idlen).decode("utf-8")
        evals = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
        evecs = np.frombuffer(fh.read(8 * v * n), dtype="<f8").reshape((v, n), order="F").copy()
        area = np.frombuffer(fh.read(8 * v), dtype="<f8").copy()
    return SpectralBasis(evals, np.ascontiguousarray(evecs), area, mesh_id, seed)

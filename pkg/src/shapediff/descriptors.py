"""Wave kernel signature descriptors.

Sign-invariant by construction (only squared eigenvector entries enter), so
they are a safe input to the sign-correction feature extractor.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError

DEFAULT_P = 128
DEFAULT_VARIANCE_SCALE = 7.0


@dataclass
class DescriptorField:
    values: np.ndarray  # (v, p)
    energies: np.ndarray  # (p,) log-energy sample points
    basis_id: str = ""


def wks(basis, p=DEFAULT_P, variance_scale=DEFAULT_VARIANCE_SCALE):
    """WKS values per vertex at p log-energy samples.

    For log-energy e: sum_i phi_i(x)^2 exp(-(e - log lam_i)^2 / (2 s^2)),
    normalized by the kernel sum; energies sampled uniformly in
    [log lam_2, log lam_n]; s = variance_scale * energy step.  The zero
    eigenvalue is excluded.
    """
    if basis.n < 8:
        raise ValueError(f"need at least 8 eigenpairs, basis has {basis.n}")
    if p < 1:
        raise ValueError("p must be >= 1")
    lam = basis.evals[1:]
    phi = basis.evecs[:, 1:]
    if np.all(lam <= 0):
        raise DegeneracyError("all eigenvalues beyond the first are <= 0")
    keep = lam > 0
    lam = lam[keep]
    phi = phi[:, keep]
    log_lam = np.log(lam)
    e_min, e_max = log_lam[0], log_lam[-1]
    energies = np.linspace(e_min, e_max, p)
    step = (e_max - e_min) / max(p - 1, 1)
    if step <= 0:
        step = 1.0
    sigma = variance_scale * step
    # (p, k) Gaussian kernel over eigenvalue positions
    kernel = np.exp(-((energies[:, None] - log_lam[None, :]) ** 2) / (2 * sigma**2))
    values = (phi**2) @ kernel.T  # (v, p)
    values /= kernel.sum(axis=1)[None, :]
    return DescriptorField(values, energies, basis.mesh_id)


def dump_csv(field, path):
    """Debug dump: vertex rows, energy columns."""
    header = ",".join(f"{e!r}" for e in field.energies.tolist())
    np.savetxt(path, field.values, delimiter=",", header=header, comments="")

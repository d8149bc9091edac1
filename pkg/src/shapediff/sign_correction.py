"""Learned canonicalization of eigenvector signs.

A small per-vertex network maps WKS descriptors to feature vectors; each
eigenvector's sign is chosen so its A-weighted projection onto the matching
feature is positive.  Training is unsupervised: the network learns to undo
random sign flips of a fixed eigenbasis.  Eigenvectors are grouped in blocks
of 32, with the number of eigenvectors per feature doubling each block, to
soften the effect of numerically repeated eigenvalues.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .descriptors import DEFAULT_P, wks
from .errors import ConfigurationError, TrainingError
from .nnops import SgdMomentum, linear_bwd, linear_fwd, tanh_bwd, tanh_fwd

GROUP_BLOCK = 32
DEFAULT_SMOOTHING_TIMES = (1e-3, 1e-2)
DEFAULT_HIDDEN = (256, 256)


def group_assignment(n):
    """Feature-to-eigenvector ranges: list of (lo, hi) half-open index ranges.

    Block b of 32 eigenvectors uses 2**b eigenvectors per feature, so
    n = 32, 64, 96 give 32, 48, 56 features.  A final partial block is
    truncated to the available eigenvectors.
    """
    if n <= 0:
        raise ValueError("basis size must be positive")
    ranges = []
    lo = 0
    block = 0
    while lo < n:
        size = 2**block
        block_end = min(lo + GROUP_BLOCK, n)
        while lo < block_end:
            hi = min(lo + size, block_end)
            ranges.append((lo, hi))
            lo = hi
        block += 1
    return ranges


def feature_count(n):
    return len(group_assignment(n))


def expand_to_eigenvectors(per_feature, grouping, n):
    """Replicate per-feature values/columns onto each covered eigenvector."""
    idx = np.empty(n, dtype=np.int64)
    for i, (lo, hi) in enumerate(grouping):
        idx[lo:hi] = i
    return per_feature[..., idx] if per_feature.ndim == 1 else per_feature[:, idx]


@dataclass
class FeatureExtractorParams:
    """Weights of the per-vertex WKS -> features network plus smoothing times."""

    weights: dict  # W1, b1, W2, b2, W3, b3
    smoothing_times: tuple
    n: int  # basis size the grouping was built for
    m: int  # number of feature channels

    def copy(self):
        return FeatureExtractorParams(
            {k: v.copy() for k, v in self.weights.items()},
            self.smoothing_times, self.n, self.m,
        )


@dataclass
class FeatureField:
    values: np.ndarray  # (v, m), columns unit A-norm
    basis_id: str = ""


@dataclass
class SignVector:
    signs: np.ndarray  # (n,) in {-1, +1}
    confidences: np.ndarray  # (n,) |projection| values


def init_feature_extractor(n, seed=0, p=DEFAULT_P, hidden=DEFAULT_HIDDEN,
                           smoothing_times=DEFAULT_SMOOTHING_TIMES):
    m = feature_count(n)
    rng = np.random.default_rng(seed)
    h1, h2 = hidden
    weights = {
        "W1": rng.standard_normal((p, h1)) / np.sqrt(p),
        "b1": np.zeros(h1),
        "W2": rng.standard_normal((h1, h2)) / np.sqrt(h1),
        "b2": np.zeros(h2),
        "W3": rng.standard_normal((h2, m)) / np.sqrt(h2),
        "b3": np.zeros(m),
    }
    return FeatureExtractorParams(weights, tuple(smoothing_times), n, m)


def _smooth_fwd(basis, f, time):
    decay = np.exp(-basis.evals * time)
    return basis.evecs @ (decay[:, None] * (basis.evecs.T @ (basis.area[:, None] * f)))


def _smooth_bwd(basis, g, time):
    decay = np.exp(-basis.evals * time)
    return basis.area[:, None] * (basis.evecs @ (decay[:, None] * (basis.evecs.T @ g)))


def _forward(params, basis, X, want_cache=False):
    w = params.weights
    t1, t2 = params.smoothing_times
    z1 = linear_fwd(X, w["W1"], w["b1"])
    h1 = tanh_fwd(z1)
    s1 = _smooth_fwd(basis, h1, t1)
    z2 = linear_fwd(s1, w["W2"], w["b2"])
    h2 = tanh_fwd(z2)
    s2 = _smooth_fwd(basis, h2, t2)
    u = linear_fwd(s2, w["W3"], w["b3"])
    norms = np.sqrt(np.einsum("vm,vm->m", u, basis.area[:, None] * u))
    sigma = np.empty_like(u)
    dead = norms < 1e-30
    safe = np.where(dead, 1.0, norms)
    sigma[:] = u / safe[None, :]
    if np.any(dead):
        # degenerate column: fall back to the constant unit-A-norm function
        const = 1.0 / np.sqrt(basis.area.sum())
        sigma[:, dead] = const
    if not want_cache:
        return sigma, None
    cache = {"X": X, "h1": h1, "s1": s1, "h2": h2, "s2": s2,
             "sigma": sigma, "norms": safe, "dead": dead}
    return sigma, cache


def _backward(params, basis, cache, g_sigma):
    """Parameter gradients given the loss gradient w.r.t. the feature matrix."""
    w = params.weights
    t1, t2 = params.smoothing_times
    sigma, norms, dead = cache["sigma"], cache["norms"], cache["dead"]
    # through per-column A-normalization
    proj = np.einsum("vm,vm->m", sigma, g_sigma)
    du = (g_sigma - basis.area[:, None] * sigma * proj[None, :]) / norms[None, :]
    du[:, dead] = 0.0
    ds2, dW3, db3 = linear_bwd(cache["s2"], w["W3"], du)
    dh2 = _smooth_bwd(basis, ds2, t2)
    dz2 = tanh_bwd(cache["h2"], dh2)
    ds1, dW2, db2 = linear_bwd(cache["s1"], w["W2"], dz2)
    dh1 = _smooth_bwd(basis, ds1, t1)
    dz1 = tanh_bwd(cache["h1"], dh1)
    _, dW1, db1 = linear_bwd(cache["X"], w["W1"], dz1)
    return {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2, "W3": dW3, "b3": db3}


def extract_features(params, mesh, basis, descriptor_field=None):
    """Per-vertex feature matrix with unit-A-norm columns.  Deterministic.

    ``descriptor_field`` may carry precomputed WKS values; otherwise they are
    computed from the basis (``mesh`` is accepted for interface symmetry).
    """
    expected_m = feature_count(basis.n)
    if params.weights["W3"].shape[1] != expected_m:
        raise ConfigurationError(
            f"extractor outputs {params.weights['W3'].shape[1]} features, "
            f"grouping for n={basis.n} needs {expected_m}"
        )
    X = descriptor_field.values if descriptor_field is not None else wks(basis).values
    sigma, _ = _forward(params, basis, X)
    return FeatureField(sigma, basis.mesh_id)


def _projections(sigma_values, basis, grouping):
    """Per-eigenvector projections q_j = feature(g(j))^T A phi_j."""
    P = sigma_values.T @ (basis.area[:, None] * basis.evecs)  # (m, n)
    n = basis.n
    q = np.empty(n)
    for i, (lo, hi) in enumerate(grouping):
        q[lo:hi] = P[i, lo:hi]
    return q


def correct_signs(sigma_field, basis, grouping=None):
    """Canonicalize eigenvector signs by positive projection onto features.

    Returns the corrected basis and the sign vector with confidences.  A zero
    projection resolves to +1.
    """
    if grouping is None:
        grouping = group_assignment(basis.n)
    if sigma_field.values.shape[1] != len(grouping):
        raise ConfigurationError(
            f"feature count {sigma_field.values.shape[1]} does not match "
            f"grouping size {len(grouping)} for n={basis.n}"
        )
    q = _projections(sigma_field.values, basis, grouping)
    signs = np.where(q >= 0.0, 1.0, -1.0)
    corrected = basis.with_signs(signs)
    return corrected, SignVector(signs, np.abs(q))


def train_sign_corrector(params, shapes, iterations, seed=0, lr=1e-3, momentum=0.9):
    """Unsupervised training by undoing random sign flips.

    ``shapes`` is a sequence of (mesh, basis) pairs with cached bases.  Each
    iteration flips one shape's basis with two random sign vectors, computes
    the relaxed (un-thresholded) projections for both, and regresses their
    product onto the product of the true flips.  Returns the trained
    parameters and the loss trace.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    params = params.copy()
    grouping = group_assignment(params.n)
    rng = np.random.default_rng(seed)
    prepared = []
    for mesh, basis in shapes:
        if basis.n != params.n:
            raise ConfigurationError(
                f"basis has n={basis.n}, extractor trained for n={params.n}"
            )
        X = wks(basis).values
        a_phi = basis.area[:, None] * basis.evecs
        prepared.append((basis, X, a_phi))
    opt = SgdMomentum(lr, momentum)
    trace = np.empty(iterations)
    n = params.n
    for it in range(iterations):
        basis, X, a_phi = prepared[rng.integers(len(prepared))]
        s1 = rng.choice([-1.0, 1.0], size=n)
        s2 = rng.choice([-1.0, 1.0], size=n)
        sigma, cache = _forward(params, basis, X, want_cache=True)
        q = _projections(sigma, basis, grouping)
        p1 = s1 * q
        p2 = s2 * q
        resid = p1 * p2 - s1 * s2
        loss = float(np.mean(resid**2))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at iteration {it}")
        trace[it] = loss
        # dL/dq_j, then scatter onto the owning feature column
        dq = (2.0 / n) * resid * s1 * s2 * 2.0 * q
        g_sigma = np.zeros_like(sigma)
        for i, (lo, hi) in enumerate(grouping):
            g_sigma[:, i] = a_phi[:, lo:hi] @ dq[lo:hi]
        grads = _backward(params, basis, cache, g_sigma)
        opt.step(params.weights, grads)
    return params, trace


_MAGIC = b"SGNC"
_VERSION = 1
_KEYS = ("W1", "b1", "W2", "b2", "W3", "b3")


def save_checkpoint(path, params):
    """Versioned header + layer shapes + row-major 64-bit weights."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Iqqdd", _VERSION, params.n, params.m,
                             *params.smoothing_times))
        for key in _KEYS:
            arr = params.weights[key]
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a sign-corrector checkpoint")
        version, n, m, t1, t2 = struct.unpack("<Iqqdd", fh.read(36))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        weights = {}
        for key in _KEYS:
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
            count = int(np.prod(shape)) if shape else 1
            weights[key] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).copy()
    return FeatureExtractorParams(weights, (t1, t2), n, m)


def save_loss_csv(path, trace):
    with open(path, "w") as fh:
        fh.write("iteration,loss\n")
        for i, val in enumerate(trace):
            fh.write(f"{i},{float(val)!r}\n")

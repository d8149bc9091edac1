"""DDPM over n x n functional maps.

Forward process with a linear variance schedule, a compact three-level
convolutional encoder-decoder predicting the added noise, conditioning by
channel concatenation of the (same-sized) conditioning matrix, and ancestral
sampling for the reverse process.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import SamplingError, TrainingError
from .nnops import (Adam, conv2d_bwd, conv2d_fwd, relu_bwd, relu_fwd,
                    sinusoidal_embedding, upsample2_bwd, upsample2_fwd)
from .sign_correction import expand_to_eigenvectors, group_assignment

DEFAULT_WIDTHS = (32, 64, 128)
DEFAULT_TEMB_DIM = 64

# chains started by sample(); lets callers assert template-stage amortization
SAMPLER_STATS = {"chains": 0}


@dataclass
class DiffusionSchedule:
    """Variance schedule tables: beta, alpha = 1 - beta, alpha_bar = cumprod."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        assert self.beta.shape == (self.T,)


def make_schedule(T, beta_start=1e-4, beta_end=0.02):
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    return DiffusionSchedule(T, beta, alpha, np.cumprod(alpha))


def forward_noise(x0, t, eps, schedule):
    """Closed-form forward process: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    if not (1 <= t <= schedule.T):
        raise ValueError(f"t must be in [1, {schedule.T}], got {t}")
    ab = schedule.alpha_bar[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def build_conditioning(sigma_field, area, corrected_basis, grouping=None):
    """Conditioning matrix: grouped features projected onto the corrected basis.

    Feature rows are replicated per covered eigenvector so the result is
    n x n regardless of vertex count.
    """
    basis = corrected_basis
    if grouping is None:
        grouping = group_assignment(basis.n)
    values = sigma_field.values
    if values.shape[1] != len(grouping):
        raise ValueError(
            f"feature count {values.shape[1]} does not match grouping size "
            f"{len(grouping)}"
        )
    if values.shape[0] != basis.v:
        raise ValueError("feature field and basis live on different meshes")
    expanded = expand_to_eigenvectors(values, grouping, basis.n)  # (v, n)
    area = np.asarray(area)
    return expanded.T @ (area[:, None] * basis.evecs)


@dataclass
class DenoiserParams:
    """Weights of the conditional noise predictor."""

    weights: dict
    n: int
    widths: tuple = DEFAULT_WIDTHS
    temb_dim: int = DEFAULT_TEMB_DIM
    # data normalization applied at train time and inverted at sample time;
    # functional-map entries are O(1/sqrt(n)) and must be brought to unit
    # variance or the forward noise swamps the signal
    x_scale: float = 1.0
    y_scale: float = 1.0

    def copy(self):
        return DenoiserParams({k: v.copy() for k, v in self.weights.items()},
                              self.n, self.widths, self.temb_dim,
                              self.x_scale, self.y_scale)


def init_denoiser(n, widths=DEFAULT_WIDTHS, temb_dim=DEFAULT_TEMB_DIM, seed=0):
    if n % 4 != 0:
        raise ValueError("map resolution must be divisible by 4")
    w1, w2, w3 = widths
    rng = np.random.default_rng(seed)

    def conv(co, ci):
        return rng.standard_normal((co, ci, 3, 3)) * np.sqrt(2.0 / (ci * 9))

    def lin(din, dout):
        return rng.standard_normal((din, dout)) / np.sqrt(din)

    def bias(c):
        # small random offsets keep pre-activations away from the exact
        # ReLU boundary, where the loss is not differentiable
        return 0.01 * rng.standard_normal(c)

    weights = {
        "conv_in.W": conv(w1, 2), "conv_in.b": bias(w1),
        "enc1.W": conv(w1, w1), "enc1.b": bias(w1),
        "down1.W": conv(w2, w1), "down1.b": bias(w2),
        "enc2.W": conv(w2, w2), "enc2.b": bias(w2),
        "down2.W": conv(w3, w2), "down2.b": bias(w3),
        "enc3.W": conv(w3, w3), "enc3.b": bias(w3),
        "up2.W": conv(w2, w3), "up2.b": bias(w2),
        "dec2.W": conv(w2, w2), "dec2.b": bias(w2),
        "up1.W": conv(w1, w2), "up1.b": bias(w1),
        "dec1.W": conv(w1, w1), "dec1.b": bias(w1),
        # near-zero initial output: the untrained model then predicts
        # (almost) no noise and the starting loss sits at E|eps|^2 = 1
        "conv_out.W": conv(1, w1) * 0.01, "conv_out.b": bias(1),
        "temb1.W": lin(temb_dim, w1), "temb1.b": bias(w1),
        "temb2.W": lin(temb_dim, w2), "temb2.b": bias(w2),
        "temb3.W": lin(temb_dim, w3), "temb3.b": bias(w3),
        "temb4.W": lin(temb_dim, w2), "temb4.b": bias(w2),
        "temb5.W": lin(temb_dim, w1), "temb5.b": bias(w1),
    }
    return DenoiserParams(weights, n, tuple(widths), temb_dim)


def denoiser_forward(params, x, y, t, want_cache=False):
    """Predicted noise for noisy maps x (N, n, n), conditioning y, timesteps t."""
    w = params.weights
    N = x.shape[0]
    if y.ndim == 2:
        y = np.broadcast_to(y, x.shape)
    h0 = np.stack([x, y], axis=1)  # (N, 2, n, n)
    emb = sinusoidal_embedding(t, params.temb_dim)  # (N, temb)

    def tproj(name):
        return (emb @ w[f"{name}.W"] + w[f"{name}.b"])[:, :, None, None]

    c1 = conv2d_fwd(h0, w["conv_in.W"], w["conv_in.b"]) + tproj("temb1")
    a1 = relu_fwd(c1)
    c2 = conv2d_fwd(a1, w["enc1.W"], w["enc1.b"])
    a2 = relu_fwd(c2)
    c3 = conv2d_fwd(a2, w["down1.W"], w["down1.b"], stride=2) + tproj("temb2")
    a3 = relu_fwd(c3)
    c4 = conv2d_fwd(a3, w["enc2.W"], w["enc2.b"])
    a4 = relu_fwd(c4)
    c5 = conv2d_fwd(a4, w["down2.W"], w["down2.b"], stride=2) + tproj("temb3")
    a5 = relu_fwd(c5)
    c6 = conv2d_fwd(a5, w["enc3.W"], w["enc3.b"])
    a6 = relu_fwd(c6)
    u2 = upsample2_fwd(a6)
    c7 = conv2d_fwd(u2, w["up2.W"], w["up2.b"]) + tproj("temb4")
    a7 = relu_fwd(c7) + a4  # skip
    c8 = conv2d_fwd(a7, w["dec2.W"], w["dec2.b"])
    a8 = relu_fwd(c8)
    u1 = upsample2_fwd(a8)
    c9 = conv2d_fwd(u1, w["up1.W"], w["up1.b"]) + tproj("temb5")
    a9 = relu_fwd(c9) + a2  # skip
    c10 = conv2d_fwd(a9, w["dec1.W"], w["dec1.b"])
    a10 = relu_fwd(c10)
    out = conv2d_fwd(a10, w["conv_out.W"], w["conv_out.b"])[:, 0]
    if not want_cache:
        return out, None
    cache = dict(h0=h0, emb=emb, c1=c1, a1=a1, c2=c2, a2=a2, c3=c3, a3=a3,
                 c4=c4, a4=a4, c5=c5, a5=a5, c6=c6, a6=a6, u2=u2, c7=c7,
                 a7=a7, c8=c8, a8=a8, u1=u1, c9=c9, a9=a9, c10=c10, a10=a10)
    return out, cache


def denoiser_backward(params, cache, g_out):
    """Parameter gradients given d(loss)/d(predicted noise)."""
    w = params.weights
    grads = {}
    emb = cache["emb"]

    def conv_back(name, xin, g, stride=1):
        dx, dW, db = conv2d_bwd(xin, w[f"{name}.W"], g, stride)
        grads[f"{name}.W"] = dW
        grads[f"{name}.b"] = db
        return dx

    def temb_back(name, g):
        # g: (N, C, H, W); time bias is per (sample, channel)
        gb = g.sum(axis=(2, 3))  # (N, C)
        grads[f"{name}.W"] = emb.T @ gb
        grads[f"{name}.b"] = gb.sum(axis=0)

    g = g_out[:, None, :, :]
    g = conv_back("conv_out", cache["a10"], g)
    g = relu_bwd(cache["c10"], g)
    g = conv_back("dec1", cache["a9"], g)
    ga2_skip = g.copy()
    g = relu_bwd(cache["c9"], g)
    temb_back("temb5", g)
    g = conv_back("up1", cache["u1"], g)
    g = upsample2_bwd(g)
    g = relu_bwd(cache["c8"], g)
    g = conv_back("dec2", cache["a7"], g)
    ga4_skip = g.copy()
    g = relu_bwd(cache["c7"], g)
    temb_back("temb4", g)
    g = conv_back("up2", cache["u2"], g)
    g = upsample2_bwd(g)
    g = relu_bwd(cache["c6"], g)
    g = conv_back("enc3", cache["a5"], g)
    g = relu_bwd(cache["c5"], g)
    temb_back("temb3", g)
    g = conv_back("down2", cache["a4"], g, stride=2)
    g = g + ga4_skip
    g = relu_bwd(cache["c4"], g)
    g = conv_back("enc2", cache["a3"], g)
    g = relu_bwd(cache["c3"], g)
    temb_back("temb2", g)
    g = conv_back("down1", cache["a2"], g, stride=2)
    g = g + ga2_skip
    g = relu_bwd(cache["c2"], g)
    g = conv_back("enc1", cache["a1"], g)
    g = relu_bwd(cache["c1"], g)
    temb_back("temb1", g)
    conv_back("conv_in", cache["h0"], g)
    return grads


def ddpm_loss_and_grads(params, x0_batch, y_batch, schedule, rng):
    """One noise-prediction step: sampled t, fresh noise, MSE and gradients."""
    N = x0_batch.shape[0]
    t = rng.integers(1, schedule.T + 1, size=N)
    eps = rng.standard_normal(x0_batch.shape)
    ab = schedule.alpha_bar[t - 1][:, None, None]
    xt = np.sqrt(ab) * x0_batch + np.sqrt(1.0 - ab) * eps
    pred, cache = denoiser_forward(params, xt, y_batch, t, want_cache=True)
    resid = pred - eps
    loss = float(np.mean(resid**2))
    g_out = (2.0 / resid.size) * resid
    grads = denoiser_backward(params, cache, g_out)
    return loss, grads


def train_ddpm(params, dataset, schedule, epochs, batch, seed=0, lr=1e-3,
               final_lr=None, normalize=False, callback=None):
    """Minimize the noise-prediction MSE with uniformly sampled timesteps.

    ``dataset`` is a list of (C, y) array pairs sharing one resolution.
    Optimized with Adam; momentum-SGD plateaus far above the loss this
    network can reach.  When ``final_lr`` is given the step size decays
    linearly from ``lr`` to ``final_lr`` over the run, which lowers the
    late-training noise floor.  With ``normalize`` both channels are scaled
    to unit entry variance (the factors are stored on the returned params
    and inverted by :func:`sample`); raw functional-map entries are
    O(1/sqrt(n)) and would otherwise be swamped by the forward noise.
    Returns the trained parameters and the per-step loss trace.
    """
    params = params.copy()
    n = params.n
    for C, y in dataset:
        if C.shape != (n, n) or y.shape != (n, n):
            raise ValueError(f"dataset records must be {n}x{n} pairs")
    Cs = np.asarray([c for c, _ in dataset])
    Ys = np.asarray([y for _, y in dataset])
    if normalize:
        sx = float(Cs.std())
        sy = float(Ys.std())
        params.x_scale = 1.0 / sx if sx > 0 else 1.0
        params.y_scale = 1.0 / sy if sy > 0 else 1.0
        Cs = Cs * params.x_scale
        Ys = Ys * params.y_scale
    rng = np.random.default_rng(seed)
    opt = Adam(lr)
    steps_per_epoch = -(-len(dataset) // batch)
    total_steps = max(epochs * steps_per_epoch, 1)
    trace = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(dataset), batch):
            idx = order[start : start + batch]
            loss, grads = ddpm_loss_and_grads(params, Cs[idx], Ys[idx], schedule, rng)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step}")
            trace.append(loss)
            if final_lr is not None:
                opt.lr = lr + (final_lr - lr) * step / total_steps
            opt.step(params.weights, grads)
            step += 1
            if callback is not None:
                callback(step, loss)
    return params, np.asarray(trace)


def sample(params, y, schedule, seed=0, count=1):
    """Ancestral sampling of n x n maps conditioned on y.  Deterministic per seed.

    Returns (n, n) for count == 1, else (count, n, n).
    """
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("conditioning matrix must be finite")
    y = y * params.y_scale
    n = params.n
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((count, n, n))
    SAMPLER_STATS["chains"] += count
    for t in range(schedule.T, 0, -1):
        eps_hat, _ = denoiser_forward(params, x, y, np.full(count, t))
        a = schedule.alpha[t - 1]
        ab = schedule.alpha_bar[t - 1]
        mu = (x - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
        if t > 1:
            ab_prev = schedule.alpha_bar[t - 2]
            beta_tilde = schedule.beta[t - 1] * (1.0 - ab_prev) / (1.0 - ab)
            x = mu + np.sqrt(beta_tilde) * rng.standard_normal(x.shape)
        else:
            x = mu
        if not np.all(np.isfinite(x)):
            raise SamplingError(f"non-finite sample at timestep {t}")
    x = x / params.x_scale
    return x[0] if count == 1 else x


_MAGIC = b"DDPM"
_VERSION = 1


def save_checkpoint(path, params, schedule):
    """Versioned header + layer shapes + 64-bit weights + schedule parameters."""
    keys = sorted(params.weights)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Iq3qq", _VERSION, params.n, *params.widths,
                             params.temb_dim))
        fh.write(struct.pack("<qdddd", schedule.T, schedule.beta[0],
                             schedule.beta[-1], params.x_scale, params.y_scale))
        fh.write(struct.pack("<I", len(keys)))
        for key in keys:
            kb = key.encode("utf-8")
            arr = params.weights[key]
            fh.write(struct.pack("<I", len(kb)))
            fh.write(kb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a denoiser checkpoint")
        version, n, w1, w2, w3, temb = struct.unpack("<Iq3qq", fh.read(44))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        T, beta_start, beta_end, x_scale, y_scale = struct.unpack(
            "<qdddd", fh.read(40))
        (nkeys,) = struct.unpack("<I", fh.read(4))
        weights = {}
        for _ in range(nkeys):
            (klen,) = struct.unpack("<I", fh.read(4))
            key = fh.read(klen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
            count = int(np.prod(shape)) if shape else 1
            weights[key] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).copy()
    params = DenoiserParams(weights, n, (w1, w2, w3), temb, x_scale, y_scale)
    return params, make_schedule(T, beta_start, beta_end)


_SHARD_MAGIC = b"FMSH"


def write_shard(path, records):
    """Shard of (C, y) records: per record the resolution then both matrices."""
    with open(path, "wb") as fh:
        fh.write(_SHARD_MAGIC)
        fh.write(struct.pack("<Iq", _VERSION, len(records)))
        for C, y in records:
            n = C.shape[0]
            if C.shape != (n, n) or y.shape != (n, n):
                raise ValueError("records must be square same-size pairs")
            fh.write(struct.pack("<q", n))
            fh.write(np.ascontiguousarray(C, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(y, dtype="<f8").tobytes())


def read_shard(path):
    records = []
    with open(path, "rb") as fh:
        if fh.read(4) != _SHARD_MAGIC:
            raise ValueError(f"{path}: not a dataset shard")
        version, count = struct.unpack("<Iq", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        for _ in range(count):
            (n,) = struct.unpack("<q", fh.read(8))
            C = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n).copy()
            y = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n).copy()
            records.append((C, y))
    return records

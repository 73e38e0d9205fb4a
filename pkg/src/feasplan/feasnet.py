"""Feasibility-Net: an MLP feasibility head plus a VAE over height patches.

Both branches read the flattened patch divided by ``height_scale`` (so the
network and its reconstruction error work in units of ``height_scale``
meters). Gradients are written out by hand; ``grad_check`` compares them
against central differences.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

PATCH_DIM = 256
TASK_DIM = 3
HIDDEN = 64
LATENT = 16
HEIGHT_SCALE = 0.125  # meters per network input unit

FORMAT_VERSION = 1
MAGIC = b"FNET"


class TrainingDiverged(RuntimeError):
    pass


class WeightFormatError(ValueError):
    pass


def layer_shapes(patch_dim=PATCH_DIM, hidden=HIDDEN, latent=LATENT):
    return OrderedDict(
        [
            ("mlp.w1", (patch_dim + TASK_DIM, hidden)),
            ("mlp.b1", (hidden,)),
            ("mlp.w2", (hidden, hidden)),
            ("mlp.b2", (hidden,)),
            ("mlp.w3", (hidden, 1)),
            ("mlp.b3", (1,)),
            ("enc.w1", (patch_dim, hidden)),
            ("enc.b1", (hidden,)),
            ("enc.wmu", (hidden, latent)),
            ("enc.bmu", (latent,)),
            ("enc.wlv", (hidden, latent)),
            ("enc.blv", (latent,)),
            ("dec.w1", (latent, hidden)),
            ("dec.b1", (hidden,)),
            ("dec.w2", (hidden, patch_dim)),
            ("dec.b2", (patch_dim,)),
        ]
    )


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 5e-4
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


class FeasNetParams:
    """Named weight arrays plus the input height scale."""

    def __init__(self, arrays, height_scale=HEIGHT_SCALE):
        self.arrays = OrderedDict((k, np.asarray(v, dtype=np.float64)) for k, v in arrays.items())
        self.height_scale = float(height_scale)
        ref = layer_shapes(self.patch_dim, self.hidden, self.latent)
        if list(ref) != list(self.arrays):
            raise ValueError(f"unexpected parameter names {list(self.arrays)}")
        for k, shape in ref.items():
            if self.arrays[k].shape != shape:
                raise ValueError(f"{k}: expected shape {shape}, got {self.arrays[k].shape}")

    @property
    def patch_dim(self):
        return self.arrays["enc.w1"].shape[0]

    @property
    def hidden(self):
        return self.arrays["enc.w1"].shape[1]

    @property
    def latent(self):
        return self.arrays["enc.wmu"].shape[1]

    def __getitem__(self, key):
        return self.arrays[key]

    def copy(self):
        return FeasNetParams({k: v.copy() for k, v in self.arrays.items()}, self.height_scale)

    def flat(self):
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    def size(self):
        return sum(v.size for v in self.arrays.values())

    def all_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def __eq__(self, other):
        return (
            isinstance(other, FeasNetParams)
            and self.height_scale == other.height_scale
            and all(np.array_equal(a, b) for a, b in zip(self.arrays.values(), other.arrays.values()))
            and list(self.arrays) == list(other.arrays)
        )


def init_params(seed=0, patch_dim=PATCH_DIM, hidden=HIDDEN, latent=LATENT, height_scale=HEIGHT_SCALE):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    arrays = OrderedDict()
    for name, shape in layer_shapes(patch_dim, hidden, latent).items():
        if len(shape) == 2:
            lim = np.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-lim, lim, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return FeasNetParams(arrays, height_scale)


def zero_params(patch_dim=PATCH_DIM, hidden=HIDDEN, latent=LATENT, height_scale=HEIGHT_SCALE):
    shapes = layer_shapes(patch_dim, hidden, latent)
    return FeasNetParams({k: np.zeros(s) for k, s in shapes.items()}, height_scale)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _inputs(params, patches, tasks=None):
    patches = np.asarray(getattr(patches, "values", patches), dtype=np.float64)
    if patches.ndim == 2 and patches.shape[0] * patches.shape[1] == params.patch_dim:
        patches = patches[None]
    x = patches.reshape(patches.shape[0], -1)
    if x.shape[1] != params.patch_dim:
        raise ValueError(f"expected {params.patch_dim} patch values, got {x.shape[1]}")
    x = x / params.height_scale
    if tasks is None:
        return x
    t = np.asarray(getattr(tasks, "as_array", lambda: tasks)(), dtype=np.float64).reshape(-1, TASK_DIM)
    if t.shape[0] == 1 and x.shape[0] > 1:
        t = np.repeat(t, x.shape[0], axis=0)
    if t.shape[0] != x.shape[0]:
        raise ValueError("patch and task batch sizes differ")
    return x, t


def _mlp(params, x, t):
    inp = np.concatenate([x, t], axis=1)
    h1 = np.tanh(inp @ params["mlp.w1"] + params["mlp.b1"])
    h2 = np.tanh(h1 @ params["mlp.w2"] + params["mlp.b2"])
    f = _sigmoid(h2 @ params["mlp.w3"] + params["mlp.b3"])[:, 0]
    return f, (inp, h1, h2)


def _encode(params, x):
    e = np.tanh(x @ params["enc.w1"] + params["enc.b1"])
    mu = e @ params["enc.wmu"] + params["enc.bmu"]
    logvar = e @ params["enc.wlv"] + params["enc.blv"]
    return mu, logvar, e


def _decode(params, z):
    d = np.tanh(z @ params["dec.w1"] + params["dec.b1"])
    return d @ params["dec.w2"] + params["dec.b2"], d


def predict_batch(params: FeasNetParams, patches, tasks) -> np.ndarray:
    x, t = _inputs(params, patches, tasks)
    return _mlp(params, x, t)[0]


def predict_feasibility(params: FeasNetParams, patch, task) -> float:
    """Feasibility in (0, 1) for one patch and task vector."""
    return float(predict_batch(params, patch, task)[0])


def vae_forward(params: FeasNetParams, patch, noise):
    """Reparameterized pass: returns ``(recon, mu, logvar)`` in scaled units."""
    x = _inputs(params, patch)
    noise = np.asarray(noise, dtype=np.float64).reshape(x.shape[0], params.latent)
    mu, logvar, _ = _encode(params, x)
    z = mu + np.exp(0.5 * logvar) * noise
    recon, _ = _decode(params, z)
    if x.shape[0] == 1:
        return recon[0], mu[0], logvar[0]
    return recon, mu, logvar


def reconstruction_errors(params: FeasNetParams, patches) -> np.ndarray:
    """Per-element mean squared reconstruction error using ``z = mu``."""
    x = _inputs(params, patches)
    mu, _, _ = _encode(params, x)
    recon, _ = _decode(params, mu)
    return np.mean((recon - x) ** 2, axis=1)


def reconstruction_error(params: FeasNetParams, patch) -> float:
    return float(reconstruction_errors(params, patch)[0])


def kl_terms(mu, logvar):
    return -0.5 * np.sum(1.0 + logvar - mu**2 - np.exp(logvar), axis=-1)


def _unpack(batch):
    if hasattr(batch, "patches"):
        return batch.patches, batch.tasks, batch.labels
    return batch


def loss_and_grad(params: FeasNetParams, batch, noise, cfg: TrainConfig = TrainConfig(), need_grad=True):
    """Joint loss and (optionally) its gradient with respect to every array.

    ``total = feas + alpha * (recon + beta * kl)`` where feas is the mean
    squared feasibility error, recon the per-element mean squared
    reconstruction error and kl the batch-mean KL divergence to N(0, I).
    """
    patches, tasks, labels = _unpack(batch)
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if labels.size == 0:
        raise ValueError("loss needs a non-empty batch")
    x, t = _inputs(params, patches, tasks)
    n = x.shape[0]
    eps = np.asarray(noise, dtype=np.float64).reshape(n, params.latent)

    f, (inp, h1, h2) = _mlp(params, x, t)
    mu, logvar, e = _encode(params, x)
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    recon, d = _decode(params, z)

    resid = f - labels
    feas = float(np.mean(resid**2))
    rdiff = recon - x
    rec = float(np.mean(rdiff**2))
    kl = float(np.mean(kl_terms(mu, logvar)))
    a, b = cfg.alpha, cfg.beta
    total = feas + a * rec + a * b * kl
    comps = {"feas": feas, "recon": rec, "kl": kl}
    if not need_grad:
        return total, comps, None

    g = OrderedDict()
    # feasibility head
    da3 = (2.0 / n) * resid * f * (1.0 - f)
    da3 = da3[:, None]
    g["mlp.w3"] = h2.T @ da3
    g["mlp.b3"] = da3.sum(axis=0)
    da2 = (da3 @ params["mlp.w3"].T) * (1.0 - h2**2)
    g["mlp.w2"] = h1.T @ da2
    g["mlp.b2"] = da2.sum(axis=0)
    da1 = (da2 @ params["mlp.w2"].T) * (1.0 - h1**2)
    g["mlp.w1"] = inp.T @ da1
    g["mlp.b1"] = da1.sum(axis=0)

    # decoder
    dr = (2.0 * a / rdiff.size) * rdiff
    gdw2 = d.T @ dr
    gdb2 = dr.sum(axis=0)
    dd = (dr @ params["dec.w2"].T) * (1.0 - d**2)
    gdw1 = z.T @ dd
    gdb1 = dd.sum(axis=0)
    dz = dd @ params["dec.w1"].T

    # encoder: reparameterization plus KL
    kscale = a * b / n
    dmu = dz + kscale * mu
    dlv = dz * eps * 0.5 * std + kscale * 0.5 * (np.exp(logvar) - 1.0)
    de = (dmu @ params["enc.wmu"].T + dlv @ params["enc.wlv"].T) * (1.0 - e**2)
    g["enc.w1"] = x.T @ de
    g["enc.b1"] = de.sum(axis=0)
    g["enc.wmu"] = e.T @ dmu
    g["enc.bmu"] = dmu.sum(axis=0)
    g["enc.wlv"] = e.T @ dlv
    g["enc.blv"] = dlv.sum(axis=0)
    g["dec.w1"] = gdw1
    g["dec.b1"] = gdb1
    g["dec.w2"] = gdw2
    g["dec.b2"] = gdb2
    grads = OrderedDict((k, g[k]) for k in params.arrays)
    return total, comps, grads


def loss(params, batch, noise, cfg: TrainConfig = TrainConfig()):
    """Return ``(total, {"feas", "recon", "kl"})``."""
    total, comps, _ = loss_and_grad(params, batch, noise, cfg, need_grad=False)
    return total, comps


def evaluate(params, dataset, cfg: TrainConfig = TrainConfig()):
    """Deterministic full-dataset loss with ``z = mu``."""
    noise = np.zeros((len(dataset.labels), params.latent))
    return loss(params, dataset, noise, cfg)


def _check_finite(total, comps, where):
    if np.isfinite(total):
        return
    bad = [k for k, v in comps.items() if not np.isfinite(v)] or ["total"]
    raise TrainingDiverged(f"non-finite loss at {where}: component(s) {', '.join(bad)} = "
                           + ", ".join(f"{k}={comps.get(k, total)!r}" for k in bad))


def train(params: FeasNetParams, dataset, cfg: TrainConfig = TrainConfig(), log=None):
    """Minibatch Adam on the joint loss.

    Returns the trained copy and one history record per epoch (the full
    dataset loss after that epoch, evaluated with ``z = mu``).
    """
    patches, tasks, labels = _unpack(dataset)
    n = len(labels)
    if n < cfg.batch_size:
        raise ValueError(f"dataset of {n} samples is smaller than batch_size {cfg.batch_size}")
    params = params.copy()
    rng = np.random.default_rng(cfg.seed)
    m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    step = 0
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            eps = rng.standard_normal((len(idx), params.latent))
            total, comps, grads = loss_and_grad(params, (patches[idx], tasks[idx], labels[idx]), eps, cfg)
            _check_finite(total, comps, f"epoch {epoch}, step {step}")
            step += 1
            c1 = 1.0 - cfg.adam_b1**step
            c2 = 1.0 - cfg.adam_b2**step
            for k, gk in grads.items():
                m[k] = cfg.adam_b1 * m[k] + (1 - cfg.adam_b1) * gk
                v2[k] = cfg.adam_b2 * v2[k] + (1 - cfg.adam_b2) * gk * gk
                params.arrays[k] = params.arrays[k] - cfg.learning_rate * (m[k] / c1) / (
                    np.sqrt(v2[k] / c2) + cfg.adam_eps
                )
        total, comps = loss(params, (patches, tasks, labels), np.zeros((n, params.latent)), cfg)
        _check_finite(total, comps, f"end of epoch {epoch}")
        history.append({"epoch": epoch, "total": total, **comps})
        if log is not None:
            log(history[-1])
    return params, history


def grad_check(params: FeasNetParams, batch, noise, n_params=200, h=1e-5, seed=0, cfg=TrainConfig()):
    """Max relative error between analytic and central-difference gradients.

    Samples ``n_params`` scalar parameters uniformly over all arrays. The
    relative error uses ``max(|a|, |n|, 1e-7)`` as denominator so that
    gradients that vanish on both sides compare as equal.
    """
    _, _, grads = loss_and_grad(params, batch, noise, cfg)
    names = list(params.arrays)
    sizes = np.array([params.arrays[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(offsets[-1], size=min(n_params, offsets[-1]), replace=False))
    work = params.copy()
    worst = 0.0
    for flat_idx in picks:
        a = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name = names[a]
        local = np.unravel_index(flat_idx - offsets[a], params.arrays[name].shape)
        arr = work.arrays[name]
        orig = arr[local]
        arr[local] = orig + h
        lp, _ = loss(work, batch, noise, cfg)
        arr[local] = orig - h
        lm, _ = loss(work, batch, noise, cfg)
        arr[local] = orig
        num = (lp - lm) / (2 * h)
        ana = grads[name][local]
        rel = abs(ana - num) / max(abs(ana), abs(num), 1e-7)
        worst = max(worst, rel)
    return worst


# -- serialization --------------------------------------------------------------


def save_params(params: FeasNetParams, path) -> None:
    out = bytearray(MAGIC)
    out += struct.pack("<H", FORMAT_VERSION)
    out += struct.pack("<d", params.height_scale)
    out += struct.pack("<H", len(params.arrays))
    for name, arr in params.arrays.items():
        enc = name.encode("ascii")
        out += struct.pack("<B", len(enc)) + enc
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    for arr in params.arrays.values():
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_params(path) -> FeasNetParams:
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise WeightFormatError(f"{path}: truncated while reading {what} at byte {pos}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise WeightFormatError(f"{path}: not a feasibility-net weight file (bad magic)")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != FORMAT_VERSION:
        raise WeightFormatError(f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})")
    (scale,) = struct.unpack("<d", take(8, "height scale"))
    (count,) = struct.unpack("<H", take(2, "layer count"))
    table = []
    for _ in range(count):
        (ln,) = struct.unpack("<B", take(1, "name length"))
        name = take(ln, "layer name").decode("ascii")
        (ndim,) = struct.unpack("<B", take(1, "rank"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
        table.append((name, shape))
    arrays = OrderedDict()
    for name, shape in table:
        size = int(np.prod(shape))
        arrays[name] = np.frombuffer(take(8 * size, f"{name} values"), dtype="<f8").reshape(shape).copy()
    if pos != len(buf):
        raise WeightFormatError(f"{path}: {len(buf) - pos} trailing bytes")
    try:
        return FeasNetParams(arrays, scale)
    except ValueError as exc:
        raise WeightFormatError(f"{path}: {exc}") from None

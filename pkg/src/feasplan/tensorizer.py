"""Sliding-window conversion of an elevation map into directional feasibility."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import feasnet
from .oracle import FORWARD_TASK, PolicyArchetype
from .terrain import PATCH_SIDE, ElevationMap, sample_patches, valid_mask

DIRECTIONS = 8
TAU_LOW = 0.1
TAU_HIGH = 2.0
# channel k points along heading k * 45 degrees
OFFSETS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
HEADINGS = tuple(k * math.pi / 4 for k in range(DIRECTIONS))

TENSOR_MAGIC = b"FTEN"
TENSOR_VERSION = 1


class TensorFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyBundle:
    archetype: PolicyArchetype
    params: feasnet.FeasNetParams

    @property
    def policy_id(self):
        return self.archetype.id


@dataclass(frozen=True, eq=False)
class FeasibilityTensor:
    values: np.ndarray  # (height, width, 8), indexed [y, x, k]
    valid_mask: np.ndarray  # (height, width)
    policy_id: int = 0
    resolution: float = 0.05

    def __post_init__(self):
        v = np.asarray(self.values)
        m = np.asarray(self.valid_mask, dtype=bool)
        if v.ndim != 3 or v.shape[2] != DIRECTIONS or v.shape[:2] != m.shape:
            raise ValueError(f"tensor shape {v.shape} does not match mask {m.shape} x {DIRECTIONS}")
        v.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid_mask", m)

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def directions(self):
        return self.values.shape[2]

    def __eq__(self, other):
        return (
            isinstance(other, FeasibilityTensor)
            and self.policy_id == other.policy_id
            and np.array_equal(self.valid_mask, other.valid_mask)
            and np.array_equal(self.values, other.values)
        )


def ood_weight(recon_error, tau_low=TAU_LOW, tau_high=TAU_HIGH):
    """Confidence in [0, 1] that falls linearly from 1 at ``tau_low`` to 0 at ``tau_high``."""
    w = np.clip(1.0 - (np.asarray(recon_error, dtype=float) - tau_low) / (tau_high - tau_low), 0.0, 1.0)
    return float(w) if w.ndim == 0 else w


def tensorize(
    emap: ElevationMap,
    params: feasnet.FeasNetParams,
    policy_id: int = 0,
    tau_low=TAU_LOW,
    tau_high=TAU_HIGH,
    side: int = PATCH_SIDE,
    chunk: int = 2048,
    return_weights: bool = False,
):
    """OOD-weighted 8-direction feasibility for every cell with a full footprint.

    The OOD weight comes from the heading-0 patch of each cell; each channel
    multiplies it with the network's feasibility for the patch rotated into
    that direction. Cells without a full footprint are zero and masked.
    """
    mask = valid_mask(emap.width, emap.height, side)
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise ValueError(
            f"map of {emap.width}x{emap.height} cells has no cell with a full {side}x{side} footprint"
        )
    values = np.zeros((emap.height, emap.width, DIRECTIONS))
    weights = np.zeros((emap.height, emap.width))
    task = np.array(FORWARD_TASK)
    for lo in range(0, len(xs), chunk):
        cx, cy = xs[lo : lo + chunk], ys[lo : lo + chunk]
        base = sample_patches(emap.data, cx, cy, np.zeros(len(cx)), side)
        w = ood_weight(feasnet.reconstruction_errors(params, base), tau_low, tau_high)
        weights[cy, cx] = w
        for k, heading in enumerate(HEADINGS):
            patches = base if k == 0 else sample_patches(emap.data, cx, cy, np.full(len(cx), heading), side)
            f = feasnet.predict_batch(params, patches, task)
            values[cy, cx, k] = w * f
    tensor = FeasibilityTensor(values, mask, policy_id, emap.resolution)
    if return_weights:
        return tensor, weights
    return tensor


def tensorize_all(emap: ElevationMap, bundles, **kw) -> list[FeasibilityTensor]:
    if not bundles:
        raise ValueError("need at least one policy bundle")
    ids = [b.policy_id for b in bundles]
    if len(set(ids)) != len(ids):
        raise ValueError(f"policy ids must be unique, got {ids}")
    out = []
    for b in bundles:
        try:
            out.append(tensorize(emap, b.params, b.policy_id, **kw))
        except ValueError as exc:
            raise ValueError(f"policy {b.policy_id} ({b.archetype.name}): {exc}") from exc
    return out


def save_tensor(tensor: FeasibilityTensor, path) -> None:
    h, w, d = tensor.values.shape
    out = bytearray(TENSOR_MAGIC)
    out += struct.pack("<HIIIi", TENSOR_VERSION, w, h, d, tensor.policy_id)
    out += np.packbits(tensor.valid_mask.ravel(), bitorder="little").tobytes()
    out += np.ascontiguousarray(tensor.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_tensor(path, resolution: float = 0.05) -> FeasibilityTensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    head = 4 + struct.calcsize("<HIIIi")
    if len(buf) < head or buf[:4] != TENSOR_MAGIC:
        raise TensorFormatError(f"{path}: not a feasibility tensor file")
    version, w, h, d, pid = struct.unpack("<HIIIi", buf[4:head])
    if version != TENSOR_VERSION:
        raise TensorFormatError(f"{path}: tensor version {version} unsupported (expected {TENSOR_VERSION})")
    if d != DIRECTIONS:
        raise TensorFormatError(f"{path}: expected {DIRECTIONS} directions, got {d}")
    nmask = (w * h + 7) // 8
    nvals = w * h * d * 4
    if len(buf) != head + nmask + nvals:
        raise TensorFormatError(f"{path}: expected {head + nmask + nvals} bytes, found {len(buf)}")
    mask = np.unpackbits(np.frombuffer(buf, np.uint8, nmask, head), count=w * h, bitorder="little")
    vals = np.frombuffer(buf, "<f4", w * h * d, head + nmask).astype(np.float64)
    return FeasibilityTensor(vals.reshape(h, w, d), mask.reshape(h, w).astype(bool), pid, resolution)

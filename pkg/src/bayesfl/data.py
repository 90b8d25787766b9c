"""Synthetic federated datasets, label-chunk partitioning and a gradient
correlation check for the linear-regression setting.

Per-device randomness comes from ``substream(seed, Stream.DATA, k)`` so that
device ``k``'s data depends only on ``(seed, k)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .rng import Stream, substream

HETEROGENEITY = ("heterogeneous", "homogeneous")
_FORMAT = "bayesfl-datasets"
_VERSION = 1


@dataclass(frozen=True)
class DeviceDataset:
    """Local regression data: columns of ``X`` (``M x N_k``) are samples."""

    X: np.ndarray
    z: np.ndarray
    a: float

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        z = np.ascontiguousarray(self.z, dtype=np.float64)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "z", z)
        if X.ndim != 2 or z.ndim != 1 or X.shape[1] != z.size:
            raise InvalidInputError(f"X must be M x N_k and z length N_k, got {X.shape}, {z.shape}")
        if z.size < 1:
            raise InvalidInputError("a device needs at least one sample")
        if not self.a >= 0:
            raise InvalidInputError(f"heterogeneity scale must be >= 0, got {self.a}")

    @property
    def M(self):
        return self.X.shape[0]

    @property
    def N(self):
        return self.X.shape[1]


def gen_synthetic(K, N_k, M, heterogeneity="heterogeneous", a=5.0, seed=0, a_max=5.0):
    """Linear-regression data with per-device feature scale ``a_k``.

    ``heterogeneous`` draws ``a_k ~ U(0, a_max)``; ``homogeneous`` fixes
    ``a_k = a``. Features are ``N(0, a_k)`` and targets ``N(0, 1)``.
    """
    if min(K, N_k, M) < 1:
        raise InvalidInputError("K, N_k and M must be >= 1")
    if heterogeneity not in HETEROGENEITY:
        raise InvalidInputError(f"heterogeneity must be one of {HETEROGENEITY}")
    out = []
    for k in range(K):
        rng = substream(seed, Stream.DATA, k)
        a_draw = rng.uniform(0.0, a_max)
        a_k = a_draw if heterogeneity == "heterogeneous" else float(a)
        X = math.sqrt(a_k) * rng.standard_normal((M, N_k))
        z = rng.standard_normal(N_k)
        out.append(DeviceDataset(X=X, z=z, a=a_k))
    return out


def chunk_partition(labels, K, chunks_per_user=2, rng=None):
    """Give each of ``K`` devices ``chunks_per_user`` chunks from distinct classes.

    Each class's indices (in ascending order) are split into ``K`` chunks,
    the remainder going to the last one. Device ``k`` picks its classes at
    random and takes chunk ``k`` of each, so no chunk is used twice.
    Returns a list of sorted index arrays.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise InvalidInputError("labels must be one-dimensional")
    if K < 1 or chunks_per_user < 1:
        raise InvalidInputError("K and chunks_per_user must be >= 1")
    classes = np.unique(labels)
    if chunks_per_user > classes.size:
        raise InvalidInputError(
            f"{chunks_per_user} distinct classes per device requested but only {classes.size} exist"
        )
    chunks = {}
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if idx.size < K:
            raise InvalidInputError(f"class {c!r} has {idx.size} samples, fewer than K={K}")
        size = idx.size // K
        chunks[c] = [idx[j * size : (j + 1) * size] for j in range(K - 1)] + [idx[(K - 1) * size :]]
    rng = np.random.default_rng(0) if rng is None else rng
    parts = []
    for k in range(K):
        picked = rng.choice(classes, size=chunks_per_user, replace=False)
        parts.append(np.sort(np.concatenate([chunks[c][k] for c in picked])))
    return parts


def gaussian_blobs(n=400, n_classes=4, dim=2, spread=0.5, rng=None):
    """Small labeled classification set: one isotropic blob per class.

    Class centers sit on a circle of radius 2 (first two coordinates).
    Samples are split as evenly as possible across classes.
    """
    if n < n_classes or n_classes < 1 or dim < 2:
        raise InvalidInputError("need n >= n_classes >= 1 and dim >= 2")
    rng = np.random.default_rng(0) if rng is None else rng
    labels = np.arange(n) % n_classes
    angles = 2.0 * math.pi * np.arange(n_classes) / n_classes
    centers = np.zeros((n_classes, dim))
    centers[:, 0] = 2.0 * np.cos(angles)
    centers[:, 1] = 2.0 * np.sin(angles)
    features = centers[labels] + spread * rng.standard_normal((n, dim))
    return features, labels


def gradient_correlation_check(R_k, R_l, w, n_trials, rng, n_samples=10, chunk=2**14):
    """Monte Carlo test of E[g_k g_l^T | w] = 4 R_k w w^T R_l.

    Independent datasets are drawn with ``E[X X^T] = R`` and
    ``E[X z] = 0`` (Gaussian features, independent targets), and the
    empirical mean of ``g_k g_l^T`` with ``g = 2 X (X^T w - z)`` is compared
    to the prediction. Returns ``max |MC - pred| / max |pred|``, or the
    absolute deviation when the prediction is zero.
    """
    R_k = np.asarray(R_k, dtype=np.float64)
    R_l = np.asarray(R_l, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    M = w.size
    if R_k.shape != (M, M) or R_l.shape != (M, M):
        raise InvalidInputError("R_k and R_l must be M x M")
    if n_trials < 1:
        raise InvalidInputError("n_trials must be >= 1")
    roots = []
    for R in (R_k, R_l):
        if not np.allclose(R, R.T):
            raise InvalidInputError("correlation matrices must be symmetric")
        vals, vecs = np.linalg.eigh(R)
        if vals.min() < -1e-12 * max(1.0, vals.max()):
            raise InvalidInputError("correlation matrices must be PSD")
        # columns x ~ N(0, R / n) so that E[X X^T] = R
        roots.append(vecs * np.sqrt(np.clip(vals, 0.0, None) / n_samples))
    pred = 4.0 * np.outer(R_k @ w, R_l @ w)

    def grads(root, n):
        X = np.einsum("ij,tjn->tin", root, rng.standard_normal((n, M, n_samples)))
        z = rng.standard_normal((n, n_samples))
        resid = np.einsum("tin,i->tn", X, w) - z
        return 2.0 * np.einsum("tin,tn->ti", X, resid)

    acc = np.zeros((M, M))
    done = 0
    while done < n_trials:
        n = min(chunk, n_trials - done)
        acc += np.einsum("ti,tj->ij", grads(roots[0], n), grads(roots[1], n))
        done += n
    dev = np.max(np.abs(acc / n_trials - pred))
    scale = np.max(np.abs(pred))
    return float(dev / scale) if scale > 0 else float(dev)


def save_datasets(path, datasets):
    """Write datasets as one JSON header line followed by raw little-endian f8.

    The payload is, per device in order, ``X`` row-major then ``z``.
    """
    header = {
        "format": _FORMAT,
        "version": _VERSION,
        "dtype": "<f8",
        "order": "C",
        "devices": [{"M": d.M, "N": d.N, "a": d.a} for d in datasets],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        for d in datasets:
            fh.write(d.X.astype("<f8").tobytes(order="C"))
            fh.write(d.z.astype("<f8").tobytes(order="C"))


def load_datasets(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("format") != _FORMAT or header.get("version") != _VERSION:
            raise InvalidInputError(f"{path}: not a {_FORMAT} v{_VERSION} file")
        payload = fh.read()
    expected = sum(8 * d["N"] * (d["M"] + 1) for d in header["devices"])
    if expected != len(payload):
        raise InvalidInputError(f"{path}: payload size does not match header")
    out, pos = [], 0
    for dev in header["devices"]:
        M, N = dev["M"], dev["N"]
        X = np.frombuffer(payload, dtype="<f8", count=M * N, offset=pos).reshape(M, N)
        pos += 8 * M * N
        z = np.frombuffer(payload, dtype="<f8", count=N, offset=pos)
        pos += 8 * N
        out.append(DeviceDataset(X=X.copy(), z=z.copy(), a=dev["a"]))
    return out

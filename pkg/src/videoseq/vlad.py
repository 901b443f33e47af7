"""K-means codebook learning and VLAD encoding.

The encoder hard-assigns each frame to its nearest center (ties go to the
lowest center index), sums residuals per center, flattens, applies the
signed square root x -> sign(x)*sqrt(|x|), and L2-normalizes. A residual
vector with negligible norm encodes to all zeros.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, PreconditionError

_CODEBOOK_MAGIC = b"FLCB"
_CODEBOOK_VERSION = 1
_DEGENERATE_NORM = 1e-12


@dataclass
class Codebook:
    """k cluster centers in feature space, row per center."""

    centers: np.ndarray
    inertia_history: list | None = field(default=None, compare=False)

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64)
        if centers.ndim != 2:
            raise DimensionError(f"centers must be 2-D, got shape {centers.shape}")
        if not np.all(np.isfinite(centers)):
            raise ValueError("codebook centers must be finite")
        self.centers = centers

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]


@dataclass
class VladEncoding:
    vector: np.ndarray  # length k*d, unit L2 norm or all-zero


def _squared_distances(samples: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """[n x k] squared euclidean distances, clipped at zero."""
    d2 = (
        (samples * samples).sum(axis=1)[:, None]
        - 2.0 * samples @ centers.T
        + (centers * centers).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeanspp_init(samples: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = samples.shape[0]
    centers = np.empty((k, samples.shape[1]))
    centers[0] = samples[rng.integers(n)]
    closest = ((samples - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining mass is on existing centers; fall back to uniform
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers[i] = samples[idx]
        d = ((samples - centers[i]) ** 2).sum(axis=1)
        np.minimum(closest, d, out=closest)
    return centers


def kmeans_fit(
    samples: np.ndarray, k: int, max_iter: int = 100, seed: int = 0
) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding, deterministic given seed.

    Iterates until the assignment reaches a fixpoint or max_iter. An empty
    cluster is re-seeded to the sample currently farthest from its own
    center, which cannot increase the recorded objective. The within-cluster
    sum of squares after each assignment step lands in
    ``Codebook.inertia_history``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise DimensionError(f"samples must be 2-D, got shape {samples.shape}")
    n = samples.shape[0]
    if n < k:
        raise PreconditionError(f"need at least k={k} samples, got {n}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(samples, k, rng)
    history: list[float] = []
    assignments = None
    for _ in range(max_iter):
        d2 = _squared_distances(samples, centers)
        new_assignments = d2.argmin(axis=1)  # argmin takes the lowest index on ties
        history.append(float(d2[np.arange(n), new_assignments].sum()))
        if assignments is not None and np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for c in range(k):
            members = samples[assignments == c]
            if len(members):
                centers[c] = members.mean(axis=0)
        empty = [c for c in range(k) if not np.any(assignments == c)]
        if empty:
            own_d2 = ((samples - centers[assignments]) ** 2).sum(axis=1)
            order = np.argsort(-own_d2, kind="stable")
            for c, idx in zip(empty, order):
                centers[c] = samples[idx]
    return Codebook(centers, inertia_history=history)


def vlad_encode(codebook: Codebook, frames: np.ndarray) -> VladEncoding:
    """Aggregate per-center residual sums of a [t x d] frame matrix."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != codebook.d:
        raise DimensionError(
            f"frames shape {frames.shape} does not match codebook dimension "
            f"{codebook.d}"
        )
    if frames.shape[0] < 1:
        raise PreconditionError("need at least one frame to encode")
    assignments = _squared_distances(frames, codebook.centers).argmin(axis=1)
    residuals = np.zeros_like(codebook.centers)
    np.add.at(residuals, assignments, frames - codebook.centers[assignments])
    flat = residuals.reshape(-1)
    flat = np.sign(flat) * np.sqrt(np.abs(flat))
    norm = np.linalg.norm(flat)
    if norm < _DEGENERATE_NORM:
        return VladEncoding(np.zeros_like(flat))
    return VladEncoding(flat / norm)


def save_codebook(path: str, codebook: Codebook) -> None:
    with open(path, "wb") as f:
        f.write(_CODEBOOK_MAGIC)
        f.write(struct.pack("<III", _CODEBOOK_VERSION, codebook.k, codebook.d))
        f.write(codebook.centers.astype("<f8", copy=False).tobytes())


def load_codebook(path: str) -> Codebook:
    with open(path, "rb") as f:
        if f.read(4) != _CODEBOOK_MAGIC:
            raise FormatError(f"{path}: not a codebook file (bad magic)")
        header = f.read(12)
        if len(header) != 12:
            raise FormatError(f"{path}: truncated codebook header")
        version, k, d = struct.unpack("<III", header)
        if version != _CODEBOOK_VERSION:
            raise FormatError(f"{path}: unsupported codebook version {version}")
        data = f.read(8 * k * d)
        if len(data) != 8 * k * d:
            raise FormatError(f"{path}: truncated codebook data")
        centers = np.frombuffer(data, dtype="<f8").reshape(k, d).copy()
    return Codebook(centers)

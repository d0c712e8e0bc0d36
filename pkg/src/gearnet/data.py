"""
Synthetic domain pairs with injected label noise.

A source set is drawn from class-conditional base distributions and its labels
are corrupted through a row-stochastic transition matrix. The target set is
drawn from the same distributions after a rotation and/or translation. Its
true labels exist only for evaluation: reading ``target.y_true`` outside an
:func:`evaluation_access` block raises :class:`TargetLabelAccessError`.
"""

from __future__ import annotations

import contextlib
import contextvars
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal

import numpy as np

NoiseKind = Literal["uniform", "flip"]

_EVAL_ACCESS = contextvars.ContextVar("gearnet_eval_access", default=False)


class TargetLabelAccessError(RuntimeError):
    """Evaluation-only labels were read from a training path."""


@contextlib.contextmanager
def evaluation_access():
    """Allow reading evaluation-only labels inside the block."""
    token = _EVAL_ACCESS.set(True)
    try:
        yield
    finally:
        _EVAL_ACCESS.reset(token)


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


class LabeledSet:
    """Feature matrix plus labels.

    ``y_noisy`` is present only on a noise-injected source set. When
    ``eval_only`` is set, ``y_true`` is readable only under
    :func:`evaluation_access`; ``eval_reads`` counts the permitted reads.
    """

    def __init__(self, x, y_true, y_noisy=None, eval_only: bool = False, n_classes: int | None = None):
        x = np.asarray(x, dtype=np.float64)
        y_true = np.asarray(y_true, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
            raise ValueError(f"features must be a non-empty (n, d) matrix, got {x.shape}")
        if y_true.shape != (x.shape[0],):
            raise ValueError(f"y_true has shape {y_true.shape}, expected ({x.shape[0]},)")
        k = int(n_classes if n_classes is not None else y_true.max() + 1)
        if k < 2:
            raise ValueError(f"need at least 2 classes, got {k}")
        for name, y in (("y_true", y_true), ("y_noisy", y_noisy)):
            if y is not None and (np.min(y) < 0 or np.max(y) >= k):
                raise ValueError(f"{name} has labels outside [0, {k})")
        self.x = x
        self._y_true = y_true
        self.y_noisy = None if y_noisy is None else np.asarray(y_noisy, dtype=np.int64)
        self.eval_only = eval_only
        self.n_classes = k
        self.eval_reads = 0

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def y_true(self) -> np.ndarray:
        if self.eval_only:
            if not _EVAL_ACCESS.get():
                raise TargetLabelAccessError("target y_true is evaluation-only")
            self.eval_reads += 1
        return self._y_true


@dataclass(frozen=True)
class TransitionMatrix:
    q: np.ndarray
    kind: NoiseKind
    rho: float

    @property
    def n_classes(self) -> int:
        return self.q.shape[0]


def build_transition_matrix(kind: NoiseKind, n_classes: int, rho: float) -> TransitionMatrix:
    """Label-corruption matrix with ``q[i, j] = P(noisy = j | clean = i)``.

    ``uniform`` moves a label to each wrong class with probability ``rho/K``,
    leaving ``1 - rho*(K-1)/K`` on the diagonal. ``flip`` moves class ``c`` to
    ``(c + 1) mod K`` with probability ``rho``.
    """
    if n_classes < 2:
        raise ValueError(f"need K >= 2, got {n_classes}")
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"noise rate must lie in [0, 1), got {rho}")
    k = n_classes
    if kind == "uniform":
        q = np.full((k, k), rho / k)
        np.fill_diagonal(q, 1.0 - rho * (k - 1) / k)
    elif kind == "flip":
        q = np.eye(k) * (1.0 - rho)
        q[np.arange(k), (np.arange(k) + 1) % k] += rho
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return TransitionMatrix(q=q, kind=kind, rho=float(rho))


def inject_noise(y_true, tm: TransitionMatrix, seed: int) -> np.ndarray:
    """Resample every label independently from its transition-matrix row."""
    y = np.asarray(y_true, dtype=np.int64)
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(tm.q, axis=1)
    u = rng.random(y.shape[0])
    noisy = (u[:, None] >= cdf[y]).sum(axis=1)
    return np.minimum(noisy, tm.n_classes - 1)


@dataclass(frozen=True)
class DomainPairSpec:
    """Recipe for a synthetic source/target pair.

    ``rotation_deg`` rotates the first two feature axes about the family's
    centre; ``translation`` shifts every feature along the all-ones direction
    by that Euclidean distance.
    """

    family: Literal["gaussians", "moons"] = "gaussians"
    n_classes: int = 4
    n_features: int = 2
    n_source: int = 500
    n_target: int = 500
    rotation_deg: float = 0.0
    translation: float = 0.0
    seed: int = 0
    radius: float = 3.0
    spread: float = 1.0

    def __post_init__(self):
        if self.n_source < 1 or self.n_target < 1:
            raise ValueError("domain sizes must be positive")
        if self.n_features < 2:
            raise ValueError("synthetic families need at least 2 features")
        if not (math.isfinite(self.rotation_deg) and math.isfinite(self.translation)):
            raise ValueError("shift parameters must be finite")
        if self.family == "moons" and self.n_classes != 2:
            raise ValueError("the moons family has exactly 2 classes")
        if self.family not in ("gaussians", "moons"):
            raise ValueError(f"unknown family {self.family!r}")


@dataclass
class DomainPair:
    source: LabeledSet
    target: LabeledSet
    spec: DomainPairSpec | None = None
    noise: TransitionMatrix | None = field(default=None)

    @property
    def n_classes(self) -> int:
        return self.source.n_classes


def class_means(spec: DomainPairSpec) -> np.ndarray:
    """Unshifted Gaussian class centres, spaced evenly on a circle."""
    angles = 2 * np.pi * np.arange(spec.n_classes) / spec.n_classes
    means = np.zeros((spec.n_classes, spec.n_features))
    means[:, 0] = spec.radius * np.cos(angles)
    means[:, 1] = spec.radius * np.sin(angles)
    return means


def shift_transform(spec: DomainPairSpec, x: np.ndarray) -> np.ndarray:
    """Apply the domain shift (rotation, then translation) to source-space points."""
    theta = np.deg2rad(spec.rotation_deg)
    centre = np.zeros(spec.n_features)
    if spec.family == "moons":
        centre[:2] = (0.5, 0.25)
    out = x - centre
    c, s = np.cos(theta), np.sin(theta)
    xy = out[:, :2].copy()
    out[:, 0] = c * xy[:, 0] - s * xy[:, 1]
    out[:, 1] = s * xy[:, 0] + c * xy[:, 1]
    out = out + centre
    return out + spec.translation / np.sqrt(spec.n_features)


def _sample_base(spec: DomainPairSpec, n: int, rng: np.random.Generator):
    y = rng.integers(0, spec.n_classes, size=n)
    if spec.family == "gaussians":
        x = class_means(spec)[y] + spec.spread * rng.standard_normal((n, spec.n_features))
    else:
        t = np.pi * rng.random(n)
        x = np.zeros((n, spec.n_features))
        x[:, 0] = np.where(y == 0, np.cos(t), 1.0 - np.cos(t))
        x[:, 1] = np.where(y == 0, np.sin(t), 0.5 - np.sin(t))
        x += 0.1 * spec.spread * rng.standard_normal((n, spec.n_features))
    return x, y


def make_domain_pair(spec: DomainPairSpec, noise: TransitionMatrix | None = None) -> DomainPair:
    """Draw a source set (optionally noise-injected) and a shifted target set."""
    root = np.random.SeedSequence(spec.seed)
    src_seq, tgt_seq, noise_seq = root.spawn(3)
    xs, ys = _sample_base(spec, spec.n_source, np.random.default_rng(src_seq))
    xt, yt = _sample_base(spec, spec.n_target, np.random.default_rng(tgt_seq))
    xt = shift_transform(spec, xt)
    if noise is None:
        noise = build_transition_matrix("uniform", spec.n_classes, 0.0)
    if noise.n_classes != spec.n_classes:
        raise ValueError(f"noise matrix is {noise.n_classes}x{noise.n_classes}, spec has K={spec.n_classes}")
    y_noisy = inject_noise(ys, noise, int(noise_seq.generate_state(1, np.uint64)[0]))
    source = LabeledSet(xs, ys, y_noisy=y_noisy, n_classes=spec.n_classes)
    target = LabeledSet(xt, yt, eval_only=True, n_classes=spec.n_classes)
    return DomainPair(source=source, target=target, spec=spec, noise=noise)


def batches(data, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffle the indices of ``data`` (a set or a size) as a pure function of
    ``(seed, epoch)`` and chunk them. The final chunk may be short.
    """
    n = data if isinstance(data, (int, np.integer)) else len(data)
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    perm = np.random.default_rng(derive_seed(seed, epoch)).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def write_csv(ls: LabeledSet, path) -> None:
    """Export a set as ``f0..f{d-1},y_true[,y_noisy]``.

    Writing an evaluation-only set counts as an evaluation read.
    """
    path = Path(path)
    with evaluation_access():
        y_true = ls.y_true
    header = [f"f{j}" for j in range(ls.n_features)] + ["y_true"]
    if ls.y_noisy is not None:
        header.append("y_noisy")
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(ls)):
                row = [repr(float(v)) for v in ls.x[i]] + [int(y_true[i])]
                if ls.y_noisy is not None:
                    row.append(int(ls.y_noisy[i]))
                w.writerow(row)
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc


def read_csv(path, eval_only: bool = False) -> LabeledSet:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = sum(1 for h in header if h.startswith("f"))
    arr = np.array(body, dtype=object)
    x = arr[:, :d].astype(np.float64)
    y_true = arr[:, d].astype(np.int64)
    y_noisy = arr[:, d + 1].astype(np.int64) if "y_noisy" in header else None
    return LabeledSet(x, y_true, y_noisy=y_noisy, eval_only=eval_only)


def cycle_batches(index_batches: list[np.ndarray], count: int) -> Iterator[np.ndarray]:
    """Yield ``count`` batches, wrapping around when the list is exhausted."""
    for i in range(count):
        yield index_batches[i % len(index_batches)]

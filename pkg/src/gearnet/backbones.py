"""
Backbone methods that supply the supervised part of each training step.

``standard``
    Plain cross-entropy on the labeled batch.
``coteaching``
    Two peer classifiers. Each ranks the labeled batch by its own loss, keeps
    the smallest-loss fraction, and hands that selection to its peer.
``dann``
    Cross-entropy plus a domain discriminator on the classifier's hidden
    features, fed through gradient reversal.

The labeled batch is whichever domain carries labels in the current step
(noisy source when training forward, pseudo-labeled target when training
backward), and the unlabeled batch is the other domain.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .data import derive_seed
from .losses import cross_entropy, per_sample_cross_entropy

BackboneKind = Literal["standard", "coteaching", "dann"]
KINDS = ("standard", "coteaching", "dann")

_DISC_SEED_TAG = 100


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    init_scale: float = 0.1

    def __post_init__(self):
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"bad layer widths {self.widths}")

    @classmethod
    def default(cls, n_features: int, n_classes: int, hidden=(64,)) -> "MlpSpec":
        return cls(widths=(n_features, *hidden, n_classes))


class Mlp:
    """Fully connected relu network; the last layer is linear."""

    def __init__(self, spec: MlpSpec, seed: int):
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for n_in, n_out in zip(spec.widths[:-1], spec.widths[1:]):
            self.weights.append(Tensor(spec.init_scale * rng.standard_normal((n_in, n_out)), requires_grad=True))
            self.biases.append(Tensor(np.zeros(n_out), requires_grad=True))

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x) -> tuple[Tensor, Tensor]:
        """Return ``(output, last hidden activation)``."""
        h = ad.as_tensor(x)
        if h.shape[1] != self.spec.widths[0]:
            raise DimensionError(f"input width {h.shape[1]} does not match network input {self.spec.widths[0]}")
        hidden = h
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = ad.relu(h)
                hidden = h
        return h, hidden

    def __call__(self, x) -> Tensor:
        return self.forward(x)[0]


@dataclass
class StepContext:
    """Position inside the current training step, for method schedules."""

    epoch: int = 0


@dataclass
class Backbone:
    kind: BackboneKind
    spec: MlpSpec
    classifiers: list[Mlp]
    discriminator: Mlp | None = None
    hyper: dict = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        params = [p for c in self.classifiers for p in c.parameters()]
        if self.discriminator is not None:
            params += self.discriminator.parameters()
        return params

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, c in enumerate(self.classifiers):
            for layer, (w, b) in enumerate(zip(c.weights, c.biases)):
                named += [(f"clf{i}.W{layer}", w), (f"clf{i}.b{layer}", b)]
        if self.discriminator is not None:
            for layer, (w, b) in enumerate(zip(self.discriminator.weights, self.discriminator.biases)):
                named += [(f"disc.W{layer}", w), (f"disc.b{layer}", b)]
        return named

    def keep_rate(self, ctx: StepContext) -> float:
        if "keep_rate" in self.hyper:
            return float(self.hyper["keep_rate"])
        rho = self.hyper.get("noise_rate", 0.0)
        ramp = self.hyper.get("keep_epochs", 10)
        return 1.0 - rho * min(ctx.epoch / ramp, 1.0) if ramp > 0 else 1.0 - rho


def init_backbone(kind: BackboneKind, spec: MlpSpec, seed: int, **hyper) -> Backbone:
    """Fresh, seeded parameters for a backbone.

    Classifier ``i`` is drawn from ``derive_seed(seed, i)``, so co-teaching
    peers get distinct initialisations and classifier 0 is shared across kinds.
    Recognised ``hyper`` keys: ``noise_rate`` and ``keep_epochs`` (co-teaching
    schedule), ``keep_rate`` (fixed override), ``dann_lambda``, ``disc_hidden``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown backbone kind {kind!r}")
    n_heads = 2 if kind == "coteaching" else 1
    classifiers = [Mlp(spec, derive_seed(seed, i)) for i in range(n_heads)]
    disc = None
    if kind == "dann":
        feat = spec.widths[-2]
        disc_spec = MlpSpec((feat, int(hyper.get("disc_hidden", 32)), 2), init_scale=spec.init_scale)
        disc = Mlp(disc_spec, derive_seed(seed, _DISC_SEED_TAG))
        hyper.setdefault("dann_lambda", 1.0)
    return Backbone(kind=kind, spec=spec, classifiers=classifiers, discriminator=disc, hyper=dict(hyper))


def predict_probs(b: Backbone, x, head: int = 0) -> np.ndarray:
    """Class probabilities from one classifier (the first by default), without recording."""
    logits = b.classifiers[head](ad.Tensor(np.asarray(ad.as_tensor(x).data)))
    return np.exp(ad.log_softmax(logits).data)


def head_probs(b: Backbone, x, head: int) -> Tensor:
    """Differentiable class probabilities from one classifier."""
    return ad.softmax(b.classifiers[head](x))


def guide_targets(b: Backbone) -> list[int]:
    """Indices of the classifier heads that must each agree with the dual model.

    Domain discriminators are never aligned.
    """
    return list(range(len(b.classifiers)))


def _small_loss_rows(losses: np.ndarray, keep_rate: float) -> np.ndarray:
    if keep_rate <= 0:
        raise ValueError(f"keep rate {keep_rate} selects no samples")
    n_keep = max(1, int(np.floor(keep_rate * losses.shape[0] + 1e-9)))
    return np.argsort(losses, kind="stable")[:n_keep]


def bone_loss(b: Backbone, labeled_x, labeled_y, unlabeled_x, ctx: StepContext | None = None) -> Tensor:
    """The backbone method's own training objective on one pair of batches."""
    ctx = ctx or StepContext()
    if b.kind == "standard":
        return cross_entropy(b.classifiers[0](labeled_x), labeled_y)

    if b.kind == "coteaching":
        logits = [c(labeled_x) for c in b.classifiers]
        keep = b.keep_rate(ctx)
        picked = [_small_loss_rows(per_sample_cross_entropy(z, labeled_y), keep) for z in logits]
        y = np.asarray(labeled_y)
        # cross update: each peer learns from the other's selection
        loss_0 = cross_entropy(ad.take_rows(logits[0], picked[1]), y[picked[1]])
        loss_1 = cross_entropy(ad.take_rows(logits[1], picked[0]), y[picked[0]])
        return loss_0 + loss_1

    clf = b.classifiers[0]
    logits_l, feat_l = clf.forward(labeled_x)
    _, feat_u = clf.forward(unlabeled_x)
    feats = ad.grad_reverse(ad.concat_rows([feat_l, feat_u]), b.hyper["dann_lambda"])
    domain = np.concatenate([np.zeros(feat_l.shape[0], dtype=np.int64), np.ones(feat_u.shape[0], dtype=np.int64)])
    return cross_entropy(logits_l, labeled_y) + cross_entropy(b.discriminator(feats), domain)


def discriminator_accuracy(b: Backbone, x_a, x_b) -> float:
    """Fraction of samples the DANN discriminator assigns to the right domain."""
    if b.discriminator is None:
        raise ValueError("only dann backbones have a discriminator")
    feats = [b.classifiers[0].forward(ad.Tensor(x))[1] for x in (x_a, x_b)]
    preds = [np.argmax(b.discriminator(f).data, axis=1) for f in feats]
    correct = np.sum(preds[0] == 0) + np.sum(preds[1] == 1)
    return float(correct / (len(preds[0]) + len(preds[1])))


def param_hash(b: Backbone) -> str:
    h = hashlib.sha256()
    for name, p in b.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def save_params(b: Backbone, path) -> None:
    """Write one CSV row per tensor: ``name,shape,v0,v1,...`` with shape as ``AxB``
    and values in row-major order, rendered with full round-trip precision."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "shape", "values..."])
            for name, p in b.named_parameters():
                w.writerow([name, "x".join(map(str, p.shape))] + [repr(float(v)) for v in p.data.ravel()])
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc


def load_params(b: Backbone, path) -> None:
    """Overwrite ``b``'s parameters in place from a :func:`save_params` file."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    params = dict(b.named_parameters())
    for name, shape, *values in rows:
        if name not in params:
            raise KeyError(f"snapshot has unknown tensor {name!r}")
        dims = tuple(int(s) for s in shape.split("x"))
        if dims != params[name].shape:
            raise DimensionError(f"{name}: snapshot shape {dims} vs model {params[name].shape}")
        params[name].data[...] = np.array(values, dtype=np.float64).reshape(dims)

"""
Bilateral training loop.

Step 0 pretrains the forward model ``f`` on the noisy source and pseudo-labels
the target. Each macro-step then runs

* a backward step (odd index): a freshly initialised dual model learns the
  pseudo-labeled target, while agreeing with the frozen ``f`` on source
  batches;
* a forward step (even index): a freshly initialised ``f`` learns the noisy
  source, while agreeing with the frozen dual on target batches, after which
  the target pseudo-labels are regenerated from ``f``.

Agreement is the symmetric KL between class posteriors, weighted by ``beta``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from . import autodiff as ad
from .backbones import (
    KINDS,
    Backbone,
    MlpSpec,
    StepContext,
    bone_loss,
    guide_targets,
    head_probs,
    init_backbone,
    param_hash,
    predict_probs,
)
from .data import DomainPair, batches, cycle_batches, derive_seed
from .evaluation import evaluate_source_accuracy, evaluate_target_accuracy
from .losses import symmetric_kl, total_loss

logger = logging.getLogger(__name__)

_INIT_TAG = 1
_BATCH_TAG = 2
_SOURCE, _TARGET = 0, 1

Direction = Literal["pretrain", "backward", "forward"]


@dataclass(frozen=True)
class GearNetConfig:
    """Hyperparameters of one training run.

    ``steps`` is the number of backward+forward pairs and ``epochs`` the
    number of epochs inside every step (pretraining included).

    ``reinit="derived"`` seeds step ``t`` with ``derive_seed(seed, t)`` and
    reshuffles batches every step. ``reinit="aligned"`` reuses the
    pretraining seed and batch order for every forward step (and one shared
    seed for every backward step), which makes forward steps at ``beta=0``
    replay pretraining exactly.
    """

    steps: int = 10
    epochs: int = 200
    eta: float = 0.003
    momentum: float = 0.9
    beta: float = 0.1
    batch_source: int = 32
    batch_target: int = 32
    backbone: str = "standard"
    hidden: tuple[int, ...] = (64,)
    seed: int = 0
    noise_rate: float = 0.0
    keep_epochs: int = 10
    dann_lambda: float = 1.0
    reinit: Literal["derived", "aligned"] = "derived"

    def __post_init__(self):
        if self.steps < 1 or self.epochs < 1:
            raise ValueError("steps and epochs must be >= 1")
        if not self.eta > 0:
            raise ValueError(f"learning rate must be > 0, got {self.eta}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.batch_source < 1 or self.batch_target < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.backbone not in KINDS:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.reinit not in ("derived", "aligned"):
            raise ValueError(f"unknown reinit mode {self.reinit!r}")


@dataclass
class StepRecord:
    step: int
    direction: Direction
    init_seed: int
    init_hash: str
    model_hash: str
    dual_hash_before: str | None
    dual_hash_after: str | None
    super_trace: list[float]
    guide_trace: list[float]
    pseudo_labels_updated: bool
    target_acc: float | None = None
    source_acc: float | None = None
    seconds: float = 0.0

    @property
    def super_loss(self) -> float:
        return self.super_trace[-1]

    @property
    def guide_loss(self) -> float:
        return self.guide_trace[-1]


@dataclass
class TrainingState:
    f: Backbone
    f_dual: Backbone | None
    pseudo_labels: np.ndarray
    step_index: int = 0
    history: list[StepRecord] = field(default_factory=list)

    @property
    def directions(self) -> list[str]:
        return [r.direction for r in self.history]

    @property
    def best_target_acc(self) -> float:
        return max(r.target_acc for r in self.history)

    @property
    def final_target_acc(self) -> float:
        return self.history[-1].target_acc


def step_direction(step: int) -> Direction:
    if step == 0:
        return "pretrain"
    return "backward" if step % 2 else "forward"


def init_seed_for_step(cfg: GearNetConfig, step: int) -> int:
    slot = step if cfg.reinit == "derived" else (0 if step % 2 == 0 else 1)
    return derive_seed(cfg.seed, _INIT_TAG, slot)


def fresh_model(cfg: GearNetConfig, data: DomainPair, step: int) -> Backbone:
    spec = MlpSpec.default(data.source.n_features, data.n_classes, cfg.hidden)
    hyper = {"noise_rate": cfg.noise_rate, "keep_epochs": cfg.keep_epochs}
    if cfg.backbone == "dann":
        hyper["dann_lambda"] = cfg.dann_lambda
    return init_backbone(cfg.backbone, spec, init_seed_for_step(cfg, step), **hyper)


def _epoch_key(cfg: GearNetConfig, step: int, epoch: int) -> int:
    if cfg.reinit == "aligned":
        return epoch
    return step * cfg.epochs + epoch


def _train(model: Backbone, dual: Backbone | None, cfg: GearNetConfig, step: int,
           labeled_x: np.ndarray, labeled_y: np.ndarray, labeled_role: int, labeled_batch: int,
           unlabeled_x: np.ndarray, unlabeled_role: int, unlabeled_batch: int):
    params = model.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    n_iter = max(math.ceil(len(labeled_x) / labeled_batch), math.ceil(len(unlabeled_x) / unlabeled_batch))
    heads = guide_targets(model)
    super_trace, guide_trace = [], []
    for epoch in range(cfg.epochs):
        key = _epoch_key(cfg, step, epoch)
        lab = batches(len(labeled_x), labeled_batch, derive_seed(cfg.seed, _BATCH_TAG, labeled_role), key)
        unl = batches(len(unlabeled_x), unlabeled_batch, derive_seed(cfg.seed, _BATCH_TAG, unlabeled_role), key)
        ctx = StepContext(epoch=epoch)
        sup_sum = guide_sum = 0.0
        for it, (li, ui) in enumerate(zip(cycle_batches(lab, n_iter), cycle_batches(unl, n_iter))):
            xl, xu = ad.Tensor(labeled_x[li]), ad.Tensor(unlabeled_x[ui])
            sup = bone_loss(model, xl, labeled_y[li], xu, ctx)
            if dual is None:
                guide = ad.Tensor(0.0)
            else:
                # the dual enters as a constant: no graph is recorded through it
                p_dual = ad.Tensor(predict_probs(dual, xu))
                guide = None
                for h in heads:
                    term = symmetric_kl(head_probs(model, xu, h), p_dual)
                    guide = term if guide is None else guide + term
            bundle = total_loss(sup, guide, cfg.beta)
            value = bundle.total.item()
            if not math.isfinite(value):
                raise ad.NumericError(f"non-finite loss at step {step}, epoch {epoch}, iteration {it}")
            ad.zero_grads(params)
            ad.backward(bundle.total)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            ad.sgd_step(params, grads, cfg.eta, cfg.momentum, velocity)
            sup_sum += bundle.super.item()
            guide_sum += bundle.guide.item()
        super_trace.append(sup_sum / n_iter)
        guide_trace.append(guide_sum / n_iter)
    return super_trace, guide_trace


def _evaluate(record: StepRecord, model: Backbone, data: DomainPair) -> None:
    record.target_acc = evaluate_target_accuracy(model, data.target)
    record.source_acc = evaluate_source_accuracy(model, data.source)


def update_pseudo_labels(state: TrainingState, data: DomainPair) -> None:
    """Relabel the whole target set with ``argmax`` of ``f`` (ties go to the lowest class)."""
    state.pseudo_labels = np.argmax(predict_probs(state.f, data.target.x), axis=1).astype(np.int64)


def _run_step(state: TrainingState | None, cfg: GearNetConfig, data: DomainPair, step: int,
              evaluate: bool) -> tuple[Backbone, StepRecord]:
    t0 = time.perf_counter()
    direction = step_direction(step)
    model = fresh_model(cfg, data, step)
    init_hash = param_hash(model)
    src, tgt = data.source, data.target
    if direction == "backward":
        dual = state.f
        labeled = (tgt.x, state.pseudo_labels, _TARGET, cfg.batch_target)
        unlabeled = (src.x, _SOURCE, cfg.batch_source)
    else:
        dual = None if direction == "pretrain" else state.f_dual
        labeled = (src.x, src.y_noisy, _SOURCE, cfg.batch_source)
        unlabeled = (tgt.x, _TARGET, cfg.batch_target)
    dual_before = param_hash(dual) if dual is not None else None
    sup, guide = _train(model, dual, cfg, step, *labeled, *unlabeled)
    record = StepRecord(
        step=step, direction=direction, init_seed=init_seed_for_step(cfg, step), init_hash=init_hash,
        model_hash=param_hash(model), dual_hash_before=dual_before,
        dual_hash_after=param_hash(dual) if dual is not None else None,
        super_trace=sup, guide_trace=guide, pseudo_labels_updated=direction != "backward",
    )
    if evaluate:
        _evaluate(record, model, data)
    record.seconds = time.perf_counter() - t0
    logger.debug("step %d (%s): super %.4f guide %.4f target acc %s", step, direction,
                 record.super_loss, record.guide_loss, record.target_acc)
    return model, record


def pretrain(cfg: GearNetConfig, data: DomainPair, evaluate: bool = True) -> TrainingState:
    """Train ``f`` on the noisy source for ``cfg.epochs`` epochs and pseudo-label the target."""
    f, record = _run_step(None, cfg, data, 0, evaluate)
    state = TrainingState(f=f, f_dual=None, pseudo_labels=np.zeros(len(data.target), dtype=np.int64))
    update_pseudo_labels(state, data)
    state.history.append(record)
    return state


def backward_step(state: TrainingState, cfg: GearNetConfig, data: DomainPair, evaluate: bool = True) -> None:
    step = state.step_index + 1 if state.step_index % 2 == 0 else state.step_index + 2
    state.f_dual, record = _run_step(state, cfg, data, step, evaluate)
    state.step_index = step
    state.history.append(record)


def forward_step(state: TrainingState, cfg: GearNetConfig, data: DomainPair, evaluate: bool = True) -> None:
    if state.f_dual is None:
        raise RuntimeError("forward step needs a dual model from a preceding backward step")
    step = state.step_index + 1 if state.step_index % 2 == 1 else state.step_index + 2
    state.f, record = _run_step(state, cfg, data, step, evaluate)
    update_pseudo_labels(state, data)
    state.step_index = step
    state.history.append(record)


def run(cfg: GearNetConfig, data: DomainPair, evaluate: bool = True, max_steps: int | None = None) -> TrainingState:
    """Pretrain, then alternate backward and forward steps ``cfg.steps`` times.

    ``max_steps`` truncates the loop (``0`` returns the pretrained state).
    """
    n = cfg.steps if max_steps is None else min(max_steps, cfg.steps)
    try:
        state = pretrain(cfg, data, evaluate)
        for _ in range(n):
            backward_step(state, cfg, data, evaluate)
            forward_step(state, cfg, data, evaluate)
    except ad.NumericError as exc:
        raise ad.NumericError(f"run with seed {cfg.seed} failed: {exc}") from exc
    return state


def with_beta(cfg: GearNetConfig, beta: float) -> GearNetConfig:
    return replace(cfg, beta=beta)

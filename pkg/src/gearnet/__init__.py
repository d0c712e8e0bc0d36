"""Bilateral (source <-> target) training for domain adaptation under noisy source labels."""

from .backbones import Backbone, MlpSpec, bone_loss, guide_targets, init_backbone, predict_probs
from .data import (
    DomainPair,
    DomainPairSpec,
    LabeledSet,
    TargetLabelAccessError,
    TransitionMatrix,
    batches,
    build_transition_matrix,
    inject_noise,
    make_domain_pair,
)
from .engine import GearNetConfig, TrainingState, backward_step, forward_step, pretrain, run, update_pseudo_labels
from .evaluation import evaluate_target_accuracy
from .harness import ExperimentConfig, MetricsRecord, emit_csv, load_config, run_experiment
from .losses import LossBundle, cross_entropy, kl_divergence, symmetric_kl, total_loss

__version__ = "0.1.0"

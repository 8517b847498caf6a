"""Joint classification + domain-similarity objective, fixed training and search."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .controller import ControllerParams, controller_greedy, controller_sample, reinforce_update
from .data import BatchPairIterator, LabeledSet, UnlabeledSet
from .nn import Mode, cross_entropy, sgd_nesterov_step
from .numerics import Rng
from .search_space import ArchitectureChoice, SuperGraph, instantiate_child, serialize_arch
from .similarity import PC, Sign, SimilarityKind, measure


class UnsupportedLossError(ValueError):
    pass


@dataclass
class TrainConfig:
    lam: float = 1.0
    similarity: Optional[SimilarityKind] = PC
    batch_size: int = 64
    epochs: int = 30
    eta0: float = 0.1
    alpha: float = 0.001
    beta: float = 0.75
    momentum: float = 0.9
    dropout_rate: float = 0.5
    n_cells: int = 3
    seed: int = 0
    controller_step_size: float = 0.05
    controller_baseline_decay: float = 0.95
    controller_entropy_weight: float = 0.0
    controller_hidden: int = 64
    controller_embed: int = 32
    # target passes refresh batch-norm running statistics (used at eval time)
    track_target_bn_stats: bool = True

    def __post_init__(self):
        if isinstance(self.similarity, (str, dict)):
            self.similarity = SimilarityKind.from_dict(self.similarity)
        for name in ("lam", "eta0", "alpha", "beta", "momentum", "dropout_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["similarity"] = None if self.similarity is None else self.similarity.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


# batch size of the original large-scale (ResNet-50 feature) setting
REFERENCE_BATCH_SIZE = 128


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    mean_ce: float
    mean_sim: Optional[float]
    lr: float
    reward: Optional[float] = None
    sampled_arch: Optional[str] = None
    target_accuracy: Optional[float] = None
    n_batches: int = 0
    first_step: int = 0


@dataclass
class SearchResult:
    final_arch: ArchitectureChoice
    supergraph: SuperGraph
    controller: ControllerParams
    history: List[EpochMetrics] = field(default_factory=list)


def lr_at(p: int, eta0: float = 0.1, alpha: float = 0.001, beta: float = 0.75) -> float:
    if p < 0:
        raise ValueError("step index must be nonnegative")
    return eta0 * (1.0 + alpha * p) ** (-beta)


def dampc_loss(pc_s, pc_t, logits_s, labels_s, lam: float, similarity: Optional[SimilarityKind]):
    """Cross-entropy minus ``lam`` times PC, or plus ``lam`` times a distance.

    Returns ``(loss, ce, sim_value, d_pc_s, d_pc_t, d_logits_s)``; for the
    CMD kind features are squashed with tanh first so they lie in its range.
    """
    ce, d_logits = cross_entropy(logits_s, labels_s)
    d_pc_s = np.zeros_like(pc_s)
    d_pc_t = np.zeros_like(pc_t)
    if similarity is None:
        return ce, ce, None, d_pc_s, d_pc_t, d_logits
    if not similarity.differentiable:
        raise UnsupportedLossError(f"{similarity.name} cannot be used as a training loss")
    squash = similarity.name == "cmd"
    fs, ft = (np.tanh(pc_s), np.tanh(pc_t)) if squash else (pc_s, pc_t)
    sig = measure(similarity, fs, ft, grad=lam != 0.0)
    w = -lam if sig.sign is Sign.MAXIMIZE_SIMILARITY else lam
    loss = ce + w * sig.value
    if lam != 0.0:
        d_pc_s = w * sig.grad_source
        d_pc_t = w * sig.grad_target
        if squash:
            d_pc_s = d_pc_s * (1.0 - fs * fs)
            d_pc_t = d_pc_t * (1.0 - ft * ft)
    return loss, ce, sig.value, d_pc_s, d_pc_t, d_logits


def _train_epoch(child, batches: BatchPairIterator, cfg: TrainConfig, step: int, drop_rng: Rng):
    params = child.params()
    losses, ces, sims, lrs = [], [], [], []
    use_target = cfg.similarity is not None
    for Xs, ys, Xt in batches.epoch():
        _, f_s, logits_s, back_s = child.forward(Xs, Mode.TRAIN, drop_rng)
        if use_target:
            _, f_t, _, back_t = child.forward(Xt, Mode.TRAIN, drop_rng, track_stats=cfg.track_target_bn_stats)
        else:
            f_t, back_t = np.zeros((0, f_s.shape[1])), None
        loss, ce, sim, d_s, d_t, d_logits = dampc_loss(f_s, f_t, logits_s, ys, cfg.lam, cfg.similarity)
        back_s(d_s, d_logits)
        if back_t is not None and cfg.lam != 0.0:
            back_t(d_t, None)
        lr = lr_at(step, cfg.eta0, cfg.alpha, cfg.beta)
        sgd_nesterov_step(params, lr, cfg.momentum)
        step += 1
        losses.append(loss)
        ces.append(ce)
        sims.append(sim)
        lrs.append(lr)
    mean_sim = None if not use_target else float(np.mean(sims))
    return float(np.mean(losses)), float(np.mean(ces)), mean_sim, lrs, step


def _streams(seed: int):
    root = Rng(seed)
    return {name: root.spawn() for name in ("weights", "batches", "dropout", "controller_init", "controller")}


Evaluator = Callable[[SuperGraph, ArchitectureChoice], float]


def train_fixed(arch: ArchitectureChoice, source: LabeledSet, target: UnlabeledSet, cfg: TrainConfig,
                evaluator: Optional[Evaluator] = None, supergraph: Optional[SuperGraph] = None,
                on_epoch: Optional[Callable[[EpochMetrics], None]] = None):
    """Train one architecture's weights; returns ``(supergraph, history)``.

    ``evaluator`` is called after every epoch (for example a closure over
    held-out labeled target data) and its value is logged as target accuracy.
    """
    if source.dim != target.dim:
        raise ValueError(f"source has {source.dim} features, target {target.dim}")
    rngs = _streams(cfg.seed)
    sg = supergraph or SuperGraph(source.dim, source.n_classes, cfg.dropout_rate,
                                  seed=rngs["weights"].next_u64())
    child = instantiate_child(sg, arch)
    batches = BatchPairIterator(source, target, cfg.batch_size, rngs["batches"])
    step = 0
    history = []
    for epoch in range(cfg.epochs):
        first = step
        mean_loss, mean_ce, mean_sim, lrs, step = _train_epoch(child, batches, cfg, step, rngs["dropout"])
        m = EpochMetrics(epoch, mean_loss, mean_ce, mean_sim, lrs[-1], sampled_arch=serialize_arch(arch),
                         n_batches=len(lrs), first_step=first)
        if evaluator is not None:
            m.target_accuracy = evaluator(sg, arch)
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
    return sg, history


def search(source: LabeledSet, target: UnlabeledSet, cfg: TrainConfig,
           evaluator: Optional[Evaluator] = None,
           on_epoch: Optional[Callable[[EpochMetrics], None]] = None) -> SearchResult:
    """Alternate shared-weight training of one sampled child per epoch with a
    controller update rewarded by the negative mean epoch loss.

    The returned weights are used as they are for the greedy architecture.
    """
    if source.dim != target.dim:
        raise ValueError(f"source has {source.dim} features, target {target.dim}")
    rngs = _streams(cfg.seed)
    sg = SuperGraph(source.dim, source.n_classes, cfg.dropout_rate, seed=rngs["weights"].next_u64())
    ctrl = ControllerParams.init(cfg.n_cells, rngs["controller_init"], hidden=cfg.controller_hidden,
                                 embed=cfg.controller_embed, step_size=cfg.controller_step_size,
                                 baseline_decay=cfg.controller_baseline_decay,
                                 entropy_weight=cfg.controller_entropy_weight)
    batches = BatchPairIterator(source, target, cfg.batch_size, rngs["batches"])
    step = 0
    history = []
    for epoch in range(cfg.epochs):
        trace = controller_sample(ctrl, rngs["controller"])
        child = instantiate_child(sg, trace.arch)
        first = step
        mean_loss, mean_ce, mean_sim, lrs, step = _train_epoch(child, batches, cfg, step, rngs["dropout"])
        reward = -mean_loss
        reinforce_update(ctrl, trace, reward)
        m = EpochMetrics(epoch, mean_loss, mean_ce, mean_sim, lrs[-1], reward=reward,
                         sampled_arch=serialize_arch(trace.arch), n_batches=len(lrs), first_step=first)
        if evaluator is not None:
            m.target_accuracy = evaluator(sg, trace.arch)
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
    final = controller_greedy(ctrl)
    # creates (untrained) weights only for sites the final arch never visited
    instantiate_child(sg, final)
    return SearchResult(final, sg, ctrl, history)


def predict(sg: SuperGraph, arch: ArchitectureChoice, X) -> np.ndarray:
    _, _, logits, _ = instantiate_child(sg, arch).forward(X, Mode.EVAL)
    return logits


def evaluate(sg: SuperGraph, arch: ArchitectureChoice, data: LabeledSet) -> float:
    """Eval-mode accuracy; argmax ties go to the lowest class index."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty set")
    logits = predict(sg, arch, data.features)
    return float(np.mean(np.argmax(logits, axis=1) == data.labels))


def loss_identity_residual(m: EpochMetrics, cfg: TrainConfig) -> float:
    """How far a logged epoch is from ``loss = ce -/+ lam * sim``."""
    if m.mean_sim is None:
        return abs(m.mean_loss - m.mean_ce)
    w = -cfg.lam if cfg.similarity.sign is Sign.MAXIMIZE_SIMILARITY else cfg.lam
    return abs(m.mean_loss - (m.mean_ce + w * m.mean_sim))


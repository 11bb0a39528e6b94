"""SGD with momentum, the polynomial LR schedule, and the two-stage recipe.

Stage one trains each uni-modal branch. Stage two freezes the branches and
optimizes only the fusion layers on cached branch outputs; a parameter hash
asserts at runtime that fusion training never mutates a branch tensor.

Per-epoch log records carry: epoch, lr, train_loss, val_top1_action,
val_top5_action, wall_seconds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .branch import Branch, BranchConfig, multitask_loss
from .checkpoint import parameter_hash
from .data import Sample, stack_features
from .fusion import (FEATURE_STRATEGIES, HEADS, MODALITIES, FusionConfig,
                     FusionModel, fused_loss, late_fusion, mixed_probs_loss,
                     softmax)
from .layers import Parameter
from .metrics import top_k_accuracy
from .tensor import NonFiniteError, Rng, Tensor, TensorError


@dataclass(frozen=True)
class SgdConfig:
    lr0: float
    epochs: int = 80
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    power: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise TensorError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 <= self.momentum < 1.0:
            raise TensorError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1 or self.batch_size < 1:
            raise TensorError("epochs and batch_size must be positive")


def lr_at_epoch(lr0: float, epoch: int, total_epochs: int, power: float = 0.99) -> float:
    """lr0 * (1 - e/E)^power, applied at the start of epoch e."""
    if not 0 <= epoch < total_epochs:
        raise TensorError(f"epoch {epoch} outside [0, {total_epochs})")
    return lr0 * (1.0 - epoch / total_epochs) ** power


class SgdOptimizer:
    """Classical momentum: v <- m*v + (g + wd*p); p <- p - lr*v.

    Decay is added to the gradient before the momentum buffer and skipped for
    parameters flagged decay=False (BN gamma/beta). A non-finite gradient
    aborts the step before any parameter moves.
    """

    def __init__(self, named_params: list[tuple[str, Parameter]],
                 momentum: float = 0.9, weight_decay: float = 5e-4):
        self.named_params = named_params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = [np.zeros_like(p.data) for _, p in named_params]

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        for name, p in self.named_params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient for {name!r}; step aborted")
        for v, (_, p) in zip(self._velocity, self.named_params):
            g = p.grad
            if self.weight_decay and p.decay:
                g = g + p.data.dtype.type(self.weight_decay) * p.data
            v *= p.data.dtype.type(self.momentum)
            v += g
            p.data -= p.data.dtype.type(lr) * v


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_top1_action: float
    val_top5_action: float
    wall_seconds: float

    def line(self) -> str:
        return (f"epoch={self.epoch} lr={self.lr:.8g} train_loss={self.train_loss:.8g} "
                f"val_top1_action={self.val_top1_action:.6f} "
                f"val_top5_action={self.val_top5_action:.6f} "
                f"wall_seconds={self.wall_seconds:.3f}")


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_val_top1: float
    best_state: dict[str, Tensor] = field(repr=False)

    @property
    def final_val_top1(self) -> float:
        return self.history[-1].val_top1_action if self.history else 0.0


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _copy_state(state: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: v.copy() for k, v in state.items()}


def train_branch(train_samples: list[Sample], val_samples: list[Sample],
                 modality: str, branch_config: BranchConfig, sgd: SgdConfig,
                 loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
                 snippets: int | None = None,
                 log=None) -> tuple[Branch, TrainResult]:
    """Stage-one training of one uni-modal branch; returns the trained branch.

    The branch keeps its final weights; the best-validation state (top-1
    action) is returned separately in the result.
    """
    if not train_samples or not val_samples:
        raise TensorError("empty dataset")
    rng = Rng(sgd.seed)
    branch = Branch(branch_config, rng)
    x_train, y_train = stack_features(train_samples, modality, snippets)
    x_val, y_val = stack_features(val_samples, modality, snippets)
    if x_train.shape[1] != branch_config.input_dim:
        raise TensorError(
            f"{modality} features have dim {x_train.shape[1]}, "
            f"config expects {branch_config.input_dim}")
    opt = SgdOptimizer(branch.named_parameters(), sgd.momentum, sgd.weight_decay)
    history: list[EpochRecord] = []
    best_epoch, best_top1 = -1, -1.0
    best_state: dict[str, Tensor] = {}
    n = x_train.shape[0]
    for epoch in range(sgd.epochs):
        t0 = time.perf_counter()
        lr = lr_at_epoch(sgd.lr0, epoch, sgd.epochs, sgd.power)
        order = rng.permutation(n)
        branch.train()
        total_loss, seen = 0.0, 0
        for idx in _batches(n, sgd.batch_size, order):
            xb = np.ascontiguousarray(x_train[idx])
            yb = {head: y_train[head][idx] for head in HEADS}
            out = branch.forward(xb, rng)
            loss, grads = multitask_loss(out, yb, loss_weights)
            opt.zero_grad()
            branch.backward(grads)
            opt.step(lr)
            total_loss += loss * len(idx)
            seen += len(idx)
        branch.eval()
        logits = branch.forward(x_val).action
        top1 = top_k_accuracy(logits, y_val["action"], 1)
        top5 = top_k_accuracy(logits, y_val["action"], min(5, branch_config.num_actions))
        rec = EpochRecord(epoch, lr, total_loss / seen, top1, top5,
                          time.perf_counter() - t0)
        history.append(rec)
        if log:
            log(rec.line())
        if top1 > best_top1:
            best_top1, best_epoch = top1, epoch
            best_state = _copy_state(branch.named_state())
    return branch, TrainResult(history, best_epoch, best_top1, best_state)


def _cached_features(branches: dict[str, Branch], samples: list[Sample],
                     snippets: int | None) -> tuple[dict[str, Tensor], dict[str, np.ndarray]]:
    feats = {}
    labels = None
    for mod in MODALITIES:
        x, labels = stack_features(samples, mod, snippets)
        feats[mod] = branches[mod].eval().forward(x).feature
    return feats, labels


def _cached_probs(branches: dict[str, Branch], samples: list[Sample],
                  snippets: int | None) -> dict[str, dict[str, Tensor]]:
    probs = {}
    for mod in MODALITIES:
        x, _ = stack_features(samples, mod, snippets)
        out = branches[mod].eval().forward(x)
        probs[mod] = {head: softmax(out.logits(head)) for head in HEADS}
    return probs


def train_fusion(branches: dict[str, Branch], train_samples: list[Sample],
                 val_samples: list[Sample], strategy: str,
                 fusion_config: FusionConfig, sgd: SgdConfig,
                 loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
                 snippets: int | None = None,
                 log=None) -> tuple[FusionModel, TrainResult]:
    """Stage-two training: branches frozen, only fusion layers move.

    Branch outputs are cached once up front (the branches are frozen
    eval-mode, so this is exact). Late fusion has nothing to train and yields
    a single evaluation record; attention trains only the weighting layer.
    """
    if not train_samples or not val_samples:
        raise TensorError("empty dataset")
    rng = Rng(sgd.seed)
    model = FusionModel(branches, fusion_config, rng)
    frozen_before = parameter_hash({f"{m}.{k}": v for m in MODALITIES
                                    for k, v in branches[m].named_state().items()})
    f_train, y_train = _cached_features(branches, train_samples, snippets)
    f_val, y_val = _cached_features(branches, val_samples, snippets)

    def val_record(epoch: int, lr: float, train_loss: float, t0: float) -> EpochRecord:
        logits_or_probs = _val_scores()
        top1 = top_k_accuracy(logits_or_probs, y_val["action"], 1)
        top5 = top_k_accuracy(logits_or_probs, y_val["action"],
                              min(5, fusion_config.num_actions))
        return EpochRecord(epoch, lr, train_loss, top1, top5,
                           time.perf_counter() - t0)

    if strategy in FEATURE_STRATEGIES:
        params = [(n, p) for n, p in model.named_fusion_parameters()
                  if "attention" not in n]
        opt = SgdOptimizer(params, sgd.momentum, sgd.weight_decay)

        def _val_scores():
            model.eval()
            return model.fuse_forward(f_val, strategy=strategy)["action"]

        def step(idx):
            feats_b = {mod: f_train[mod][idx] for mod in MODALITIES}
            yb = {head: y_train[head][idx] for head in HEADS}
            model.train()
            logits = model.fuse_forward(feats_b, rng, strategy=strategy)
            loss, grads = fused_loss(logits, yb, loss_weights)
            model.fuse_backward(grads)
            return loss

        history, best = _run_epochs(opt, rng, sgd, y_train, log, val_record, step)
    elif strategy == "attention":
        p_train = _cached_probs(branches, train_samples, snippets)
        p_val = _cached_probs(branches, val_samples, snippets)
        opt = SgdOptimizer([(n, p) for n, p in model.named_fusion_parameters()
                            if "attention" in n], sgd.momentum, sgd.weight_decay)

        def _val_scores():
            model.eval()
            return model.attention_forward(f_val, p_val)["action"]

        def step(idx):
            feats_b = {mod: f_train[mod][idx] for mod in MODALITIES}
            probs_b = {mod: {head: p_train[mod][head][idx] for head in HEADS}
                       for mod in MODALITIES}
            yb = {head: y_train[head][idx] for head in HEADS}
            model.train()
            mixed = model.attention_forward(feats_b, probs_b)
            loss, grads = mixed_probs_loss(mixed, yb, loss_weights)
            model.attention_backward(grads)
            return loss

        history, best = _run_epochs(opt, rng, sgd, y_train, log, val_record, step)
    elif strategy == "late":
        t0 = time.perf_counter()
        p_val = _cached_probs(branches, val_samples, snippets)

        def _val_scores():
            return late_fusion(p_val["rgb"]["action"], p_val["flow"]["action"],
                               p_val["obj"]["action"])

        rec = val_record(0, 0.0, 0.0, t0)
        if log:
            log(rec.line())
        history, best = [rec], (0, rec.val_top1_action)
    else:
        raise TensorError(f"unknown fusion strategy {strategy!r}")

    frozen_after = parameter_hash({f"{m}.{k}": v for m in MODALITIES
                                   for k, v in branches[m].named_state().items()})
    if frozen_before != frozen_after:
        raise TensorError("fusion training mutated a frozen branch tensor")
    best_epoch, best_top1 = best
    return model, TrainResult(history, best_epoch, best_top1,
                              _copy_state(model.named_state()))


def _run_epochs(opt, rng, sgd, y_train, log, val_record, step):
    n = y_train["action"].shape[0]
    history: list[EpochRecord] = []
    best_epoch, best_top1 = -1, -1.0
    for epoch in range(sgd.epochs):
        t0 = time.perf_counter()
        lr = lr_at_epoch(sgd.lr0, epoch, sgd.epochs, sgd.power)
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for idx in _batches(n, sgd.batch_size, order):
            opt.zero_grad()
            loss = step(idx)
            opt.step(lr)
            total += loss * len(idx)
            seen += len(idx)
        rec = val_record(epoch, lr, total / seen, t0)
        history.append(rec)
        if log:
            log(rec.line())
        if rec.val_top1_action > best_top1:
            best_top1, best_epoch = rec.val_top1_action, epoch
    return history, (best_epoch, best_top1)

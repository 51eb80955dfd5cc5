"""SGD training, gradient verification, evaluation and k-fold cross-validation."""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .cooccurrence import RegConfig
from .network import (
    Network,
    NetworkConfig,
    SequenceSample,
    backward,
    class_probabilities,
    forward,
    network_penalty,
    network_penalty_subgradient,
    nll_loss,
    predict,
    sample_masks,
)
from .reference import cast_parameters, reference_loss

__all__ = [
    "SgdConfig",
    "EpochRecord",
    "TrainReport",
    "TrainingDiverged",
    "sgd_update",
    "train",
    "check_gradients",
    "gradient_check",
    "gradient_check_tensors",
    "evaluate",
    "CrossValResult",
    "assign_folds",
    "cross_validate",
]

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    clip_norm: Optional[float] = 5.0
    batch_size: int = 8
    epochs: int = 300
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive or null")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: Optional[float]
    wall_time: float

    def metrics(self) -> dict:
        """The deterministic part of the record (everything but wall time)."""
        d = asdict(self)
        del d["wall_time"]
        return d


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.epochs[-1] if self.epochs else None


def sgd_update(params: dict, grads: dict, velocity: dict, cfg: SgdConfig,
               penalty: Optional[dict] = None) -> float:
    """Momentum SGD step with global-norm clipping, in place.

    ``g = grads + penalty``; if ``||g|| > clip_norm`` it is rescaled to
    ``clip_norm``; then ``v <- momentum * v - lr * g`` and ``p <- p + v``.
    Returns the norm of the gradient actually applied.
    """
    penalty = penalty or {}
    total = {}
    for name in params:
        g = grads.get(name)
        g = np.zeros_like(params[name]) if g is None else g
        if name in penalty:
            g = g + penalty[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in tensor {name}")
        total[name] = g
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in total.values()))
    scale = 1.0
    if cfg.clip_norm is not None and norm > cfg.clip_norm:
        scale = cfg.clip_norm / norm
    for name, p in params.items():
        g = total[name] * scale if scale != 1.0 else total[name]
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= cfg.momentum
        v -= cfg.learning_rate * g
        p += v
    return norm * scale


def _check_dataset(net: Network, dataset: Sequence[SequenceSample]):
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    C = net.config.num_classes
    for s in dataset:
        if not 0 <= s.label < C:
            raise ValueError(f"label {s.label} outside 0..{C - 1}")


def _sample_work(net, sample, masks):
    logits, cache = forward(net, sample, "train", masks=masks)
    loss = nll_loss(class_probabilities(logits), sample.label)
    return loss, backward(net, cache, sample.label)


def train(net: Network, dataset: Sequence[SequenceSample], sgd: SgdConfig,
          reg: Optional[RegConfig] = None, val: Optional[Sequence[SequenceSample]] = None,
          metrics_path=None, rng: Optional[np.random.Generator] = None, workers: int = 1,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainReport:
    """Minimize mean NLL plus the co-occurrence penalty with mini-batch SGD.

    Masks and shuffles are drawn from ``rng`` (default: seeded from
    ``sgd.seed``) in a fixed sample order before any parallel work, and batch
    gradients are reduced in sample order, so results do not depend on
    ``workers``.
    """
    _check_dataset(net, dataset)
    rng = np.random.default_rng(sgd.seed) if rng is None else rng
    params = net.parameters()
    velocity: dict = {}
    report = TrainReport()
    n = len(dataset)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    sink = open(metrics_path, "w", encoding="utf-8") if metrics_path is not None else None
    try:
        for epoch in range(1, sgd.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(n) if sgd.shuffle else np.arange(n)
            loss_sum = 0.0
            for start in range(0, n, sgd.batch_size):
                batch = [dataset[k] for k in order[start:start + sgd.batch_size]]
                masks = [sample_masks(net, s.frames.shape[0], rng) for s in batch]
                if pool is None:
                    results = [_sample_work(net, s, m) for s, m in zip(batch, masks)]
                else:
                    results = list(pool.map(_sample_work, [net] * len(batch), batch, masks))
                grads = {}
                for _, g in results:
                    for name, arr in g.items():
                        if name in grads:
                            grads[name] += arr
                        else:
                            grads[name] = arr.copy()
                for arr in grads.values():
                    arr /= len(batch)
                batch_loss = sum(l for l, _ in results) / len(batch) + network_penalty(net, reg)
                if not math.isfinite(batch_loss):
                    raise TrainingDiverged(
                        f"loss became non-finite ({batch_loss}) in epoch {epoch} at batch offset {start}")
                sgd_update(params, grads, velocity, sgd, network_penalty_subgradient(net, reg))
                loss_sum += batch_loss * len(batch)
            train_acc, _ = evaluate(net, dataset)
            val_acc = evaluate(net, val)[0] if val else None
            rec = EpochRecord(epoch, loss_sum / n, train_acc, val_acc, time.perf_counter() - t0)
            report.epochs.append(rec)
            if sink is not None:
                sink.write(json.dumps(rec.metrics()) + "\n")
                sink.flush()
            log.info("epoch %d loss %.6f train_acc %.4f val_acc %s", epoch, rec.train_loss,
                     train_acc, "n/a" if val_acc is None else f"{val_acc:.4f}")
            if on_epoch is not None:
                on_epoch(rec)
    finally:
        if pool is not None:
            pool.shutdown()
        if sink is not None:
            sink.close()
    return report


def check_gradients(params: dict, loss_fn: Callable[[], float], analytic: dict,
                    step: float = 1e-5, free: Optional[dict] = None) -> dict:
    """Max relative error per tensor between ``analytic`` and central differences.

    Relative error of one entry is ``|a - n| / max(|a|, |n|, 1e-12)``.
    ``loss_fn`` is re-evaluated after each in-place perturbation of
    ``params``. ``free`` optionally maps a tensor name to a boolean mask of
    the entries that are actual degrees of freedom; other entries are skipped.
    """
    report = {}
    for name, arr in params.items():
        a_flat = np.asarray(analytic.get(name, np.zeros(arr.shape))).reshape(-1)
        flat = arr.reshape(-1)
        keep = None if free is None or name not in free else np.asarray(free[name]).reshape(-1)
        worst = 0.0
        for k in range(flat.size):
            if keep is not None and not keep[k]:
                continue
            orig = flat[k]
            flat[k] = orig + step
            lp = loss_fn()
            flat[k] = orig - step
            lm = loss_fn()
            flat[k] = orig
            num = float((lp - lm) / (2 * step))
            a = float(a_flat[k])
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-12))
        report[name] = worst
    return report


def gradient_check_tensors(net: Network, sample: SequenceSample, reg: Optional[RegConfig] = None,
                           step: float = 1e-5, masks: Optional[dict] = None,
                           rng: Optional[np.random.Generator] = None,
                           corrupt: Optional[Callable[[dict], None]] = None,
                           oracle_dtype=np.longdouble) -> dict:
    """Per-tensor max relative error of the full network gradient.

    The numerical side differentiates :func:`deeplstm.reference.reference_loss`,
    an independent transcription of the forward pass, evaluated in
    ``oracle_dtype``. Dropout masks are frozen for the whole check (drawn once
    from ``rng`` when not supplied). ``corrupt`` may mutate the analytic
    gradients before comparison; it exists for negative-control tests.
    """
    T = sample.frames.shape[0]
    if masks is None:
        masks = sample_masks(net, T, np.random.default_rng(0) if rng is None else rng)
    logits, cache = forward(net, sample, "train", masks=masks)
    grads = backward(net, cache, sample.label)
    for name, g in network_penalty_subgradient(net, reg).items():
        grads[name] = grads[name] + g
    if corrupt is not None:
        corrupt(grads)
    P = cast_parameters(net, oracle_dtype)
    free = None
    if net.config.diagonal_peephole:
        free = {name: np.eye(arr.shape[0], dtype=bool) for name, arr in P.items()
                if name.endswith(("W_ci", "W_cf", "W_co"))}

    def loss_fn():
        return reference_loss(net.config, P, sample.frames, sample.label, "train", masks, reg)

    return check_gradients(P, loss_fn, grads, step, free)


def gradient_check(net: Network, sample: SequenceSample, reg: Optional[RegConfig] = None,
                   step: float = 1e-5, masks: Optional[dict] = None,
                   rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error over every parameter entry of the network."""
    return max(gradient_check_tensors(net, sample, reg, step, masks, rng).values())


def evaluate(net: Network, dataset: Sequence[SequenceSample]):
    """Accuracy and confusion matrix (rows: true class, columns: predicted)."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    C = net.config.num_classes
    confusion = np.zeros((C, C), dtype=np.int64)
    for s in dataset:
        confusion[s.label, predict(net, s)] += 1
    return float(np.trace(confusion) / len(dataset)), confusion


@dataclass
class CrossValResult:
    per_fold: list
    mean: float


def assign_folds(n: int, folds: int, fold_ids: Optional[Sequence] = None, seed: int = 0) -> np.ndarray:
    """Fold index in ``0..folds-1`` for each of ``n`` samples.

    ``fold_ids`` (one per sample, ``folds`` distinct values, mapped in sorted
    order) fixes the partition; otherwise a seeded permutation deals samples
    round-robin.
    """
    if folds < 2:
        raise ValueError("need at least two folds")
    if fold_ids is None:
        if folds > n:
            raise ValueError(f"cannot split {n} samples into {folds} folds")
        perm = np.random.default_rng(seed).permutation(n)
        assign = np.empty(n, dtype=np.int64)
        assign[perm] = np.arange(n) % folds
        return assign
    if len(fold_ids) != n:
        raise ValueError("fold_ids must have one entry per sample")
    values = sorted(set(fold_ids))
    if len(values) != folds:
        raise ValueError(f"fold_ids contain {len(values)} distinct folds, expected {folds}")
    index = {v: k for k, v in enumerate(values)}
    return np.array([index[v] for v in fold_ids], dtype=np.int64)


def cross_validate(dataset: Sequence[SequenceSample], folds: int, net_config: NetworkConfig,
                   sgd: SgdConfig, reg: Optional[RegConfig] = None,
                   fold_ids: Optional[Sequence] = None, seed: int = 0,
                   workers: int = 1) -> CrossValResult:
    """Rotate over ``folds`` held-out parts; a fresh network is trained per fold.

    See :func:`assign_folds` for how samples are split.
    """
    assign = assign_folds(len(dataset), folds, fold_ids, seed)
    classes = set(range(net_config.num_classes))
    accs = []
    for f in range(folds):
        train_set = [s for s, a in zip(dataset, assign) if a != f]
        test_set = [s for s, a in zip(dataset, assign) if a == f]
        missing = classes - {s.label for s in train_set}
        if missing:
            warnings.warn(f"fold {f}: classes {sorted(missing)} absent from the training split")
        # every fold starts from the same seeded state
        rng = np.random.default_rng(seed)
        net = Network.initialize(net_config, rng)
        train(net, train_set, sgd, reg, rng=rng, workers=workers)
        accs.append(evaluate(net, test_set)[0])
    return CrossValResult(per_fold=accs, mean=float(np.mean(accs)))

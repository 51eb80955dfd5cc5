"""Co-occurrence regularization: an l1 term plus a grouped l2,1 term.

The ``N`` rows (neurons) of an input weight matrix ``W`` of shape ``(N, J)``
are split into ``K`` contiguous groups of ``L = ceil(N / K)`` rows (the last
group takes the remainder). For every group the penalty sums, over input
columns, the Euclidean norm of that column restricted to the group. This
drives each group of neurons to use a small set of inputs (joints/features).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .tensor_core import as_matrix

__all__ = [
    "GroupSpec",
    "RegConfig",
    "partition_groups",
    "l21_of_transpose",
    "penalty_value",
    "penalty_subgradient",
    "group_column_energy",
    "informative_energy_fraction",
]


@dataclass(frozen=True)
class GroupSpec:
    N: int
    K: int
    boundaries: tuple[range, ...]

    @property
    def group_size(self) -> int:
        return math.ceil(self.N / self.K)


@dataclass
class RegConfig:
    """Weights of the two penalty terms and which layers they apply to.

    ``target_layers`` are indices into the network's layer list and
    ``groups_per_layer`` gives the group count ``K`` for each of them.
    """

    lambda1: float = 5e-4
    lambda2: float = 5e-4
    target_layers: tuple[int, ...] = (0, 1, 2)
    groups_per_layer: tuple[int, ...] = (5, 10, 10)

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        self.target_layers = tuple(int(i) for i in self.target_layers)
        self.groups_per_layer = tuple(int(k) for k in self.groups_per_layer)
        if len(self.target_layers) != len(self.groups_per_layer):
            raise ValueError("target_layers and groups_per_layer must have equal length")

    @property
    def active(self) -> bool:
        return (self.lambda1 > 0 or self.lambda2 > 0) and bool(self.target_layers)

    def groups_for(self, layer: int) -> int:
        return self.groups_per_layer[self.target_layers.index(layer)]


def partition_groups(N: int, K: int) -> GroupSpec:
    if K < 1 or K > N:
        raise ValueError(f"group count K={K} must satisfy 1 <= K <= N={N}")
    L = math.ceil(N / K)
    bounds = tuple(range(k * L, min((k + 1) * L, N)) for k in range(K))
    if any(len(r) == 0 for r in bounds):
        # e.g. N=10, K=6: L=2 leaves the sixth block empty
        raise ValueError(f"N={N} cannot be split into K={K} nonempty groups of ceil(N/K)={L} rows")
    return GroupSpec(N=N, K=K, boundaries=bounds)


def l21_of_transpose(W, rows: range) -> float:
    """Sum over columns of the Euclidean norm of ``W[rows, j]``."""
    W = as_matrix(W, "W")
    if len(rows) == 0:
        raise ValueError("empty row range")
    if rows.start < 0 or rows.stop > W.shape[0]:
        raise ValueError(f"row range {rows} outside matrix with {W.shape[0]} rows")
    block = W[rows.start:rows.stop]
    return float(np.sqrt((block * block).sum(axis=0)).sum())


def _layer_penalty(mats: Mapping[str, np.ndarray], spec: GroupSpec, lambda1, lambda2) -> float:
    l1 = 0.0
    l21 = 0.0
    for W in mats.values():
        W = as_matrix(W)
        if W.shape[0] != spec.N:
            raise ValueError(f"matrix with {W.shape[0]} rows does not match GroupSpec N={spec.N}")
        l1 += float(np.abs(W).sum())
        l21 += sum(l21_of_transpose(W, r) for r in spec.boundaries)
    return lambda1 * l1 + lambda2 * l21


def penalty_value(layers: Iterable, cfg: RegConfig, required: Sequence[str] | None = None) -> float:
    """Total penalty over ``layers``.

    Each layer is a pair ``(matrices, spec)`` where ``matrices`` maps unit
    type to input weight matrix: ``{i, f, c, o}`` for an LSTM direction,
    ``{h}`` for a feedforward layer. ``required`` optionally names the unit
    types every layer must supply.
    """
    total = 0.0
    for mats, spec in layers:
        if required is not None:
            missing = [b for b in required if b not in mats]
            if missing:
                raise ValueError(f"layer is missing input weights for units {missing}")
        if not mats:
            raise ValueError("layer supplies no input weight matrices")
        total += _layer_penalty(mats, spec, cfg.lambda1, cfg.lambda2)
    return total


def penalty_subgradient(W, spec: GroupSpec, lambda1: float, lambda2: float) -> np.ndarray:
    """Minimum-norm subgradient of the penalty for one matrix.

    ``sign(0) = 0`` and a group column with zero norm contributes nothing.
    """
    W = as_matrix(W, "W")
    G = lambda1 * np.sign(W)
    if lambda2 != 0.0:
        for r in spec.boundaries:
            block = W[r.start:r.stop]
            norms = np.sqrt((block * block).sum(axis=0))
            scale = np.divide(lambda2, norms, out=np.zeros_like(norms), where=norms > 0)
            G[r.start:r.stop] += block * scale
    return G


def group_column_energy(W, spec: GroupSpec) -> np.ndarray:
    """``(K, J)`` root-mean-square of ``W`` over each group's rows, per column."""
    W = as_matrix(W, "W")
    return np.array([np.sqrt((W[r.start:r.stop] ** 2).mean(axis=0)) for r in spec.boundaries])


def informative_energy_fraction(W, spec: GroupSpec, columns: Sequence[int]) -> float:
    """Share of squared weight mass lying in ``columns``, averaged over groups."""
    W = as_matrix(W, "W")
    cols = np.asarray(list(columns), dtype=int)
    fracs = []
    for r in spec.boundaries:
        energy = (W[r.start:r.stop] ** 2).sum(axis=0)
        total = energy.sum()
        fracs.append(energy[cols].sum() / total if total > 0 else 0.0)
    return float(np.mean(fracs))

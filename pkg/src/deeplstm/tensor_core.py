"""Dense float64 kernel shared by every layer.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64
(row-major). The helpers here only add shape checking and the two
nonlinearities used by the LSTM equations.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "as_matrix",
    "as_vector",
    "matvec",
    "sigmoid",
    "tanh_vec",
    "activation_derivative",
    "ShapeError",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not line up."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def as_vector(a, name: str = "vector") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def matvec(W, x) -> np.ndarray:
    """Return ``W @ x`` after checking that ``W.cols == len(x)``."""
    W = as_matrix(W, "W")
    x = as_vector(x, "x")
    if W.shape[1] != x.shape[0]:
        raise ShapeError(
            f"cannot multiply matrix of shape {W.shape} by vector of shape {x.shape}"
        )
    return W @ x


def sigmoid(x) -> np.ndarray:
    # expit saturates without overflow warnings for large |x|
    return expit(np.asarray(x, dtype=np.float64))


def tanh_vec(x) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


def activation_derivative(kind: str, y) -> np.ndarray:
    """Derivative of an activation expressed through its output ``y``.

    ``sigmoid``: y * (1 - y); ``tanh``: 1 - y**2.
    """
    y = np.asarray(y, dtype=np.float64)
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "tanh":
        return 1.0 - y * y
    raise ValueError(f"unknown activation kind {kind!r}; expected 'sigmoid' or 'tanh'")

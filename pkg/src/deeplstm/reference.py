"""Straight-line reference forward pass, used as an independent oracle.

Nothing here is shared with :mod:`deeplstm.recurrent`: every gate is
written out separately, one timestep at a time, and every array is cast to a
caller-chosen dtype. Running it in ``numpy.longdouble`` (80-bit extended
precision on x86-64) lowers the rounding noise of the loss by about three
orders of magnitude, which is what lets central differences with a step of
1e-5 resolve gradient entries far smaller than 1e-5.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .cooccurrence import RegConfig, partition_groups

__all__ = ["reference_logits", "reference_loss", "reference_penalty", "cast_parameters"]


def cast_parameters(net, dtype=np.longdouble) -> dict:
    return {name: np.array(arr, dtype=dtype) for name, arr in net.named_parameters()}


def _sig(z):
    return 1 / (1 + np.exp(-z))


def _direction(P: dict, pre: str, X, masks, keep, dtype):
    W = {k: P[pre + k] for k in ("W_xi", "W_xf", "W_xc", "W_xo", "W_hi", "W_hf", "W_hc",
                                 "W_ho", "W_ci", "W_cf", "W_co", "b_i", "b_f", "b_c", "b_o")}
    N = W["b_i"].shape[0]
    h = np.zeros(N, dtype=dtype)
    c = np.zeros(N, dtype=dtype)
    outs = []
    for t in range(X.shape[0]):
        x = X[t]
        if masks is not None:
            mi, mf, mc, mo, mh = (np.asarray(m[t], dtype=dtype) for m in masks.as_tuple())
        elif keep is not None:
            mi = mf = mc = mo = mh = dtype(keep)
        else:
            mi = mf = mc = mo = mh = None
        # clean path, carried through time
        i = _sig(W["W_xi"] @ x + W["W_hi"] @ h + W["W_ci"] @ c + W["b_i"])
        f = _sig(W["W_xf"] @ x + W["W_hf"] @ h + W["W_cf"] @ c + W["b_f"])
        cin = np.tanh(W["W_xc"] @ x + W["W_hc"] @ h + W["b_c"])
        c_new = f * c + i * cin
        o = _sig(W["W_xo"] @ x + W["W_ho"] @ h + W["W_co"] @ c_new + W["b_o"])
        h_new = o * np.tanh(c_new)
        if mi is None:
            outs.append(h_new)
        else:
            # masked path, handed to the next layer
            i_d = _sig(W["W_xi"] @ x + W["W_hi"] @ h + W["W_ci"] @ c + W["b_i"]) * mi
            f_d = _sig(W["W_xf"] @ x + W["W_hf"] @ h + W["W_cf"] @ c + W["b_f"]) * mf
            c_d = (f_d * c + i_d * cin) * mc
            o_d = _sig(W["W_xo"] @ x + W["W_ho"] @ h + W["W_co"] @ c_d + W["b_o"]) * mo
            outs.append(o_d * np.tanh(c_d) * mh)
        h, c = h_new, c_new
    return np.array(outs, dtype=dtype)


def reference_logits(config, P: dict, frames, mode: str = "eval", masks: Optional[dict] = None,
                     dtype=None):
    """Logits of the configured stack computed from the parameter dict ``P``."""
    dtype = dtype or next(iter(P.values())).dtype.type
    X = np.array(frames, dtype=dtype)
    masks = masks or {}
    for idx, spec in enumerate(config.layers):
        if spec.kind == "feedforward":
            W, b = P[f"L{idx}.W"], P[f"L{idx}.b"]
            X = np.array([np.tanh(W @ x + b) for x in X], dtype=dtype)
            continue
        mf = mb = None
        keep = None
        if spec.dropout and mode == "train":
            mf, mb = masks.get(idx, (None, None))
        elif spec.dropout:
            keep = 1 - config.dropout_p
        Hf = _direction(P, f"L{idx}.fwd.", X, mf, keep, dtype)
        Hb = _direction(P, f"L{idx}.bwd.", X[::-1], mb, keep, dtype)[::-1]
        X = np.concatenate([Hf, Hb], axis=1)
    N = config.layers[-1].units
    o = np.zeros(config.num_classes, dtype=dtype)
    for t in range(X.shape[0]):
        o = o + P["out.W_fwd"] @ X[t, :N] + P["out.W_bwd"] @ X[t, N:] + P["out.b"]
    return o


def reference_penalty(config, P: dict, reg: Optional[RegConfig]):
    if reg is None:
        return 0
    total = 0
    for idx, K in zip(reg.target_layers, reg.groups_per_layer):
        spec = config.layers[idx]
        if spec.kind == "blstm":
            mats = [P[f"L{idx}.{d}.W_x{u}"] for d in ("fwd", "bwd") for u in "ifco"]
        else:
            mats = [P[f"L{idx}.W"]]
        for W in mats:
            gs = partition_groups(W.shape[0], K)
            total = total + reg.lambda1 * np.abs(W).sum()
            for r in gs.boundaries:
                for j in range(W.shape[1]):
                    total = total + reg.lambda2 * np.sqrt((W[r.start:r.stop, j] ** 2).sum())
    return total


def reference_loss(config, P: dict, frames, label: int, mode: str = "train",
                   masks: Optional[dict] = None, reg: Optional[RegConfig] = None):
    o = reference_logits(config, P, frames, mode, masks)
    m = o.max()
    lse = m + np.log(np.exp(o - m).sum())
    return (lse - o[int(label)]) + reference_penalty(config, P, reg)

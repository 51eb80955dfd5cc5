"""LSTM layer mechanics with peepholes and two-path (in-depth) dropout.

Every LSTM step computes two families of activations from the same inputs:

* the *clean* path (``i, f, c, o, h``), which is what the layer carries to the
  next timestep and is never masked;
* the *dropped* path (``i_d, f_d, c_d, o_d, h_d``), in which the gates, the
  cell and the output response are multiplied by binary masks. Only this
  path is handed to the layer above.

The dropped gates share their pre-activations with the clean gates (both read
``x_t``, the clean ``h_{t-1}`` and the clean ``c_{t-1}``); the dropped output
gate is the one exception because its peephole reads the dropped cell.

When no masks are active the dropped fields are the clean arrays themselves,
and the backward pass folds the error from the layer above into the
recurrent error so that a single-path LSTM backward is executed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .tensor_core import ShapeError, as_matrix, as_vector, sigmoid

__all__ = [
    "LSTM_TENSORS",
    "LstmParams",
    "LstmStepState",
    "DropoutMasks",
    "BackwardErrors",
    "FeedforwardParams",
    "LstmSequenceCache",
    "BidirectionalCache",
    "lstm_step_forward",
    "lstm_step_forward_dropout",
    "lstm_step_forward_inference",
    "lstm_step_backward",
    "lstm_forward_sequence",
    "lstm_backward_sequence",
    "bidirectional_forward",
    "bidirectional_backward",
    "feedforward_forward",
    "feedforward_backward",
    "masks_sample",
]

LSTM_TENSORS = (
    "W_xi", "W_xf", "W_xc", "W_xo",
    "W_hi", "W_hf", "W_hc", "W_ho",
    "W_ci", "W_cf", "W_co",
    "b_i", "b_f", "b_c", "b_o",
)
_INPUT = ("W_xi", "W_xf", "W_xc", "W_xo")
_RECUR = ("W_hi", "W_hf", "W_hc", "W_ho")
_PEEP = ("W_ci", "W_cf", "W_co")
_BIAS = ("b_i", "b_f", "b_c", "b_o")


@dataclass
class LstmParams:
    """Weights of one directional LSTM layer with ``N`` units and input width ``J``.

    Peephole matrices are full ``N x N`` by default. With
    ``diagonal_peephole=True`` their off-diagonal entries are held at zero and
    receive zero gradient.
    """

    W_xi: np.ndarray
    W_xf: np.ndarray
    W_xc: np.ndarray
    W_xo: np.ndarray
    W_hi: np.ndarray
    W_hf: np.ndarray
    W_hc: np.ndarray
    W_ho: np.ndarray
    W_ci: np.ndarray
    W_cf: np.ndarray
    W_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    diagonal_peephole: bool = False

    def __post_init__(self):
        for name in LSTM_TENSORS:
            arr = getattr(self, name)
            if not (isinstance(arr, np.ndarray) and arr.dtype == np.float64):
                setattr(self, name, np.array(arr, dtype=np.float64))
        N, J = self.W_xi.shape if self.W_xi.ndim == 2 else (-1, -1)
        for name in _INPUT:
            _expect(name, getattr(self, name), (N, J))
        for name in _RECUR + _PEEP:
            _expect(name, getattr(self, name), (N, N))
        for name in _BIAS:
            _expect(name, getattr(self, name), (N,))
        for name in LSTM_TENSORS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")
        if self.diagonal_peephole:
            mask = np.eye(N)
            for name in _PEEP:
                getattr(self, name)[...] *= mask

    @property
    def N(self) -> int:
        return self.W_xi.shape[0]

    @property
    def J(self) -> int:
        return self.W_xi.shape[1]

    @classmethod
    def initialize(cls, N: int, J: int, rng: np.random.Generator, scale: float = 0.1,
                   forget_bias: float = 1.0, diagonal_peephole: bool = False) -> "LstmParams":
        """Uniform(-scale, scale) weights, zero biases except ``b_f``."""
        arrays = {}
        for name in _INPUT:
            arrays[name] = rng.uniform(-scale, scale, size=(N, J))
        for name in _RECUR + _PEEP:
            arrays[name] = rng.uniform(-scale, scale, size=(N, N))
        for name in _BIAS:
            arrays[name] = np.zeros(N)
        arrays["b_f"][:] = forget_bias
        return cls(**arrays, diagonal_peephole=diagonal_peephole)

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in LSTM_TENSORS]

    def input_weights(self) -> dict[str, np.ndarray]:
        """The four input matrices keyed by unit type (i, f, c, o)."""
        return {name[-1]: getattr(self, name) for name in _INPUT}

    def stacked(self) -> "_Stacked":
        return _Stacked(
            Wx=np.vstack([self.W_xi, self.W_xf, self.W_xc, self.W_xo]),
            Wh=np.vstack([self.W_hi, self.W_hf, self.W_hc, self.W_ho]),
            Wcif=np.vstack([self.W_ci, self.W_cf]),
            Wco=self.W_co,
            b=np.concatenate([self.b_i, self.b_f, self.b_c, self.b_o]),
        )


def _expect(name, arr, shape):
    if arr.shape != tuple(shape):
        raise ShapeError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")


class _Stacked(NamedTuple):
    Wx: np.ndarray    # (4N, J) rows ordered i, f, c, o
    Wh: np.ndarray    # (4N, N)
    Wcif: np.ndarray  # (2N, N) peepholes into i and f
    Wco: np.ndarray   # (N, N)
    b: np.ndarray     # (4N,)


@dataclass
class DropoutMasks:
    """Binary masks for input gates, forget gates, cells, output gates and outputs.

    Arrays are ``(N,)`` for a single step or ``(T, N)`` for a whole sequence.
    """

    m_i: np.ndarray
    m_f: np.ndarray
    m_c: np.ndarray
    m_o: np.ndarray
    m_h: np.ndarray
    p: float = 0.0

    def as_tuple(self) -> tuple:
        return (self.m_i, self.m_f, self.m_c, self.m_o, self.m_h)

    def step(self, t: int) -> "DropoutMasks":
        return DropoutMasks(*(m[t] for m in self.as_tuple()), p=self.p)

    def all_ones(self) -> bool:
        return all(bool(np.all(m == 1.0)) for m in self.as_tuple())

    @classmethod
    def ones(cls, shape) -> "DropoutMasks":
        return cls(*(np.ones(shape) for _ in range(5)), p=0.0)


def masks_sample(rng: np.random.Generator, p: float, N: int, T: Optional[int] = None) -> DropoutMasks:
    """Draw five independent Bernoulli(1 - p) masks (order i, f, c, o, h)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    shape = (N,) if T is None else (T, N)
    draws = [(rng.random(shape) >= p).astype(np.float64) for _ in range(5)]
    return DropoutMasks(*draws, p=p)


@dataclass(slots=True)
class LstmStepState:
    """Everything one forward step produced, as needed by its backward step."""

    i: np.ndarray
    f: np.ndarray
    c: np.ndarray
    o: np.ndarray
    h: np.ndarray
    i_d: np.ndarray
    f_d: np.ndarray
    c_d: np.ndarray
    o_d: np.ndarray
    h_d: np.ndarray
    g: np.ndarray
    tanh_c: np.ndarray
    tanh_cd: np.ndarray
    o_dpre: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    masks: Optional[tuple] = None
    x: Optional[np.ndarray] = None


@dataclass
class BackwardErrors:
    """Per-unit errors of one step, summed over the dropped and clean paths.

    ``eps_h == eps_h_hier * m_h + eps_h_recur``. ``h_prev``/``c_prev`` are the
    errors handed to step ``t-1``; ``x`` goes to the layer below.
    """

    eps_h: np.ndarray
    eps_o: np.ndarray
    eps_c: np.ndarray
    eps_f: np.ndarray
    eps_i: np.ndarray
    eps_h_hier: np.ndarray
    eps_h_recur: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    x: Optional[np.ndarray] = None


def _step(S: _Stacked, xp, h_prev, c_prev, masks) -> LstmStepState:
    # xp = Wx @ x_t, precomputed by the caller
    N = h_prev.shape[0]
    a = xp + S.Wh @ h_prev + S.b
    pc = S.Wcif @ c_prev
    i = sigmoid(a[:N] + pc[:N])
    f = sigmoid(a[N:2 * N] + pc[N:])
    g = np.tanh(a[2 * N:3 * N])
    base_o = a[3 * N:]
    c = f * c_prev + i * g
    o = sigmoid(base_o + S.Wco @ c)
    tanh_c = np.tanh(c)
    h = o * tanh_c
    if masks is None:
        return LstmStepState(i, f, c, o, h, i, f, c, o, h, g, tanh_c, tanh_c, o,
                             h_prev, c_prev, None)
    m_i, m_f, m_c, m_o, m_h = masks
    i_d = i * m_i
    f_d = f * m_f
    c_d = (f_d * c_prev + i_d * g) * m_c
    o_dpre = sigmoid(base_o + S.Wco @ c_d)
    o_d = o_dpre * m_o
    tanh_cd = np.tanh(c_d)
    h_d = o_d * tanh_cd * m_h
    return LstmStepState(i, f, c, o, h, i_d, f_d, c_d, o_d, h_d, g, tanh_c, tanh_cd, o_dpre,
                         h_prev, c_prev, masks)


class _StepGrads(NamedTuple):
    da: np.ndarray            # (4N,) pre-activation errors feeding Wx, Wh, b
    da_o: np.ndarray          # clean-path output-gate pre-activation error
    da_od: Optional[np.ndarray]  # dropped-path output-gate pre-activation error
    dh_prev: np.ndarray
    dc_prev: np.ndarray
    eps: tuple                # (eps_h, eps_o, eps_c, eps_f, eps_i)


def _step_backward(S: _Stacked, st: LstmStepState, dh_hier, dh_recur, dc_carry) -> _StepGrads:
    N = st.c.shape[0]
    i, f, g, o = st.i, st.f, st.g, st.o
    if st.masks is None:
        eh = dh_hier + dh_recur
        eo = eh * st.tanh_c
        da_o = eo * o * (1.0 - o)
        ec = dc_carry + eh * o * (1.0 - st.tanh_c * st.tanh_c) + S.Wco.T @ da_o
        ei = ec * g
        ef = ec * st.c_prev
        dg = ec * i
        dc_prev = ec * f
        da_od = None
        da_o_all = da_o
    else:
        m_i, m_f, m_c, m_o, m_h = st.masks
        # dropped path: errors arriving from the layer above, gated by each mask
        eh_d = dh_hier * m_h
        eo_d = eh_d * st.tanh_cd * m_o
        da_od = eo_d * st.o_dpre * (1.0 - st.o_dpre)
        ec_d = (eh_d * st.o_d * (1.0 - st.tanh_cd * st.tanh_cd) + S.Wco.T @ da_od) * m_c
        # clean path: errors arriving from step t+1, never gated
        eo_c = dh_recur * st.tanh_c
        da_o = eo_c * o * (1.0 - o)
        ec_c = dc_carry + dh_recur * o * (1.0 - st.tanh_c * st.tanh_c) + S.Wco.T @ da_o
        ei = ec_c * g + ec_d * g * m_i
        ef = ec_c * st.c_prev + ec_d * st.c_prev * m_f
        dg = ec_c * i + ec_d * st.i_d
        dc_prev = ec_c * f + ec_d * st.f_d
        eh = eh_d + dh_recur
        eo = eo_d + eo_c
        ec = ec_d + ec_c
        da_o_all = da_o + da_od
    da_i = ei * i * (1.0 - i)
    da_f = ef * f * (1.0 - f)
    da_c = dg * (1.0 - g * g)
    da = np.concatenate([da_i, da_f, da_c, da_o_all])
    dh_prev = S.Wh.T @ da
    dc_prev = dc_prev + S.Wcif.T @ da[:2 * N]
    return _StepGrads(da, da_o, da_od, dh_prev, dc_prev, (eh, eo, ec, ef, ei))


def _check_step_inputs(params: LstmParams, x_t, h_prev, c_prev):
    x_t = as_vector(x_t, "x_t")
    h_prev = as_vector(h_prev, "h_prev")
    c_prev = as_vector(c_prev, "c_prev")
    if x_t.shape[0] != params.J:
        raise ShapeError(f"x_t has length {x_t.shape[0]}, layer expects J={params.J}")
    for name, v in (("h_prev", h_prev), ("c_prev", c_prev)):
        if v.shape[0] != params.N:
            raise ShapeError(f"{name} has length {v.shape[0]}, layer expects N={params.N}")
    return x_t, h_prev, c_prev


def _mask_tuple(masks: Optional[DropoutMasks], N: int):
    if masks is None:
        return None
    tup = tuple(np.asarray(m, dtype=np.float64) for m in masks.as_tuple())
    for m in tup:
        if m.shape[-1] != N:
            raise ShapeError(f"mask of shape {m.shape} does not match N={N}")
    if all(bool(np.all(m == 1.0)) for m in tup):
        # all-ones masks: dropped path coincides with the clean path
        return None
    return tup


def lstm_step_forward(params: LstmParams, x_t, h_prev, c_prev) -> LstmStepState:
    """One peephole-LSTM step without dropout; dropped fields alias the clean ones."""
    x_t, h_prev, c_prev = _check_step_inputs(params, x_t, h_prev, c_prev)
    S = params.stacked()
    st = _step(S, S.Wx @ x_t, h_prev, c_prev, None)
    st.x = x_t
    return st


def lstm_step_forward_dropout(params: LstmParams, x_t, h_prev_clean, c_prev_clean,
                              masks: DropoutMasks) -> LstmStepState:
    x_t, h_prev, c_prev = _check_step_inputs(params, x_t, h_prev_clean, c_prev_clean)
    tup = _mask_tuple(masks, params.N)
    if tup is not None:
        for m in tup:
            if not np.all((m == 0.0) | (m == 1.0)):
                raise ValueError("dropout masks must be binary")
    S = params.stacked()
    st = _step(S, S.Wx @ x_t, h_prev, c_prev, tup)
    st.x = x_t
    return st


def lstm_step_forward_inference(params: LstmParams, x_t, h_prev_clean, c_prev_clean,
                                p: float) -> LstmStepState:
    """Test-time step: each mask is replaced by the constant ``1 - p``.

    The clean path is left unscaled, so only the output handed upward is
    attenuated.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    x_t, h_prev, c_prev = _check_step_inputs(params, x_t, h_prev_clean, c_prev_clean)
    S = params.stacked()
    keep = 1.0 - p
    st = _step(S, S.Wx @ x_t, h_prev, c_prev, None if p == 0.0 else (keep,) * 5)
    st.x = x_t
    return st


def _split_rows(mat: np.ndarray, names: Sequence[str], N: int) -> dict:
    return {name: mat[k * N:(k + 1) * N] for k, name in enumerate(names)}


def _peephole_grads(da_i, da_f, da_o, da_od, c_prev, c, c_d, outer) -> dict:
    g = {"W_ci": outer(da_i, c_prev), "W_cf": outer(da_f, c_prev), "W_co": outer(da_o, c)}
    if da_od is not None:
        g["W_co"] = g["W_co"] + outer(da_od, c_d)
    return g


def lstm_step_backward(params: LstmParams, cached: LstmStepState, eps_h_hier, eps_h_recur,
                       eps_c_carry=None) -> tuple[dict, BackwardErrors]:
    """Backward through one step.

    ``eps_h_hier`` is the error on the output handed to the layer above,
    ``eps_h_recur`` the error on the clean ``h_t`` coming from step ``t+1``
    and ``eps_c_carry`` the error on the clean ``c_t`` coming from step
    ``t+1``. Returns this step's parameter gradients and the outgoing errors.
    """
    if cached is None or cached.x is None:
        raise ValueError("lstm_step_backward needs the cached state of a forward step")
    if isinstance(cached.masks, tuple) and any(np.ndim(m) == 0 for m in cached.masks):
        raise ValueError("cannot back-propagate through an inference-mode step")
    N = params.N
    eps_h_hier = as_vector(eps_h_hier, "eps_h_hier")
    eps_h_recur = as_vector(eps_h_recur, "eps_h_recur")
    eps_c_carry = np.zeros(N) if eps_c_carry is None else as_vector(eps_c_carry, "eps_c_carry")
    S = params.stacked()
    sg = _step_backward(S, cached, eps_h_hier, eps_h_recur, eps_c_carry)
    grads = {}
    grads.update(_split_rows(np.outer(sg.da, cached.x), _INPUT, N))
    grads.update(_split_rows(np.outer(sg.da, cached.h_prev), _RECUR, N))
    grads.update(_split_rows(sg.da, _BIAS, N))
    grads.update(_peephole_grads(sg.da[:N], sg.da[N:2 * N], sg.da_o, sg.da_od,
                                 cached.c_prev, cached.c, cached.c_d, np.outer))
    if params.diagonal_peephole:
        for name in _PEEP:
            grads[name] = grads[name] * np.eye(N)
    eps_h, eps_o, eps_c, eps_f, eps_i = sg.eps
    errors = BackwardErrors(eps_h=eps_h, eps_o=eps_o, eps_c=eps_c, eps_f=eps_f, eps_i=eps_i,
                            eps_h_hier=eps_h_hier, eps_h_recur=eps_h_recur,
                            h_prev=sg.dh_prev, c_prev=sg.dc_prev, x=S.Wx.T @ sg.da)
    return grads, errors


@dataclass
class LstmSequenceCache:
    X: np.ndarray
    states: list
    train: bool


def lstm_forward_sequence(params: LstmParams, X, masks: Optional[DropoutMasks] = None,
                          keep_prob: Optional[float] = None):
    """Unroll one direction over ``X`` of shape ``(T, J)``.

    ``masks`` (arrays of shape ``(T, N)``) selects training-mode dropout;
    ``keep_prob`` selects inference-mode scaling. Returns the per-step outputs
    handed upward (dropped path), shape ``(T, N)``, and a cache for backward.
    """
    X = as_matrix(X, "X")
    T, J = X.shape
    if T == 0:
        raise ValueError("empty sequence")
    if J != params.J:
        raise ShapeError(f"input width {J} does not match layer input width {params.J}")
    if masks is not None and keep_prob is not None:
        raise ValueError("pass either masks (training) or keep_prob (inference), not both")
    N = params.N
    S = params.stacked()
    XP = X @ S.Wx.T
    tup = _mask_tuple(masks, N)
    if tup is not None and tup[0].shape != (T, N):
        raise ShapeError(f"sequence masks must have shape {(T, N)}, got {tup[0].shape}")
    step_masks = None
    if keep_prob is not None and keep_prob != 1.0:
        step_masks = (float(keep_prob),) * 5
    h = np.zeros(N)
    c = np.zeros(N)
    states = []
    out = np.empty((T, N))
    for t in range(T):
        m = step_masks if tup is None else tuple(mm[t] for mm in tup)
        st = _step(S, XP[t], h, c, m)
        states.append(st)
        out[t] = st.h_d
        h, c = st.h, st.c
    return out, LstmSequenceCache(X=X, states=states, train=keep_prob is None)


def lstm_backward_sequence(params: LstmParams, cache: LstmSequenceCache, dH):
    """Full BPTT for one direction given errors ``dH`` on its upward outputs.

    Returns (gradient dict keyed like ``LSTM_TENSORS``, ``dX`` of shape (T, J)).
    """
    if cache is None or not cache.states:
        raise ValueError("missing forward cache")
    if not cache.train:
        raise ValueError("backward requires a training-mode forward cache")
    N = params.N
    T = len(cache.states)
    dH = as_matrix(dH, "dH")
    if dH.shape != (T, N):
        raise ShapeError(f"dH has shape {dH.shape}, expected {(T, N)}")
    S = params.stacked()
    DA = np.empty((T, 4 * N))
    DAo = np.empty((T, N))
    DAod = np.zeros((T, N))
    dropped = False
    dh = np.zeros(N)
    dc = np.zeros(N)
    for t in range(T - 1, -1, -1):
        sg = _step_backward(S, cache.states[t], dH[t], dh, dc)
        DA[t] = sg.da
        DAo[t] = sg.da_o
        if sg.da_od is not None:
            DAod[t] = sg.da_od
            dropped = True
        dh, dc = sg.dh_prev, sg.dc_prev
    Hprev = np.array([st.h_prev for st in cache.states])
    Cprev = np.array([st.c_prev for st in cache.states])
    C = np.array([st.c for st in cache.states])
    grads = {}
    grads.update(_split_rows(DA.T @ cache.X, _INPUT, N))
    grads.update(_split_rows(DA.T @ Hprev, _RECUR, N))
    grads.update(_split_rows(DA.sum(axis=0), _BIAS, N))
    grads["W_ci"] = DA[:, :N].T @ Cprev
    grads["W_cf"] = DA[:, N:2 * N].T @ Cprev
    grads["W_co"] = DAo.T @ C
    if dropped:
        Cd = np.array([st.c_d for st in cache.states])
        grads["W_co"] = grads["W_co"] + DAod.T @ Cd
    if params.diagonal_peephole:
        for name in _PEEP:
            grads[name] = grads[name] * np.eye(N)
    dX = DA @ S.Wx
    return grads, dX


@dataclass
class BidirectionalCache:
    fwd: LstmSequenceCache
    bwd: LstmSequenceCache


def bidirectional_forward(fwd: LstmParams, bwd: LstmParams, inputs, masks=(None, None),
                          keep_prob: Optional[float] = None):
    """Run both directions and concatenate ``[h_fwd_t ; h_bwd_t]`` per step.

    ``masks`` is a pair of sequence masks; the backward direction's masks are
    indexed in its own processing order (reversed time).
    """
    X = as_matrix(inputs, "inputs")
    if X.shape[0] == 0:
        raise ValueError("empty sequence")
    if fwd.N != bwd.N or fwd.J != bwd.J:
        raise ShapeError("forward and backward directions must share N and J")
    Hf, cf = lstm_forward_sequence(fwd, X, masks[0], keep_prob)
    Hb, cb = lstm_forward_sequence(bwd, np.ascontiguousarray(X[::-1]), masks[1], keep_prob)
    return np.concatenate([Hf, Hb[::-1]], axis=1), BidirectionalCache(cf, cb)


def bidirectional_backward(fwd: LstmParams, bwd: LstmParams, cache: BidirectionalCache, dY):
    N = fwd.N
    dY = as_matrix(dY, "dY")
    gf, dXf = lstm_backward_sequence(fwd, cache.fwd, dY[:, :N])
    gb, dXb = lstm_backward_sequence(bwd, cache.bwd, np.ascontiguousarray(dY[::-1, N:]))
    return gf, gb, dXf + dXb[::-1]


@dataclass
class FeedforwardParams:
    W: np.ndarray
    b: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.W = as_matrix(self.W, "W")
        self.b = as_vector(self.b, "b")
        if self.b.shape[0] != self.W.shape[0]:
            raise ShapeError(f"bias length {self.b.shape[0]} does not match W rows {self.W.shape[0]}")
        if self.activation not in _FF_ACT:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def initialize(cls, M: int, J: int, rng: np.random.Generator, scale: float = 0.1,
                   activation: str = "tanh") -> "FeedforwardParams":
        return cls(rng.uniform(-scale, scale, size=(M, J)), np.zeros(M), activation)

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [("W", self.W), ("b", self.b)]


_FF_ACT = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "sigmoid": (sigmoid, lambda y: y * (1.0 - y)),
    "identity": (lambda z: z, lambda y: np.ones_like(y)),
}


def feedforward_forward(params: FeedforwardParams, x) -> np.ndarray:
    """``activation(W x + b)`` for a vector, or row-wise for a ``(T, J)`` matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.W.shape[1]:
        raise ShapeError(f"input of shape {x.shape} does not match W of shape {params.W.shape}")
    act, _ = _FF_ACT[params.activation]
    if x.ndim == 1:
        return act(params.W @ x + params.b)
    return act(x @ params.W.T + params.b)


def feedforward_backward(params: FeedforwardParams, X, Y, dY):
    """Gradients for a row-wise feedforward layer; returns (grads, dX)."""
    _, dact = _FF_ACT[params.activation]
    dZ = dY * dact(Y)
    if dZ.ndim == 1:
        return {"W": np.outer(dZ, X), "b": dZ}, params.W.T @ dZ
    return {"W": dZ.T @ X, "b": dZ.sum(axis=0)}, dZ @ params.W

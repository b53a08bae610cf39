"""Peephole LSTM cell, forward pass only."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class LstmParams:
    """Gate weights; the ``w_c*`` peepholes are vectors acting element-wise."""

    w_xi: np.ndarray
    w_hi: np.ndarray
    w_ci: np.ndarray
    w_xf: np.ndarray
    w_hf: np.ndarray
    w_cf: np.ndarray
    w_xc: np.ndarray
    w_hc: np.ndarray
    w_xo: np.ndarray
    w_ho: np.ndarray
    w_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        h = self.hidden_size
        d = self.input_size
        for gate in "ifco":
            if self.__dict__[f"w_x{gate}"].shape != (h, d):
                raise ValueError(f"w_x{gate} must have shape ({h}, {d})")
            if self.__dict__[f"w_h{gate}"].shape != (h, h):
                raise ValueError(f"w_h{gate} must have shape ({h}, {h})")
            if self.__dict__[f"b_{gate}"].shape != (h,):
                raise ValueError(f"b_{gate} must have shape ({h},)")
        for gate in "ifo":
            if self.__dict__[f"w_c{gate}"].shape != (h,):
                raise ValueError(f"peephole w_c{gate} must be a vector of length {h}")

    @property
    def hidden_size(self) -> int:
        return self.b_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_xi.shape[1]

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmParams":
        return cls.from_dict({
            name: np.zeros(shape) for name, shape in _shapes(input_size, hidden_size).items()
        })

    @classmethod
    def random(cls, input_size: int, hidden_size: int, rng: np.random.Generator, scale: float = 1.0) -> "LstmParams":
        return cls.from_dict({
            name: rng.normal(0.0, scale, shape) for name, shape in _shapes(input_size, hidden_size).items()
        })

    @classmethod
    def from_dict(cls, arrays: dict) -> "LstmParams":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in arrays.items()})


def _shapes(d: int, h: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for gate in "icfo":
        shapes[f"w_x{gate}"] = (h, d)
        shapes[f"w_h{gate}"] = (h, h)
        shapes[f"b_{gate}"] = (h,)
        if gate != "c":
            shapes[f"w_c{gate}"] = (h,)
    return shapes


@dataclass(frozen=True)
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmState":
        return cls(np.zeros(hidden_size), np.zeros(hidden_size))


def lstm_cell_step(x_t: np.ndarray, state: LstmState, params: LstmParams) -> LstmState:
    """One time step. The output-gate peephole reads the updated cell state."""
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape != (params.input_size,):
        raise ValueError(f"input has shape {x_t.shape}, expected ({params.input_size},)")
    if state.h.shape != (params.hidden_size,) or state.c.shape != (params.hidden_size,):
        raise ValueError("state size does not match hidden_size")
    p = params
    h_prev, c_prev = state.h, state.c
    i_t = expit(p.w_xi @ x_t + p.w_hi @ h_prev + p.w_ci * c_prev + p.b_i)
    f_t = expit(p.w_xf @ x_t + p.w_hf @ h_prev + p.w_cf * c_prev + p.b_f)
    c_t = f_t * c_prev + i_t * np.tanh(p.w_xc @ x_t + p.w_hc @ h_prev + p.b_c)
    o_t = expit(p.w_xo @ x_t + p.w_ho @ h_prev + p.w_co * c_t + p.b_o)
    h_t = o_t * np.tanh(c_t)
    return LstmState(h_t, c_t)


def lstm_forward(xs: np.ndarray, params: LstmParams, state: LstmState | None = None) -> tuple[np.ndarray, LstmState]:
    """Run a (steps, features) sequence; returns all hidden states and the final state."""
    state = state or LstmState.zeros(params.hidden_size)
    hs = []
    for x_t in np.asarray(xs, dtype=float):
        state = lstm_cell_step(x_t, state, params)
        hs.append(state.h)
    return np.array(hs).reshape(-1, params.hidden_size), state

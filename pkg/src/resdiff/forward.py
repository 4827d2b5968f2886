"""Forward diffusion with a residual drift and a noise term.

One step adds a fraction of the residual plus fresh Gaussian noise::

    I_t = I_{t-1} + alpha_t * I_res + beta_t * eps

and the marginal is available in closed form::

    I_t = I_0 + alpha_bar_t * I_res + beta_bar_t * eps
        = I_in + (alpha_bar_t - 1) * I_res + beta_bar_t * eps

Arrays carry a leading batch dimension; every op is elementwise over it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RandomStream, ShapeError, as_tensor
from .schedules import CoefficientSchedule


@dataclass(frozen=True)
class DiffusionState:
    x: np.ndarray
    t: int
    schedule: CoefficientSchedule

    def __post_init__(self):
        if not 0 <= self.t <= self.schedule.T:
            raise ValueError(f"t={self.t} outside [0, {self.schedule.T}]")
        object.__setattr__(self, "x", as_tensor(self.x))


@dataclass(frozen=True)
class TripletBatch:
    """Targets, conditional inputs, residuals and (optionally) recorded noise."""

    i0: np.ndarray
    i_in: np.ndarray
    i_res: np.ndarray
    eps: np.ndarray | None = None

    def __post_init__(self):
        fields = ["i0", "i_in", "i_res"] + (["eps"] if self.eps is not None else [])
        for name in fields:
            object.__setattr__(self, name, as_tensor(getattr(self, name)))
        shapes = {getattr(self, n).shape for n in fields}
        if len(shapes) != 1:
            raise ShapeError(f"triplet fields differ in shape: {sorted(shapes)}")
        if np.max(np.abs(self.i_res - (self.i_in - self.i0)), initial=0.0) > 1e-12:
            raise ValueError("i_res must equal i_in - i0")

    @classmethod
    def from_pair(cls, i0, i_in, eps=None) -> "TripletBatch":
        i0 = as_tensor(i0)
        i_in = as_tensor(i_in)
        return cls(i0, i_in, i_in - i0, eps)

    def __len__(self):
        return self.i0.shape[0]

    def subset(self, idx) -> "TripletBatch":
        eps = None if self.eps is None else self.eps[idx]
        return TripletBatch(self.i0[idx], self.i_in[idx], self.i_res[idx], eps)


def _check_t(t: int, schedule: CoefficientSchedule, low: int = 1):
    if not low <= t <= schedule.T:
        raise ValueError(f"t={t} outside [{low}, {schedule.T}]")


def forward_step(state: DiffusionState, i_res, stream: RandomStream, eps=None) -> DiffusionState:
    """Advance ``state`` from t to t+1 with a fresh (or supplied) noise draw."""
    s = state.schedule
    if state.t >= s.T:
        raise ValueError(f"cannot step forward from t={state.t} = T")
    i_res = as_tensor(i_res)
    if i_res.shape != state.x.shape:
        raise ShapeError(f"shape mismatch: {state.x.shape} vs {i_res.shape}")
    t = state.t + 1
    if eps is None:
        eps = stream.normal(state.x.shape)
    x = state.x + s.alpha[t] * i_res + np.sqrt(s.beta_sq[t]) * eps
    return DiffusionState(x, t, s)


def synthesize(triplet: TripletBatch, t: int, schedule: CoefficientSchedule, stream: RandomStream, eps=None):
    """Sample I_t from I_0 in one shot. Returns ``(state, eps)``."""
    _check_t(t, schedule)
    if eps is None:
        eps = stream.normal(triplet.i0.shape)
    eps = as_tensor(eps)
    if eps.shape != triplet.i0.shape:
        raise ShapeError(f"shape mismatch: {triplet.i0.shape} vs {eps.shape}")
    x = triplet.i0 + schedule.alpha_bar[t] * triplet.i_res + schedule.beta_bar[t] * eps
    return DiffusionState(x, t, schedule), eps


def synthesize_from_input(i_in, i_res, t: int, schedule: CoefficientSchedule, eps) -> np.ndarray:
    """I_t written through the degraded input: ``I_in + (abar - 1) I_res + bbar eps``."""
    _check_t(t, schedule)
    i_in, i_res, eps = as_tensor(i_in), as_tensor(i_res), as_tensor(eps)
    if not i_in.shape == i_res.shape == eps.shape:
        raise ShapeError(f"shape mismatch: {i_in.shape} vs {i_res.shape} vs {eps.shape}")
    return i_in + (schedule.alpha_bar[t] - 1.0) * i_res + schedule.beta_bar[t] * eps


def marginal_params(t: int, schedule: CoefficientSchedule) -> tuple[float, float, float]:
    """``(c0, c_res, std)`` with q(I_t | I_0, I_res) = N(c0 I_0 + c_res I_res, std^2)."""
    _check_t(t, schedule)
    return 1.0, float(schedule.alpha_bar[t]), float(schedule.beta_bar[t])


def forward_trajectory(triplet: TripletBatch, schedule: CoefficientSchedule, stream: RandomStream, t_end=None):
    """Iterate :func:`forward_step` from I_0; returns an array (t_end+1, *shape)."""
    t_end = schedule.T if t_end is None else t_end
    _check_t(t_end, schedule)
    state = DiffusionState(triplet.i0, 0, schedule)
    out = [state.x]
    for _ in range(t_end):
        state = forward_step(state, triplet.i_res, stream)
        out.append(state.x)
    return np.stack(out)

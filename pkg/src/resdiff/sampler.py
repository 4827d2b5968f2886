"""Reverse process: posterior transfer, reverse steps, and full sampling loops.

A reverse step from ``t`` to an earlier index ``p`` removes the residual and
noise that the forward process added in between::

    I_p = I_t - (abar_t - abar_p) res_hat
              - (bbar_t - sqrt(bbar_p^2 - sigma^2)) eps_hat + sigma z

With ``eta = 0`` (``sigma = 0``) the loop is deterministic. ``sample`` also
supports decoupled paths: ``residual-first`` strips the residual while the
noise level stays at ``bbar_T`` and then denoises; ``noise-first`` does the
reverse, passing through ``I_in``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import RandomStream, ShapeError, as_tensor
from .predictors import (
    BOTH,
    PathPoint,
    SINGULAR_GUARD,
    SingularConversionError,
    noise_to_residual,
    residual_to_noise,
)
from .schedules import CoefficientSchedule, DdimSchedule, uniform_timesteps

METHODS = ("SM-Res", "SM-N", "SM-Res-N")
PATH_MODES = ("simultaneous", "residual-first", "noise-first")
CLAMP_MARGIN = 1e-3


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingPlan:
    timesteps: tuple
    eta: float = 0.0
    method: str = "SM-Res"
    path_mode: str = "simultaneous"

    def __post_init__(self):
        ts = tuple(int(t) for t in self.timesteps)
        object.__setattr__(self, "timesteps", ts)
        if not ts:
            raise PlanError("plan needs at least one timestep")
        if any(b >= a for a, b in zip(ts, ts[1:])) or ts[-1] < 1:
            raise PlanError(f"timesteps must be strictly decreasing and >= 1, got {ts[:5]}...")
        if self.method not in METHODS:
            raise PlanError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.path_mode not in PATH_MODES:
            raise PlanError(f"unknown path mode {self.path_mode!r}; expected one of {PATH_MODES}")
        if not 0.0 <= self.eta <= 1.0:
            raise PlanError(f"eta must lie in [0, 1], got {self.eta}")

    @classmethod
    def uniform(cls, T: int, steps: int, **kw) -> "SamplingPlan":
        return cls(tuple(uniform_timesteps(T, steps)), **kw)

    def pairs(self):
        ts = self.timesteps + (0,)
        return list(zip(ts[:-1], ts[1:]))

    def check(self, schedule: CoefficientSchedule):
        if self.timesteps[0] != schedule.T:
            raise PlanError(f"plan must start at T={schedule.T}, starts at {self.timesteps[0]}")


def gap_sigma(schedule: CoefficientSchedule, t: int, t_prev: int, eta: float) -> float:
    return float(np.sqrt(schedule.gap_variance(t, t_prev, eta)))


def posterior_params(i_t, i0, i_res, t: int, t_prev: int, schedule: CoefficientSchedule, eta: float | None = None):
    """Mean and standard deviation of q(I_{t_prev} | I_t, I_0, I_res)."""
    eta = schedule.eta if eta is None else eta
    if not 0 <= t_prev < t <= schedule.T:
        raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    bt, bp = schedule.beta_bar[t], schedule.beta_bar[t_prev]
    if bt <= 0:
        raise ValueError(f"posterior undefined at t={t}: beta_bar_t = 0")
    var = schedule.gap_variance(t, t_prev, eta)
    if bp * bp < var:
        raise ValueError(f"posterior variance {var} exceeds beta_bar_prev^2 {bp * bp} at t={t}")
    i_t, i0, i_res = as_tensor(i_t), as_tensor(i0), as_tensor(i_res)
    mean = i0 + schedule.alpha_bar[t_prev] * i_res + np.sqrt(bp * bp - var) * (
        i_t - i0 - schedule.alpha_bar[t] * i_res
    ) / bt
    return mean, float(np.sqrt(var))


def _noise(stream, sigma, shape, noise):
    if sigma == 0:
        return 0.0
    if noise is not None:
        return sigma * noise
    return sigma * stream.normal(shape)


def reverse_step(
    i_t, res_hat, eps_hat, t: int, t_prev: int, schedule: CoefficientSchedule, eta: float,
    stream: RandomStream | None = None, noise=None, fault: bool = False,
) -> np.ndarray:
    """One reverse update from ``t`` to ``t_prev``.

    ``noise`` (standard normal, same shape) overrides the stream draw.
    ``fault`` flips the sign of the noise term and exists only to check that
    the verification suite catches a broken update.
    """
    i_t = as_tensor(i_t)
    for name, v in (("res_hat", res_hat), ("eps_hat", eps_hat)):
        if np.shape(v) != i_t.shape:
            raise ShapeError(f"{name} shape {np.shape(v)} does not match {i_t.shape}")
    bp = schedule.beta_bar[t_prev]
    sigma = gap_sigma(schedule, t, t_prev, eta) if schedule.beta_bar[t] > 0 else 0.0
    eps_hat = -eps_hat if fault else eps_hat
    out = (
        i_t
        - (schedule.alpha_bar[t] - schedule.alpha_bar[t_prev]) * res_hat
        - (schedule.beta_bar[t] - np.sqrt(max(bp * bp - sigma * sigma, 0.0))) * eps_hat
    )
    return as_tensor(out + _noise(stream, sigma, i_t.shape, noise))


def ddim_sigma(d: DdimSchedule, t: int, t_prev: int, eta: float) -> float:
    a_t, a_p = d.alpha_bar_ddim[t], d.alpha_bar_ddim[t_prev]
    return float(np.sqrt(max(eta * (1 - a_p) / (1 - a_t) * (1 - a_t / a_p), 0.0)))


def ddim_equivalent_step(i_t, eps_hat, t: int, t_prev: int, d: DdimSchedule, sigma: float,
                         stream: RandomStream | None = None, noise=None) -> np.ndarray:
    """The standard implicit-model update in cumulative-product form."""
    a_t, a_p = d.alpha_bar_ddim[t], d.alpha_bar_ddim[t_prev]
    if a_t <= 0:
        raise ValueError(f"cumulative product is zero at t={t}")
    i_t = as_tensor(i_t)
    x0 = (i_t - np.sqrt(1.0 - a_t) * eps_hat) / np.sqrt(a_t)
    out = np.sqrt(a_p) * x0 + np.sqrt(max(1.0 - a_p - sigma * sigma, 0.0)) * eps_hat
    return as_tensor(out + _noise(stream, sigma, i_t.shape, noise))


def ddim_sample(timesteps, predictor, d: DdimSchedule, x_T, eta: float = 0.0, stream=None, trace: bool = False):
    """Reference loop for the implicit-model sampler with a noise predictor."""
    x = as_tensor(x_T)
    ts = list(timesteps) + [0]
    traj = [x]
    zeros = np.zeros_like(x)
    for t, p in zip(ts[:-1], ts[1:]):
        eps = predictor.predict(x, zeros, PathPoint(t, 0.0, 0.0, d.T), frozenset({"eps"}))[1]
        x = ddim_equivalent_step(x, eps, t, p, d, ddim_sigma(d, t, p, eta), stream)
        traj.append(x)
    return (x, np.stack(traj)) if trace else x


@dataclass
class _Estimator:
    """Turns raw predictor output into the estimate a step needs."""

    predictor: object
    method: str
    on_singular: str
    clamped: list = field(default_factory=list)

    def residual(self, x, i_in, point: PathPoint):
        if self.method == "SM-N":
            eps = self.predictor.predict(x, i_in, point, frozenset({"eps"}))[1]
            return self._to_residual(eps, x, i_in, point)
        return self.predictor.predict(x, i_in, point, frozenset({"res"}))[0]

    def noise(self, x, i_in, point: PathPoint):
        if self.method == "SM-Res":
            res = self.predictor.predict(x, i_in, point, frozenset({"res"}))[0]
            return residual_to_noise(res, x, i_in, point.alpha_bar, point.beta_bar, point.t)
        return self.predictor.predict(x, i_in, point, frozenset({"eps"}))[1]

    def both(self, x, i_in, point: PathPoint):
        if self.method == "SM-Res":
            res = self.predictor.predict(x, i_in, point, frozenset({"res"}))[0]
            return res, residual_to_noise(res, x, i_in, point.alpha_bar, point.beta_bar, point.t)
        if self.method == "SM-N":
            eps = self.predictor.predict(x, i_in, point, frozenset({"eps"}))[1]
            return self._to_residual(eps, x, i_in, point), eps
        return self.predictor.predict(x, i_in, point, BOTH)

    def _to_residual(self, eps, x, i_in, point):
        ab = point.alpha_bar
        if self.on_singular == "clamp" and abs(ab - 1.0) < CLAMP_MARGIN:
            self.clamped.append(point.t)
            ab = 1.0 - CLAMP_MARGIN
        return noise_to_residual(eps, x, i_in, ab, point.beta_bar, point.t)


def _check_predictor(plan: SamplingPlan, predictor):
    outputs = getattr(predictor, "outputs", "both")
    need = {"SM-Res": ("residual", "both"), "SM-N": ("noise", "both"), "SM-Res-N": ("both",)}[plan.method]
    if outputs not in need:
        raise PlanError(f"{plan.method} needs a predictor emitting {' or '.join(need)}, got {outputs!r}")


def sample(
    plan: SamplingPlan,
    predictor,
    i_in,
    schedule: CoefficientSchedule,
    stream: RandomStream,
    eps_init=None,
    x_init=None,
    trace: bool = False,
    on_singular: str = "raise",
    fault: bool = False,
):
    """Run the reverse process from ``I_T = I_in + bbar_T eps`` down to t = 0.

    ``x_init`` overrides the starting point. With ``trace`` the per-step
    states are returned as a second value (shape ``(steps+1, *shape)``, or
    ``(2*steps+1, ...)`` for decoupled paths). ``on_singular="clamp"`` lets
    SM-N continue through steps where ``abar_t ~ 1`` by evaluating the
    noise-to-residual map at ``abar = 1 - 1e-3``; it warns when used.
    """
    plan.check(schedule)
    _check_predictor(plan, predictor)
    if plan.path_mode != "simultaneous":
        require_independent(predictor)
    if on_singular not in ("raise", "clamp"):
        raise ValueError("on_singular must be 'raise' or 'clamp'")
    i_in = as_tensor(i_in)
    T = schedule.T
    if x_init is None:
        if eps_init is None:
            eps_init = stream.normal(i_in.shape)
        x = i_in + schedule.beta_bar[T] * as_tensor(eps_init)
    else:
        x = as_tensor(x_init)
        if x.shape != i_in.shape:
            raise ShapeError(f"x_init shape {x.shape} does not match i_in {i_in.shape}")
    est = _Estimator(predictor, plan.method, on_singular)
    traj = [x]
    eta = plan.eta
    zeros = np.zeros_like(x)

    def point(t, ab, bb):
        return PathPoint(t, float(ab), float(bb), T)

    if plan.path_mode == "simultaneous":
        for t, p in plan.pairs():
            res, eps = est.both(x, i_in, PathPoint.on_schedule(t, schedule))
            x = reverse_step(x, res, eps, t, p, schedule, eta, stream, fault=fault)
            traj.append(x)
    else:
        ab, bb = schedule.alpha_bar, schedule.beta_bar
        if plan.path_mode == "residual-first":
            for t, p in plan.pairs():
                res = est.residual(x, i_in, point(t, ab[t], bb[T]))
                x = as_tensor(x - (ab[t] - ab[p]) * res)
                traj.append(x)
            for t, p in plan.pairs():
                eps = est.noise(x, i_in, point(t, 0.0, bb[t]))
                x = reverse_step(x, zeros, eps, t, p, schedule, eta, stream, fault=fault)
                traj.append(x)
        else:
            for t, p in plan.pairs():
                eps = est.noise(x, i_in, point(t, ab[T], bb[t]))
                x = reverse_step(x, zeros, eps, t, p, schedule, eta, stream, fault=fault)
                traj.append(x)
            for t, p in plan.pairs():
                res = est.residual(x, i_in, point(t, ab[t], 0.0))
                x = as_tensor(x - (ab[t] - ab[p]) * res)
                traj.append(x)
    if est.clamped:
        warnings.warn(
            f"noise-to-residual conversion clamped at t={sorted(set(est.clamped))}", RuntimeWarning, stacklevel=2
        )
    return (x, np.stack(traj)) if trace else x


def require_independent(predictor):
    if not getattr(predictor, "independent", False):
        raise PlanError(
            "decoupled paths need separate residual and noise predictors; "
            "use a paired (two-network) predictor"
        )


__all__ = [
    "SamplingPlan", "PlanError", "posterior_params", "reverse_step", "ddim_equivalent_step",
    "ddim_sample", "ddim_sigma", "sample", "gap_sigma", "require_independent", "SINGULAR_GUARD",
    "SingularConversionError", "METHODS", "PATH_MODES",
]

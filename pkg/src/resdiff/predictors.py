"""Residual and noise estimators, and the maps between them.

A predictor is asked for estimates at a :class:`PathPoint`: the time index
plus the residual and noise levels ``(alpha_bar, beta_bar)`` the current
sample is assumed to sit at. On the usual reverse path these are just the
schedule's values at ``t``; decoupled paths move one level while holding
the other fixed.

Every predictor implements ``predict(x, i_in, point, want)`` and returns a
pair ``(res_hat, eps_hat)``; entries not in ``want`` may be ``None``.
Because ``I_t = I_in + (abar - 1) I_res + bbar eps``, either estimate can be
converted into the other:

    eps = (I_t - I_in - (abar - 1) res) / bbar        (needs bbar > 0)
    res = (I_t - I_in - bbar eps) / (abar - 1)        (needs abar != 1)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RandomStream, ShapeError, as_tensor
from .schedules import CoefficientSchedule

SINGULAR_GUARD = 1e-8
BOTH = frozenset({"res", "eps"})


class SingularConversionError(ValueError):
    """A residual/noise conversion would divide by (nearly) zero."""


@dataclass(frozen=True)
class PathPoint:
    t: int
    alpha_bar: float
    beta_bar: float
    T: int

    @classmethod
    def on_schedule(cls, t: int, schedule: CoefficientSchedule) -> "PathPoint":
        return cls(int(t), float(schedule.alpha_bar[t]), float(schedule.beta_bar[t]), schedule.T)


# -- conversions ---------------------------------------------------------------


def noise_to_residual(eps_hat, i_t, i_in, alpha_bar: float, beta_bar: float, t=None) -> np.ndarray:
    if abs(alpha_bar - 1.0) < SINGULAR_GUARD:
        where = "" if t is None else f" at t={t}"
        raise SingularConversionError(
            f"noise-to-residual conversion is singular{where} (alpha_bar = {alpha_bar!r} ~ 1); "
            "predict the residual directly (SM-Res or SM-Res-N) or avoid this step"
        )
    return (np.asarray(i_t) - np.asarray(i_in) - beta_bar * np.asarray(eps_hat)) / (alpha_bar - 1.0)


def residual_to_noise(res_hat, i_t, i_in, alpha_bar: float, beta_bar: float, t=None) -> np.ndarray:
    if beta_bar < SINGULAR_GUARD:
        where = "" if t is None else f" at t={t}"
        raise SingularConversionError(
            f"residual-to-noise conversion is singular{where} (beta_bar = {beta_bar!r} ~ 0); "
            "predict the noise directly (SM-N or SM-Res-N) or avoid this step"
        )
    return (np.asarray(i_t) - np.asarray(i_in) - (alpha_bar - 1.0) * np.asarray(res_hat)) / beta_bar


def convert_noise_to_residual(eps_hat, i_t, i_in, t: int, schedule: CoefficientSchedule) -> np.ndarray:
    return noise_to_residual(eps_hat, i_t, i_in, schedule.alpha_bar[t], schedule.beta_bar[t], t)


def convert_residual_to_noise(res_hat, i_t, i_in, t: int, schedule: CoefficientSchedule) -> np.ndarray:
    return residual_to_noise(res_hat, i_t, i_in, schedule.alpha_bar[t], schedule.beta_bar[t], t)


# -- replay and analytic predictors ---------------------------------------------


class GroundTruthPredictor:
    """Replays the recorded residual and noise of each sample."""

    kind = "ground-truth"
    outputs = "both"
    independent = True

    def __init__(self, i_res, eps):
        self.i_res = as_tensor(i_res)
        self.eps = as_tensor(eps)
        if self.i_res.shape != self.eps.shape:
            raise ShapeError(f"shape mismatch: {self.i_res.shape} vs {self.eps.shape}")

    def predict(self, x, i_in, point: PathPoint, want=BOTH):
        return (self.i_res if "res" in want else None, self.eps if "eps" in want else None)


@dataclass(frozen=True)
class GaussianTaskParams:
    mu: np.ndarray
    s_sq: np.ndarray
    i_in_mode: str = "zero"
    i_in_value: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mu", as_tensor(self.mu))
        object.__setattr__(self, "s_sq", as_tensor(self.s_sq))
        if self.mu.shape != self.s_sq.shape:
            raise ShapeError(f"shape mismatch: {self.mu.shape} vs {self.s_sq.shape}")
        if np.any(self.s_sq <= 0):
            raise ValueError("target variances must be positive")
        if self.i_in_mode not in ("zero", "fixed"):
            raise ValueError(f"unknown i_in_mode {self.i_in_mode!r}")

    def input_value(self) -> float:
        return 0.0 if self.i_in_mode == "zero" else float(self.i_in_value)


def gaussian_posterior_mean(x, i_in, alpha_bar: float, beta_bar: float, params: GaussianTaskParams,
                            uninformative: str = "raise") -> np.ndarray:
    """E[I_0 | I_t] when I_0 ~ N(mu, diag(s_sq)) and I_in is known.

    With ``c = 1 - abar`` the marginal is ``I_t = c I_0 + abar I_in + bbar eps``,
    so the conjugate update gives ``mu + c s^2 / (c^2 s^2 + bbar^2) (I_t - abar I_in - c mu)``.
    At ``c = bbar = 0`` the formula is 0/0 although I_t = I_in says nothing
    about I_0; ``uninformative="prior"`` returns the prior mean there.
    """
    c = 1.0 - alpha_bar
    denom = c * c * params.s_sq + beta_bar * beta_bar
    if np.any(denom <= 0):
        if uninformative == "prior":
            return np.broadcast_to(params.mu, np.shape(x)).copy()
        raise SingularConversionError("posterior undefined: (1 - alpha_bar)^2 s^2 + beta_bar^2 = 0")
    gain = c * params.s_sq / denom
    return params.mu + gain * (x - alpha_bar * i_in - c * params.mu)


def gaussian_oracle_predict(i_t, t: int, params: GaussianTaskParams, schedule: CoefficientSchedule):
    """Bayes-optimal ``(res_hat, eps_hat)`` for the Gaussian task at schedule time t."""
    point = PathPoint.on_schedule(t, schedule)
    i_in = np.full_like(np.asarray(i_t, dtype=np.float64), params.input_value())
    return GaussianOraclePredictor(params).predict(i_t, i_in, point)


class GaussianOraclePredictor:
    """Exact conditional expectations for a diagonal Gaussian target."""

    kind = "gaussian-oracle"
    outputs = "both"
    independent = True

    def __init__(self, params: GaussianTaskParams):
        self.params = params

    def predict(self, x, i_in, point: PathPoint, want=BOTH):
        x = np.asarray(x, dtype=np.float64)
        i_in = np.asarray(i_in, dtype=np.float64)
        e0 = gaussian_posterior_mean(x, i_in, point.alpha_bar, point.beta_bar, self.params, "prior")
        res = i_in - e0 if "res" in want else None
        eps = None
        if "eps" in want:
            if point.beta_bar < SINGULAR_GUARD:
                raise SingularConversionError(f"noise estimate undefined at t={point.t} (beta_bar = 0)")
            eps = (x - point.alpha_bar * i_in - (1.0 - point.alpha_bar) * e0) / point.beta_bar
        return res, eps


# -- MLP ----------------------------------------------------------------------------

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def time_embedding(cond, dim: int = 32, base: float = 1e4) -> np.ndarray:
    """Sinusoidal embedding of a scalar (or per-sample vector) condition."""
    cond = np.atleast_1d(np.asarray(cond, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(base) * np.arange(half) / half)
    arg = cond[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


class MlpModel:
    """Two tanh hidden layers over ``[I_t, I_in, embed(cond)]`` and a linear head.

    ``heads=2`` emits ``[res_hat, eps_hat]`` stacked along the feature axis.
    Weights are stored as (fan_in, fan_out) matrices.
    """

    def __init__(self, data_dim: int, hidden: int = 128, embed_dim: int = 32, heads: int = 1, seed: int = 0):
        if heads not in (1, 2):
            raise ValueError("heads must be 1 or 2")
        if embed_dim % 2:
            raise ValueError("embed_dim must be even")
        self.data_dim = int(data_dim)
        self.hidden = int(hidden)
        self.embed_dim = int(embed_dim)
        self.heads = heads
        self.seed = int(seed)
        self.params = {}
        self.reinitialize(seed)

    @property
    def input_dim(self) -> int:
        return 2 * self.data_dim + self.embed_dim

    @property
    def output_dim(self) -> int:
        return self.heads * self.data_dim

    def shapes(self) -> dict:
        d, h, o = self.input_dim, self.hidden, self.output_dim
        return {"W1": (d, h), "b1": (h,), "W2": (h, h), "b2": (h,), "W3": (h, o), "b3": (o,)}

    def reinitialize(self, seed: int):
        """Glorot-uniform weights, zero biases."""
        self.seed = int(seed)
        stream = RandomStream(self.seed, lane=1)
        for name, shape in self.shapes().items():
            if name.startswith("W"):
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                self.params[name] = stream.uniform(shape, -limit, limit)
            else:
                self.params[name] = np.zeros(shape)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "MlpModel":
        m = MlpModel.__new__(MlpModel)
        m.__dict__.update(self.__dict__)
        m.params = {k: v.copy() for k, v in self.params.items()}
        return m

    def _inputs(self, x, i_in, cond):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        i_in = np.atleast_2d(np.asarray(i_in, dtype=np.float64))
        if x.shape[1] != self.data_dim or i_in.shape != x.shape:
            raise ShapeError(f"expected inputs of shape (n, {self.data_dim}), got {x.shape} and {i_in.shape}")
        emb = time_embedding(np.broadcast_to(np.asarray(cond, dtype=np.float64), (x.shape[0],)), self.embed_dim)
        return np.concatenate([x, i_in, emb], axis=1)

    def forward(self, x, i_in, cond, keep: bool = False):
        p = self.params
        z = self._inputs(x, i_in, cond)
        h1 = np.tanh(z @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        out = h2 @ p["W3"] + p["b3"]
        if keep:
            return out, (z, h1, h2)
        return out

    def backward(self, cache, grad_out) -> dict:
        """Parameter gradients given dLoss/dOutput."""
        p = self.params
        z, h1, h2 = cache
        g = {"W3": h2.T @ grad_out, "b3": grad_out.sum(axis=0)}
        d2 = (grad_out @ p["W3"].T) * (1.0 - h2 * h2)
        g["W2"] = h1.T @ d2
        g["b2"] = d2.sum(axis=0)
        d1 = (d2 @ p["W2"].T) * (1.0 - h1 * h1)
        g["W1"] = z.T @ d1
        g["b1"] = d1.sum(axis=0)
        return g

    def split(self, out):
        """``(res_hat, eps_hat)`` for two-headed output."""
        d = self.data_dim
        return out[:, :d], out[:, d:]


def mlp_predict(model: MlpModel, i_t, time_condition, i_in) -> np.ndarray:
    return model.forward(i_t, i_in, time_condition)


CONDITIONS = ("index", "alpha", "beta")


def time_condition(mode: str, point: PathPoint) -> float:
    """The scalar a network is conditioned on: t, alpha_bar*T, or beta_bar*T."""
    if mode == "index":
        return float(point.t)
    if mode == "alpha":
        return point.alpha_bar * point.T
    if mode == "beta":
        return point.beta_bar * point.T
    raise ValueError(f"unknown time condition {mode!r}; expected one of {CONDITIONS}")


def default_condition(output: str) -> str:
    return {"residual": "alpha", "noise": "beta", "both": "alpha"}[output]


class MlpPredictor:
    """Wraps an :class:`MlpModel` as a residual, noise, or two-headed predictor."""

    kind = "mlp"

    def __init__(self, model: MlpModel, output: str = "residual", condition: str | None = None):
        if output not in ("residual", "noise", "both"):
            raise ValueError(f"unknown output {output!r}")
        if (output == "both") != (model.heads == 2):
            raise ValueError("two-headed output requires a two-headed model and vice versa")
        self.model = model
        self.outputs = output
        self.condition = condition or default_condition(output)
        time_condition(self.condition, PathPoint(1, 0.0, 0.0, 1))
        # Both heads share one time condition, so they cannot follow a decoupled path.
        self.independent = False

    def predict(self, x, i_in, point: PathPoint, want=BOTH):
        out = self.model.forward(x, i_in, time_condition(self.condition, point))
        if self.outputs == "both":
            return self.model.split(out)
        if self.outputs == "residual":
            return out, None
        return None, out


class PairedPredictor:
    """Separate residual and noise predictors, each on its own time condition."""

    kind = "paired"
    outputs = "both"
    independent = True

    def __init__(self, residual, noise):
        if residual.outputs not in ("residual", "both") or noise.outputs not in ("noise", "both"):
            raise ValueError("paired predictor needs a residual-capable and a noise-capable predictor")
        self.residual = residual
        self.noise = noise

    def predict(self, x, i_in, point: PathPoint, want=BOTH):
        res = self.residual.predict(x, i_in, point, frozenset({"res"}))[0] if "res" in want else None
        eps = self.noise.predict(x, i_in, point, frozenset({"eps"}))[1] if "eps" in want else None
        return res, eps


class FixedNoisePredictor:
    """A deterministic, smooth noise field ``tanh(W x + b t)``; used for sampler parity checks."""

    kind = "fixed"
    outputs = "noise"
    independent = False

    def __init__(self, dim: int, seed: int = 0):
        s = RandomStream(seed, lane=2)
        self.W = s.normal((dim, dim)) / np.sqrt(dim)
        self.b = s.normal((dim,))

    def predict(self, x, i_in, point: PathPoint, want=BOTH):
        x = np.asarray(x, dtype=np.float64)
        return None, np.tanh(x @ self.W.T + self.b * (point.t / point.T))

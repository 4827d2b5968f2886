"""Decoupled residual/noise coefficient schedules.

A :class:`CoefficientSchedule` stores per-step residual rates ``alpha[t]``
and noise variances ``beta_sq[t]`` together with their cumulatives
``alpha_bar[t] = sum(alpha[1..t])`` and ``beta_bar[t] = sqrt(sum(beta_sq[1..t]))``.
Every array has length ``T + 1`` and index 0 holds the ``t = 0`` value
(all zeros), so ``schedule.alpha_bar[t]`` reads exactly like the math.

Two posterior variance modes are supported:

``"rddm"``
    sigma^2 = eta * (bb_t^2 - bb_p^2) * bb_p^2 / bb_t^2  (sum-constrained)
``"ddim"``
    the DDIM/DDPM variance written through ``abar_ddim = 1 - bb^2``:
    sigma^2 = eta * (1 - a_p) / (1 - a_t) * (1 - a_t / a_p)

where ``p`` is the previous time index of a (possibly skipping) step.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

FAMILIES_DDIM = ("linear", "scaled-linear", "squared-cosine")
FAMILIES_POWER = ("mean", "increasing", "decreasing", "dec-inc")
VARIANCE_MODES = ("rddm", "ddim")
ADJUST_MODES = ("none", "alpha", "beta", "alpha+beta")

COMPAT_TOL = 1e-9


class ScheduleError(ValueError):
    pass


def power_schedule(T: int, a: float, decreasing: bool = False, total: float = 1.0) -> np.ndarray:
    """Per-step values of the normalized power function, summing to ``total``.

    Evaluates ``(a + 1) * x**a`` at ``x = t/T`` (``1 - t/T`` if
    ``decreasing``) for t = 1..T, scales by ``total / T`` and renormalizes
    the discrete sum. Returns an array of length T.
    """
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if a < 0:
        raise ScheduleError(f"power exponent must be >= 0, got {a}")
    if total <= 0:
        raise ScheduleError(f"total must be > 0, got {total}")
    x = np.arange(1, T + 1, dtype=np.float64) / T
    if decreasing:
        x = 1.0 - x
    values = (a + 1.0) * x**a * (total / T)
    s = values.sum()
    if s <= 0:
        raise ScheduleError("power schedule has zero mass; use T > 1 or a smaller exponent")
    return values * (total / s)


def power_density(x, a: float):
    """The continuous density P(x, a) = x**a / integral_0^1 x**a dx."""
    return (a + 1.0) * np.asarray(x, dtype=np.float64) ** a


@dataclass(frozen=True)
class DdimSchedule:
    """Cumulative-product schedule of a standard denoising model."""

    alpha_bar_ddim: np.ndarray  # length T+1, index 0 holds 1.0
    family: str = "custom"
    betas: np.ndarray | None = None  # per-step beta_DDIM, length T+1 (index 0 unused)

    def __post_init__(self):
        a = np.asarray(self.alpha_bar_ddim, dtype=np.float64)
        if a.ndim != 1 or a.size < 2:
            raise ScheduleError("alpha_bar_ddim must be 1-D with at least one step")
        if not (np.all(a[1:] > 0) and np.all(a <= 1)):
            raise ScheduleError("alpha_bar_ddim must lie in (0, 1]")
        bad = np.nonzero(np.diff(a) >= 0)[0]
        if bad.size:
            raise ScheduleError(f"alpha_bar_ddim is not strictly decreasing at t={bad[0] + 1}")
        object.__setattr__(self, "alpha_bar_ddim", a)

    @property
    def T(self) -> int:
        return self.alpha_bar_ddim.size - 1


def make_ddim_schedule(T: int, family: str = "linear") -> DdimSchedule:
    """Standard DDIM/DDPM schedules: linear, scaled-linear, squared-cosine."""
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if family == "linear":
        betas = np.linspace(0.0001, 0.02, T)
    elif family == "scaled-linear":
        betas = np.linspace(np.sqrt(0.00085), np.sqrt(0.012), T) ** 2
    elif family == "squared-cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
        abar = f / f[0]
        betas = np.clip(1.0 - abar[1:] / abar[:-1], 0.0, 0.999)
    else:
        raise ScheduleError(f"unknown DDIM schedule family {family!r}; expected one of {FAMILIES_DDIM}")
    abar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return DdimSchedule(abar, family, np.concatenate([[0.0], betas]))


@dataclass(frozen=True)
class CoefficientSchedule:
    """Residual and noise schedules with cumulatives and posterior variances.

    Build with :meth:`from_increments` or :meth:`from_cumulatives` rather
    than the raw constructor.
    """

    alpha: np.ndarray
    beta_sq: np.ndarray
    alpha_bar: np.ndarray
    beta_bar: np.ndarray
    eta: float = 0.0
    variance_mode: str = "rddm"
    name: str = "custom"
    sigma: np.ndarray = field(default=None, repr=False)
    # Exact cumulative products when derived from a DDIM schedule; the
    # "ddim" variance mode uses them instead of 1 - beta_bar^2.
    ddim_products: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.variance_mode not in VARIANCE_MODES:
            raise ScheduleError(f"unknown variance mode {self.variance_mode!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise ScheduleError(f"eta must lie in [0, 1], got {self.eta}")
        for key in ("alpha", "beta_sq", "alpha_bar", "beta_bar"):
            arr = np.asarray(getattr(self, key), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        if self.sigma is None:
            t = np.arange(1, self.T + 1)
            sig = np.concatenate([[0.0], np.sqrt(self.gap_variance(t, t - 1))])
        else:
            sig = np.asarray(self.sigma, dtype=np.float64)
        sig.setflags(write=False)
        object.__setattr__(self, "sigma", sig)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_increments(cls, alpha, beta_sq, **kw) -> "CoefficientSchedule":
        """From per-step ``alpha[1..T]`` and ``beta_sq[1..T]`` (length T)."""
        alpha = np.asarray(alpha, dtype=np.float64)
        beta_sq = np.asarray(beta_sq, dtype=np.float64)
        if alpha.shape != beta_sq.shape or alpha.ndim != 1:
            raise ScheduleError("alpha and beta_sq must be 1-D arrays of equal length")
        if np.any(alpha < 0) or np.any(beta_sq < 0):
            raise ScheduleError("per-step rates must be non-negative")
        alpha = np.concatenate([[0.0], alpha])
        beta_sq = np.concatenate([[0.0], beta_sq])
        return cls(alpha, beta_sq, np.cumsum(alpha), np.sqrt(np.cumsum(beta_sq)), **kw)

    @classmethod
    def from_cumulatives(cls, alpha_bar, beta_bar, **kw) -> "CoefficientSchedule":
        """From cumulative ``alpha_bar[0..T]`` and ``beta_bar[0..T]``."""
        alpha_bar = np.asarray(alpha_bar, dtype=np.float64)
        beta_bar = np.asarray(beta_bar, dtype=np.float64)
        if alpha_bar.shape != beta_bar.shape or alpha_bar.ndim != 1:
            raise ScheduleError("cumulatives must be 1-D arrays of equal length")
        if alpha_bar[0] != 0 or beta_bar[0] != 0:
            raise ScheduleError("cumulatives must start at 0 for t = 0")
        alpha = np.concatenate([[0.0], np.diff(alpha_bar)])
        beta_sq = np.concatenate([[0.0], np.diff(beta_bar**2)])
        if np.any(alpha < 0):
            t = int(np.nonzero(alpha < 0)[0][0])
            raise ScheduleError(f"alpha_bar decreases at t={t}")
        if np.any(beta_sq < 0):
            t = int(np.nonzero(beta_sq < 0)[0][0])
            raise ScheduleError(f"beta_bar decreases at t={t}")
        return cls(alpha, beta_sq, alpha_bar, beta_bar, **kw)

    # -- properties -------------------------------------------------------

    @property
    def T(self) -> int:
        return self.alpha.size - 1

    @property
    def beta_bar_T_sq(self) -> float:
        return float(self.beta_bar[-1] ** 2)

    def with_variance(self, eta: float | None = None, variance_mode: str | None = None) -> "CoefficientSchedule":
        return replace(
            self,
            eta=self.eta if eta is None else float(eta),
            variance_mode=self.variance_mode if variance_mode is None else variance_mode,
            sigma=None,
        )

    def gap_variance(self, t, t_prev, eta: float | None = None):
        """Posterior variance for a reverse step ``t -> t_prev``."""
        eta = self.eta if eta is None else eta
        t = np.asarray(t)
        t_prev = np.asarray(t_prev)
        bt2 = self.beta_bar[t] ** 2
        bp2 = self.beta_bar[t_prev] ** 2
        if np.any(bp2 > bt2):
            raise ScheduleError("posterior variance needs beta_bar_prev <= beta_bar_t")
        if self.variance_mode == "rddm":
            # a noise-free gap (beta_bar_t = 0 forces beta_bar_prev = 0) has zero variance
            with np.errstate(divide="ignore", invalid="ignore"):
                var = np.where(bt2 > 0, eta * (bt2 - bp2) * bp2 / bt2, 0.0)
        else:
            if self.ddim_products is not None:
                a_t, a_p = self.ddim_products[t], self.ddim_products[t_prev]
            else:
                a_t, a_p = 1.0 - bt2, 1.0 - bp2
            with np.errstate(divide="ignore", invalid="ignore"):
                var = eta * (1.0 - a_p) / (1.0 - a_t) * (1.0 - a_t / a_p)
            # abar_ddim = 0 at t_prev or 1 at t only occurs on a zero-width gap
            var = np.where((a_p > 0) & (a_t < 1), var, 0.0)
        return np.maximum(var, 0.0)

    def alpha_bar_ddim(self) -> np.ndarray:
        """``(1 - alpha_bar)**2``: the DDIM cumulative implied by the residual schedule."""
        return (1.0 - self.alpha_bar) ** 2

    def compatibility_residual(self) -> np.ndarray:
        """``(1 - alpha_bar)^2 + beta_bar^2 - 1`` for t = 0..T (zero on the DDIM manifold)."""
        return (1.0 - self.alpha_bar) ** 2 + self.beta_bar**2 - 1.0


def ddim_to_rddm(
    d: DdimSchedule, eta: float = 0.0, variance_mode: str = "ddim", normalize_terminal: bool = False
) -> CoefficientSchedule:
    """Map a DDIM cumulative-product schedule onto residual/noise cumulatives.

    ``alpha_bar = 1 - sqrt(abar_ddim)``, ``beta_bar = sqrt(1 - abar_ddim)``.
    By default the result is exact, so ``alpha_bar[T] = 1 - sqrt(abar_ddim[T])``
    falls slightly short of 1 and the schedule stays invertible.
    ``normalize_terminal`` folds the residual and noise deficits into the
    last step so that ``alpha_bar[T] = 1`` and ``beta_bar[T] = 1``; rows
    t < T are untouched, but the schedule leaves the DDIM manifold at T.
    """
    a = d.alpha_bar_ddim
    if np.any(np.diff(a) >= 0):
        raise ScheduleError("DDIM schedule must be strictly decreasing")
    alpha_bar = 1.0 - np.sqrt(a)
    beta_bar = np.sqrt(1.0 - a)
    alpha_bar[0] = 0.0
    beta_bar[0] = 0.0
    s = CoefficientSchedule.from_cumulatives(
        alpha_bar, beta_bar, eta=eta, variance_mode=variance_mode, name=f"ddim-{d.family}", ddim_products=a
    )
    if normalize_terminal:
        alpha_bar = alpha_bar.copy()
        beta_bar = beta_bar.copy()
        alpha_bar[-1] = 1.0
        beta_bar[-1] = 1.0
        s = CoefficientSchedule.from_cumulatives(
            alpha_bar, beta_bar, eta=eta, variance_mode=variance_mode, name=f"ddim-{d.family}-normalized",
        )
    return s


def rddm_to_ddim(s: CoefficientSchedule, tol: float = COMPAT_TOL) -> DdimSchedule:
    """Inverse of :func:`ddim_to_rddm`; only defined on the DDIM manifold."""
    resid = np.abs(s.compatibility_residual())
    bad = np.nonzero(resid > tol)[0]
    if bad.size:
        t = int(bad[0])
        raise ScheduleError(
            f"schedule is off the DDIM manifold at t={t}: "
            f"(1-alpha_bar)^2 + beta_bar^2 = {1 + s.compatibility_residual()[t]:.12g} != 1"
        )
    family = s.name[5:] if s.name.startswith("ddim-") else "custom"
    return DdimSchedule(s.alpha_bar_ddim(), family)


def power_family(
    name: str,
    T: int,
    beta_bar_T_sq: float = 1.0,
    a: float = 1.0,
    eta: float = 0.0,
    variance_mode: str = "rddm",
) -> CoefficientSchedule:
    """The mean / increasing / decreasing / dec-inc schedule rows.

    ``dec-inc`` is alpha decreasing with beta^2 increasing.
    """
    if name == "mean":
        alpha = power_schedule(T, 0.0)
        beta_sq = power_schedule(T, 0.0, total=beta_bar_T_sq)
    elif name == "increasing":
        alpha = power_schedule(T, a)
        beta_sq = power_schedule(T, a, total=beta_bar_T_sq)
    elif name == "decreasing":
        alpha = power_schedule(T, a, decreasing=True)
        beta_sq = power_schedule(T, a, decreasing=True, total=beta_bar_T_sq)
    elif name == "dec-inc":
        alpha = power_schedule(T, a, decreasing=True)
        beta_sq = power_schedule(T, a, total=beta_bar_T_sq)
    else:
        raise ScheduleError(f"unknown power family {name!r}; expected one of {FAMILIES_POWER}")
    return CoefficientSchedule.from_increments(alpha, beta_sq, eta=eta, variance_mode=variance_mode, name=name)


def make_schedule(
    family: str,
    T: int = 1000,
    beta_bar_T_sq: float = 1.0,
    eta: float = 0.0,
    variance_mode: str = "rddm",
) -> CoefficientSchedule:
    """Any shipped schedule by name (DDIM-derived or power family)."""
    if family in FAMILIES_DDIM:
        return ddim_to_rddm(make_ddim_schedule(T, family), eta, variance_mode)
    return power_family(family, T, beta_bar_T_sq, eta=eta, variance_mode=variance_mode)


def adjust_schedule(s: CoefficientSchedule, mode: str = "none", a: float = 1.0) -> CoefficientSchedule:
    """Replace the residual and/or noise cumulatives by power-family ones.

    ``alpha`` uses P(1 - x, a) with total 1; ``beta`` uses P(x, a) scaled
    by the schedule's terminal noise variance. Variances are recomputed
    from the new cumulatives with the schedule's eta and variance mode.
    """
    if mode not in ADJUST_MODES:
        raise ScheduleError(f"unknown adjust mode {mode!r}; expected one of {ADJUST_MODES}")
    if mode == "none":
        return s
    alpha, beta_sq = s.alpha[1:], s.beta_sq[1:]
    if mode in ("alpha", "alpha+beta"):
        alpha = power_schedule(s.T, a, decreasing=True)
    if mode in ("beta", "alpha+beta"):
        beta_sq = power_schedule(s.T, a, total=s.beta_bar_T_sq)
    out = CoefficientSchedule.from_increments(
        alpha, beta_sq, eta=s.eta, variance_mode=s.variance_mode, name=f"{s.name}+{mode}{a:g}"
    )
    if mode == "alpha":
        # Keep the noise cumulatives bit-identical to the input.
        out = replace(out, beta_bar=s.beta_bar, beta_sq=s.beta_sq, sigma=None)
    elif mode == "beta":
        out = replace(out, alpha_bar=s.alpha_bar, alpha=s.alpha, sigma=None)
    return out


def uniform_timesteps(T: int, steps: int) -> list[int]:
    """Strictly decreasing, uniformly spaced subsequence of 1..T starting at T."""
    if not 1 <= steps <= T:
        raise ScheduleError(f"steps must lie in [1, {T}], got {steps}")
    ts = np.round(np.linspace(T, 0, steps + 1)[:-1]).astype(int)
    ts = [int(t) for t in ts]
    if len(set(ts)) != steps or ts[-1] < 1:
        raise ScheduleError(f"cannot place {steps} distinct steps in 1..{T}")
    return ts


# -- CSV ---------------------------------------------------------------------

CSV_COLUMNS = ("t", "alpha", "beta_sq", "alpha_bar", "beta_bar", "sigma")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def schedule_to_csv(s: CoefficientSchedule) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for t in range(1, s.T + 1):
        w.writerow([t] + [_fmt(v) for v in (s.alpha[t], s.beta_sq[t], s.alpha_bar[t], s.beta_bar[t], s.sigma[t])])
    return buf.getvalue()


def schedule_from_csv(text: str, eta: float = 0.0, variance_mode: str = "rddm", name: str = "csv") -> CoefficientSchedule:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ScheduleError(f"schedule CSV must start with header {','.join(CSV_COLUMNS)}")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    if data.size == 0 or not np.array_equal(data[:, 0], np.arange(1, len(data) + 1)):
        raise ScheduleError("schedule CSV rows must cover t = 1..T in order")
    cols = {k: np.concatenate([[0.0], data[:, i]]) for i, k in enumerate(CSV_COLUMNS) if k != "t"}
    return CoefficientSchedule(
        cols["alpha"], cols["beta_sq"], cols["alpha_bar"], cols["beta_bar"],
        eta=eta, variance_mode=variance_mode, name=name, sigma=cols["sigma"],
    )

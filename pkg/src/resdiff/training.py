"""Losses, Adam, gradient checking, and the automatic objective selection loop.

Fixed objectives weight a residual term and a noise term::

    L = lambda_res * ||I_res - res_hat|| + lambda_eps * ||eps - eps_hat||

with an L1 or squared-L2 norm averaged over batch and dimensions.

Automatic objective selection (AOSA) trains one single-output network
whose output ``o`` is read both ways through a learnable weight ``lam``::

    res_hat = lam * o + (1 - lam) * f_res(o)      f_res: noise -> residual
    eps_hat = lam * f_eps(o) + (1 - lam) * o      f_eps: residual -> noise
    L = lam * ||I_res - res_hat||^2 + (1 - lam) * ||eps - eps_hat||^2

Once ``|lam - 0.5|`` reaches ``delta`` the choice is frozen (``lam`` snaps
to 1 for residual prediction or 0 for noise prediction), the network is
reinitialized, and training continues on the single chosen objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import TripletBatch
from .numerics import RandomStream
from .predictors import SINGULAR_GUARD, MlpModel, PathPoint, time_condition
from .schedules import CoefficientSchedule

NORMS = ("L1", "L2")


class TrainingError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lambda_res: int = 1
    lambda_eps: int = 0
    norm: str = "L2"

    def __post_init__(self):
        if self.lambda_res not in (0, 1) or self.lambda_eps not in (0, 1):
            raise ValueError("loss weights must be 0 or 1")
        if self.lambda_res + self.lambda_eps < 1:
            raise ValueError("at least one loss term must be active")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}; expected one of {NORMS}")


def _term(pred, true, norm: str):
    """Mean penalty of ``pred - true`` and its gradient w.r.t. ``pred``."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(true, dtype=np.float64)
    if norm == "L1":
        return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def loss(pred_res, true_res, pred_eps, true_eps, config: LossConfig) -> float:
    total = 0.0
    if config.lambda_res:
        total += _term(pred_res, true_res, config.norm)[0]
    if config.lambda_eps:
        total += _term(pred_eps, true_eps, config.norm)[0]
    return total


# -- AOSA ------------------------------------------------------------------------

UNDECIDED, SM_RES, SM_N = "undecided", "sm-res", "sm-n"


@dataclass
class AosaState:
    lambda_learn: float = 0.5
    delta: float = 0.01
    resolved: str = UNDECIDED
    iterations_elapsed: int = 0
    resolved_at: int | None = None
    reinit_seed: int | None = None


@dataclass
class AosaTerms:
    """Forward values of the AOSA loss for one batch, kept for backprop."""

    loss: float
    grad_out: np.ndarray
    grad_lambda: float


def aosa_terms(out, true_res, true_eps, i_t, i_in, alpha_bar, beta_bar, lam: float, norm: str = "L2") -> AosaTerms:
    """AOSA loss with gradients w.r.t. the network output and ``lam``.

    ``alpha_bar`` and ``beta_bar`` are per-sample column vectors (or scalars).
    """
    out = np.asarray(out, dtype=np.float64)
    ab = np.asarray(alpha_bar, dtype=np.float64)
    bb = np.asarray(beta_bar, dtype=np.float64)
    if np.any(np.abs(ab - 1.0) < SINGULAR_GUARD) or np.any(bb < SINGULAR_GUARD):
        raise ValueError("AOSA loss evaluated at a singular time step")
    base = np.asarray(i_t) - np.asarray(i_in)
    f_res = (base - bb * out) / (ab - 1.0)
    f_eps = (base - (ab - 1.0) * out) / bb
    k_res = -bb / (ab - 1.0)  # d f_res / d out
    k_eps = -(ab - 1.0) / bb  # d f_eps / d out
    res_hat = lam * out + (1.0 - lam) * f_res
    eps_hat = lam * f_eps + (1.0 - lam) * out
    lr, gr = _term(res_hat, true_res, norm)
    le, ge = _term(eps_hat, true_eps, norm)
    value = lam * lr + (1.0 - lam) * le
    grad_out = lam * gr * (lam + (1.0 - lam) * k_res) + (1.0 - lam) * ge * (lam * k_eps + (1.0 - lam))
    grad_lam = lr - le + lam * float(np.sum(gr * (out - f_res))) + (1.0 - lam) * float(np.sum(ge * (f_eps - out)))
    return AosaTerms(value, grad_out, grad_lam)


def loss_auto(i_out, true_res, true_eps, i_t, i_in, t, schedule: CoefficientSchedule, aosa: AosaState,
              norm: str = "L2") -> float:
    if aosa.resolved != UNDECIDED:
        raise ValueError("objective already resolved; use the fixed loss")
    t = np.atleast_1d(np.asarray(t))
    ab = schedule.alpha_bar[t][:, None]
    bb = schedule.beta_bar[t][:, None]
    return aosa_terms(i_out, true_res, true_eps, i_t, i_in, ab, bb, aosa.lambda_learn, norm).loss


def aosa_update(aosa: AosaState, model: MlpModel | None = None, base_seed: int = 0, optimizer=None) -> AosaState:
    """Freeze the objective once ``lam`` leaves the band ``0.5 +- delta``."""
    aosa.iterations_elapsed += 1
    if aosa.resolved != UNDECIDED or abs(aosa.lambda_learn - 0.5) < aosa.delta:
        return aosa
    if aosa.lambda_learn > 0.5:
        aosa.resolved, aosa.lambda_learn = SM_RES, 1.0
    else:
        aosa.resolved, aosa.lambda_learn = SM_N, 0.0
    aosa.resolved_at = aosa.iterations_elapsed
    aosa.reinit_seed = (int(base_seed) ^ aosa.iterations_elapsed) & ((1 << 63) - 1)
    if model is not None:
        model.reinitialize(aosa.reinit_seed)
    if optimizer is not None:
        optimizer.reset()
    return aosa


def resolved_loss_config(aosa: AosaState, norm: str) -> LossConfig:
    if aosa.resolved == SM_RES:
        return LossConfig(1, 0, norm)
    if aosa.resolved == SM_N:
        return LossConfig(0, 1, norm)
    raise ValueError("objective is not resolved yet")


# -- optimizer -------------------------------------------------------------------


class Adam:
    """Adam over a dict of named arrays, updated in place."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.reset()

    def reset(self):
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1**self.t)
            v_hat = self.v[k] / (1 - self.beta2**self.t)
            params[k] = params[k] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- batches, losses and gradients ------------------------------------------------


@dataclass
class TrainingBatch:
    """Network inputs and regression targets for one step."""

    x: np.ndarray
    i_in: np.ndarray
    cond: np.ndarray  # per-sample time condition
    res: np.ndarray
    eps: np.ndarray
    alpha_bar: np.ndarray  # (n, 1)
    beta_bar: np.ndarray  # (n, 1)


def make_batch(triplet: TripletBatch, t, schedule: CoefficientSchedule, eps, condition: str) -> TrainingBatch:
    t = np.asarray(t, dtype=np.int64)
    ab = schedule.alpha_bar[t][:, None]
    bb = schedule.beta_bar[t][:, None]
    x = triplet.i0 + ab * triplet.i_res + bb * eps
    cond = np.array([time_condition(condition, PathPoint(int(ti), float(a), float(b), schedule.T))
                     for ti, a, b in zip(t, ab[:, 0], bb[:, 0])])
    return TrainingBatch(x, triplet.i_in, cond, triplet.i_res, eps, ab, bb)


def objective(model: MlpModel, batch: TrainingBatch, config: LossConfig | None = None,
              lam: float | None = None, norm: str = "L2", with_grad: bool = True):
    """Loss and (optionally) parameter gradients and dL/dlam.

    Pass ``config`` for a fixed objective, or ``lam`` for the AOSA loss.
    """
    out, cache = model.forward(batch.x, batch.i_in, batch.cond, keep=True)
    g_lam = None
    if lam is None:
        if model.heads == 2:
            res_hat, eps_hat = model.split(out)
        else:
            res_hat = eps_hat = out
        value, g = 0.0, np.zeros_like(out)
        parts = []
        if config.lambda_res:
            v, gr = _term(res_hat, batch.res, config.norm)
            value += v
            parts.append(("res", gr))
        if config.lambda_eps:
            v, ge = _term(eps_hat, batch.eps, config.norm)
            value += v
            parts.append(("eps", ge))
        d = model.data_dim
        for which, gp in parts:
            if model.heads == 2:
                sl = slice(0, d) if which == "res" else slice(d, 2 * d)
                g[:, sl] += gp
            else:
                g += gp
    else:
        terms = aosa_terms(out, batch.res, batch.eps, batch.x, batch.i_in, batch.alpha_bar, batch.beta_bar, lam, norm)
        value, g, g_lam = terms.loss, terms.grad_out, terms.grad_lambda
    if not np.isfinite(value):
        raise TrainingError("non-finite loss")
    if not with_grad:
        return value
    return value, model.backward(cache, g), g_lam


def backprop_and_step(model: MlpModel, batch: TrainingBatch, optimizer: Adam, config: LossConfig | None = None,
                      aosa: AosaState | None = None, norm: str = "L2", lambda_optimizer: Adam | None = None,
                      iteration: int | None = None) -> float:
    lam = None if aosa is None or aosa.resolved != UNDECIDED else aosa.lambda_learn
    if lam is None and config is None:
        config = resolved_loss_config(aosa, norm)
    try:
        value, grads, g_lam = objective(model, batch, config, lam, norm)
    except TrainingError:
        raise TrainingError(f"non-finite loss at iteration {iteration}") from None
    optimizer.step(model.params, grads)
    if lam is not None:
        box = {"lam": np.array(lam)}
        (lambda_optimizer or optimizer).step(box, {"lam": np.array(g_lam)})
        aosa.lambda_learn = float(np.clip(box["lam"], 0.0, 1.0))
    return value


# -- gradient checking -----------------------------------------------------------------


def _residual_signs(model, batch, config, lam, norm):
    """Signs of the penalized differences; used to detect L1 kinks."""
    out = model.forward(batch.x, batch.i_in, batch.cond)
    if lam is not None:
        ab, bb = batch.alpha_bar, batch.beta_bar
        base = batch.x - batch.i_in
        f_res = (base - bb * out) / (ab - 1.0)
        f_eps = (base - (ab - 1.0) * out) / bb
        return np.concatenate([np.sign(lam * out + (1 - lam) * f_res - batch.res).ravel(),
                               np.sign(lam * f_eps + (1 - lam) * out - batch.eps).ravel()])
    if model.heads == 2:
        r, e = model.split(out)
    else:
        r = e = out
    return np.concatenate([np.sign(r - batch.res).ravel(), np.sign(e - batch.eps).ravel()])


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped_kinks: int
    lambda_rel_error: float | None = None
    worst: tuple = field(default=())


def rel_error(a: float, n: float, floor: float = 0.0) -> float:
    scale = max(abs(a), abs(n), floor)
    return 0.0 if scale == 0 else abs(a - n) / scale


def fd_floor(loss_value: float, h: float, rtol: float) -> float:
    """Smallest gradient a central difference can resolve to ``rtol``.

    Rounding in the two loss evaluations limits the difference quotient to
    an absolute accuracy of about ``eps * |L| / h``; gradients below that
    divided by ``rtol`` are compared on this absolute scale instead.
    """
    return np.finfo(np.float64).eps * abs(loss_value) / (h * rtol)


def grad_check(model: MlpModel, batch: TrainingBatch, config: LossConfig | None = None, lam: float | None = None,
               norm: str = "L2", h: float = 1e-5, n_params: int | None = None, stream: RandomStream | None = None,
               corrupt: float = 0.0, rtol: float = 1e-5) -> GradCheckResult:
    """Compare analytic gradients with central differences.

    Checks every parameter when the model has at most 10^4 of them (or
    ``n_params`` is None and the model is small); otherwise ``n_params``
    entries drawn uniformly. Under L1, entries whose +-h perturbation flips
    the sign of any penalized difference sit on a kink and are skipped.
    ``corrupt`` scales the analytic gradient by ``1 + corrupt`` to test the
    detector itself. Relative errors use :func:`fd_floor` as the smallest
    denominator.
    """
    l1 = (config.norm if config is not None else norm) == "L1"
    value, grads, g_lam = objective(model, batch, config, lam, norm)
    floor = fd_floor(value, h, rtol)
    index = [(k, i) for k, p in model.params.items() for i in range(p.size)]
    if n_params is not None and n_params < len(index):
        stream = stream or RandomStream(0, lane=3)
        picks = stream.integers(0, len(index) - 1, (n_params,))
        index = [index[i] for i in picks]
    elif len(index) > 10_000:
        raise ValueError("model too large for an exhaustive check; pass n_params")
    base_signs = _residual_signs(model, batch, config, lam, norm) if l1 else None
    worst, worst_at, skipped = 0.0, (), 0
    for k, i in index:
        p = model.params[k].reshape(-1)
        old = p[i]
        p[i] = old + h
        lp = objective(model, batch, config, lam, norm, with_grad=False)
        sp = _residual_signs(model, batch, config, lam, norm) if l1 else None
        p[i] = old - h
        lm = objective(model, batch, config, lam, norm, with_grad=False)
        sm = _residual_signs(model, batch, config, lam, norm) if l1 else None
        p[i] = old
        if l1 and (np.any(sp != base_signs) or np.any(sm != base_signs)):
            skipped += 1
            continue
        num = (lp - lm) / (2 * h)
        ana = grads[k].reshape(-1)[i] * (1.0 + corrupt)
        err = rel_error(ana, num, floor)
        if err > worst:
            worst, worst_at = err, (k, i, ana, num)
    lam_err = None
    if lam is not None:
        lp = objective(model, batch, config, lam + h, norm, with_grad=False)
        lm = objective(model, batch, config, lam - h, norm, with_grad=False)
        lam_err = rel_error(g_lam * (1.0 + corrupt), (lp - lm) / (2 * h), floor)
        worst = max(worst, lam_err)
    return GradCheckResult(worst, len(index) - skipped, skipped, lam_err, worst_at)


# -- training loops -----------------------------------------------------------------------


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    aosa_lr: float = 1e-3
    norm: str = "L2"
    condition: str = "index"
    seed: int = 0
    delta: float = 0.01
    stop_when_resolved: bool = False


@dataclass
class LogRow:
    iteration: int
    loss: float
    lambda_learn: float
    resolved: str


def _sample_times(stream: RandomStream, schedule: CoefficientSchedule, n: int, avoid_singular: bool) -> np.ndarray:
    t = stream.integers(1, schedule.T, (n,))
    if not avoid_singular:
        return t
    for _ in range(1000):
        bad = (np.abs(schedule.alpha_bar[t] - 1.0) < SINGULAR_GUARD) | (schedule.beta_bar[t] < SINGULAR_GUARD)
        if not bad.any():
            return t
        t[bad] = stream.integers(1, schedule.T, (int(bad.sum()),))
    raise TrainingError("could not draw a non-singular time step; the schedule is singular almost everywhere")


def train(model: MlpModel, task, schedule: CoefficientSchedule, cfg: TrainConfig, loss_config: LossConfig | None = None,
          aosa: AosaState | None = None, log_every: int = 1, callback=None) -> list[LogRow]:
    """Fit ``model`` on fresh task draws for ``cfg.iterations`` steps.

    Pass ``aosa`` to run automatic objective selection; otherwise
    ``loss_config`` picks the fixed objective.
    """
    from .tasks import make_dataset

    stream = RandomStream(cfg.seed, lane=4)
    opt = Adam(cfg.lr)
    lam_opt = Adam(cfg.aosa_lr)
    log = []
    for it in range(1, cfg.iterations + 1):
        trip = make_dataset(task, cfg.batch_size, stream)
        undecided = aosa is not None and aosa.resolved == UNDECIDED
        t = _sample_times(stream, schedule, cfg.batch_size, undecided)
        eps = stream.normal(trip.i0.shape)
        batch = make_batch(trip, t, schedule, eps, cfg.condition)
        value = backprop_and_step(model, batch, opt, loss_config, aosa, cfg.norm, lam_opt, it)
        if aosa is not None:
            aosa_update(aosa, model, cfg.seed, opt if undecided else None)
        if it % log_every == 0 or it == cfg.iterations or (aosa is not None and aosa.resolved_at == it):
            lam = aosa.lambda_learn if aosa is not None else float("nan")
            state = aosa.resolved if aosa is not None else "fixed"
            log.append(LogRow(it, value, lam, state))
        if callback is not None:
            callback(it, value, aosa)
        if cfg.stop_when_resolved and aosa is not None and aosa.resolved != UNDECIDED:
            break
    return log

"""The invariant suite behind ``resdiff verify``.

Each check yields one :class:`CheckResult` row: a statistic, the bound it
must stay under, and whether it did. ``CHECK_INVENTORY`` lists every row
name in report order; ``run_checks`` always returns exactly that many rows.

Inventory
---------
rng-normal-mean, rng-normal-var
    10^5 standard normals: |mean| < 4/sqrt(N), |var - 1| < 0.02.
schedule-normalization
    every power-family schedule ends at abar_T = 1, bbar_T^2 = target.
schedule-differencing
    cumulatives rebuilt from per-step increments match the stored ones.
sum-constraint
    sum_t sigma_t^2 (eta = 1, rddm variance) <= bbar_T^2 for all shipped families.
variance-dominance
    rddm-mode variances never exceed ddim-mode variances on DDIM-derived schedules.
schedule-roundtrip
    DDIM -> residual/noise coefficients -> DDIM reproduces the cumulative products.
forward-algebraic
    the two closed forms of the forward marginal agree.
forward-telescoping-mean, forward-telescoping-var
    T = 50 stepwise forward runs, 10^5 paths, against closed-form moments.
marginal-preservation-mean, marginal-preservation-var
    posterior transfer from the exact marginal at t lands on the marginal at
    t_prev; 5 (t, t_prev) pairs per family, 10^5 samples, eta = 1.
ddim-equivalence
    SM-N on converted DDIM coefficients against the reference implicit
    sampler, 10/20/100 steps, eta in {0, 1}, max abs error per step.
ground-truth-reversibility
    replaying recorded residual and noise recovers I_0 for every method,
    path mode and subsequence length.
conversion-roundtrip
    residual -> noise -> residual and noise -> residual -> noise.
singular-guards
    both conversions raise at their singular points (statistic = misses).
grad-check-l2, grad-check-l1, grad-check-aosa
    analytic against central-difference gradients on a small MLP.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .forward import DiffusionState, TripletBatch, forward_step, synthesize, synthesize_from_input
from .numerics import RandomStream
from .predictors import (
    FixedNoisePredictor,
    GroundTruthPredictor,
    MlpModel,
    SingularConversionError,
    noise_to_residual,
    residual_to_noise,
)
from .sampler import METHODS, PATH_MODES, SamplingPlan, ddim_sample, posterior_params, sample
from .schedules import (
    FAMILIES_DDIM,
    FAMILIES_POWER,
    ddim_to_rddm,
    make_ddim_schedule,
    make_schedule,
    rddm_to_ddim,
)
from .training import LossConfig, grad_check, make_batch

CHECK_INVENTORY = (
    "rng-normal-mean",
    "rng-normal-var",
    "schedule-normalization",
    "schedule-differencing",
    "sum-constraint",
    "variance-dominance",
    "schedule-roundtrip",
    "forward-algebraic",
    "forward-telescoping-mean",
    "forward-telescoping-var",
    "marginal-preservation-mean",
    "marginal-preservation-var",
    "ddim-equivalence",
    "ground-truth-reversibility",
    "conversion-roundtrip",
    "singular-guards",
    "grad-check-l2",
    "grad-check-l1",
    "grad-check-aosa",
)

ALL_FAMILIES = FAMILIES_DDIM + FAMILIES_POWER
MARGINAL_PAIRS = ((1000, 900), (700, 500), (500, 499), (200, 100), (50, 10))
DDIM_STEPS = (10, 20, 100)


@dataclass
class CheckResult:
    name: str
    statistic: float
    bound: float
    passed: bool
    detail: str = ""


def _row(name, stat, bound, detail="") -> CheckResult:
    stat = float(stat)
    return CheckResult(name, stat, float(bound), bool(stat < bound), detail)


# -- individual checks ---------------------------------------------------------------


def check_rng(n: int = 100_000, seed: int = 0):
    x = RandomStream(seed).normal((n,))
    return [
        _row("rng-normal-mean", abs(x.mean()) * np.sqrt(n) / 4.0, 1.0, "|mean| in units of 4/sqrt(N)"),
        _row("rng-normal-var", abs(x.var() - 1.0), 0.02),
    ]


def check_schedules(T: int = 1000):
    norm, diff, total, dom, trip = 0.0, 0.0, 0.0, 0.0, 0.0
    for fam in FAMILIES_POWER:
        for target in (1.0, 0.01):
            s = make_schedule(fam, T, target)
            norm = max(norm, abs(s.alpha_bar[-1] - 1.0), abs(s.beta_bar_T_sq - target))
    for fam in ALL_FAMILIES:
        s = make_schedule(fam, T, eta=1.0, variance_mode="rddm")
        diff = max(diff, np.abs(np.cumsum(s.alpha[1:]) - s.alpha_bar[1:]).max(),
                   np.abs(np.cumsum(s.beta_sq[1:]) - s.beta_bar[1:] ** 2).max())
        total = max(total, np.sum(s.sigma[1:] ** 2) - s.beta_bar_T_sq)
    for fam in FAMILIES_DDIM:
        d = make_ddim_schedule(T, fam)
        r = ddim_to_rddm(d, eta=1.0, variance_mode="rddm")
        g = ddim_to_rddm(d, eta=1.0, variance_mode="ddim")
        dom = max(dom, np.max(r.sigma[1:] ** 2 - g.sigma[1:] ** 2))
        trip = max(trip, np.abs(rddm_to_ddim(ddim_to_rddm(d)).alpha_bar_ddim - d.alpha_bar_ddim).max())
    return [
        _row("schedule-normalization", norm, 1e-12),
        _row("schedule-differencing", diff, 1e-12),
        # Exact: any positive excess fails; 1e-12 is rounding slack only.
        _row("sum-constraint", max(total, 0.0), 1e-12, "max(sum sigma^2 - bbar_T^2, 0)"),
        _row("variance-dominance", max(dom, 0.0), 1e-9, "max(sigma_rddm^2 - sigma_ddim^2, 0)"),
        _row("schedule-roundtrip", trip, 1e-12),
    ]


def _fixed_pair(dim: int = 2):
    i0 = np.array([0.3, -0.2])[:dim]
    i_res = np.array([-0.5, 0.8])[:dim]
    return i0, i_res


def check_forward(n: int = 100_000, T: int = 50, seed: int = 1):
    i0, i_res = _fixed_pair()
    alg = 0.0
    worst_mean, worst_var = 0.0, 0.0
    for k, fam in enumerate(("dec-inc", "linear")):
        s = make_schedule(fam, T)
        rs = RandomStream(seed, lane=10 + k)
        trip = TripletBatch.from_pair(np.tile(i0, (8, 1)), np.tile(i0 + i_res, (8, 1)))
        for t in (1, T // 2, T):
            st, eps = synthesize(trip, t, s, rs)
            alg = max(alg, np.abs(st.x - synthesize_from_input(trip.i_in, trip.i_res, t, s, eps)).max())
        state = DiffusionState(np.tile(i0, (n, 1)), 0, s)
        res = np.tile(i_res, (n, 1))
        for t in range(1, T + 1):
            state = forward_step(state, res, rs)
            if t in (1, T // 2, T):
                bb = s.beta_bar[t]
                mean_err = np.abs(state.x.mean(0) - (i0 + s.alpha_bar[t] * i_res)).max()
                worst_mean = max(worst_mean, mean_err / (4 * bb / np.sqrt(n)))
                worst_var = max(worst_var, np.abs(state.x.var(0) / bb**2 - 1.0).max())
    return [
        _row("forward-algebraic", alg, 1e-12),
        _row("forward-telescoping-mean", worst_mean, 1.0, "mean error in units of 4 bbar_t/sqrt(N)"),
        _row("forward-telescoping-var", worst_var, 0.02),
    ]


def marginal_transfer_errors(schedule, pairs=MARGINAL_PAIRS, n: int = 100_000, stream=None):
    """Worst normalized mean error and relative variance error of one posterior transfer."""
    stream = stream or RandomStream(2, lane=11)
    i0, i_res = _fixed_pair()
    worst_mean, worst_var = 0.0, 0.0
    for t, p in pairs:
        x_t = i0 + schedule.alpha_bar[t] * i_res + schedule.beta_bar[t] * stream.normal((n, 2))
        mean, sd = posterior_params(x_t, i0, i_res, t, p, schedule)
        x_p = mean + sd * stream.normal((n, 2))
        bp = schedule.beta_bar[p]
        mean_err = np.abs(x_p.mean(0) - (i0 + schedule.alpha_bar[p] * i_res)).max()
        worst_mean = max(worst_mean, mean_err / (4 * bp / np.sqrt(n)))
        worst_var = max(worst_var, np.abs(x_p.var(0) / bp**2 - 1.0).max())
    return worst_mean, worst_var


def check_marginals(n: int = 100_000, T: int = 1000):
    worst_mean, worst_var = 0.0, 0.0
    stream = RandomStream(2, lane=11)
    for fam in ALL_FAMILIES:
        s = make_schedule(fam, T, eta=1.0, variance_mode="rddm")
        m, v = marginal_transfer_errors(s, n=n, stream=stream)
        worst_mean, worst_var = max(worst_mean, m), max(worst_var, v)
    return [
        _row("marginal-preservation-mean", worst_mean, 1.0, "mean error in units of 4 bbar_prev/sqrt(N)"),
        _row("marginal-preservation-var", worst_var, 0.02),
    ]


def ddim_equivalence_error(steps: int, eta: float, T: int = 1000, n: int = 64, fault: bool = False) -> float:
    """Max per-step |SM-N - reference| with a shared noise predictor and shared draws."""
    d = make_ddim_schedule(T, "linear")
    s = ddim_to_rddm(d, eta=eta, variance_mode="ddim")
    pred = FixedNoisePredictor(2, 0)
    plan = SamplingPlan.uniform(T, steps, eta=eta, method="SM-N")
    x_T = RandomStream(5).normal((n, 2))
    _, ours = sample(plan, pred, np.zeros((n, 2)), s, RandomStream(9), x_init=x_T, trace=True, fault=fault)
    _, ref = ddim_sample(plan.timesteps, pred, d, x_T, eta, RandomStream(9), trace=True)
    return float(np.abs(ours - ref).max())


def check_ddim(fault: bool = False):
    worst = max(ddim_equivalence_error(k, eta, fault=fault) for k in DDIM_STEPS for eta in (0.0, 1.0))
    return [_row("ddim-equivalence", worst, 1e-9)]


def ground_truth_recovery_error(schedule, steps=(2, 5, 10, None), methods=METHODS, path_modes=PATH_MODES,
                                n: int = 16, dim: int = 3, seed: int = 1, fault: bool = False) -> float:
    rs = RandomStream(seed, lane=12)
    trip = TripletBatch.from_pair(rs.normal((n, dim)), rs.normal((n, dim)))
    start, eps = synthesize(trip, schedule.T, schedule, rs)
    gt = GroundTruthPredictor(trip.i_res, eps)
    worst = 0.0
    for method in methods:
        for mode in path_modes:
            for k in steps:
                plan = SamplingPlan.uniform(schedule.T, k or schedule.T, method=method, path_mode=mode)
                out = sample(plan, gt, trip.i_in, schedule, rs, x_init=start.x, fault=fault)
                worst = max(worst, float(np.abs(out - trip.i0).max()))
    return worst


def check_ground_truth(fault: bool = False):
    # Power schedules end at abar_T = 1, where SM-N's conversion is singular;
    # the DDIM-derived schedule keeps abar < 1 and covers SM-N.
    worst = max(
        ground_truth_recovery_error(make_schedule("dec-inc", 1000, 0.01), methods=("SM-Res", "SM-Res-N"), fault=fault),
        ground_truth_recovery_error(make_schedule("mean", 1000), methods=("SM-Res", "SM-Res-N"), fault=fault),
        ground_truth_recovery_error(ddim_to_rddm(make_ddim_schedule(1000, "linear")), fault=fault),
    )
    return [_row("ground-truth-reversibility", worst, 1e-10)]


def check_conversions(n: int = 1000, seed: int = 3):
    rs = RandomStream(seed, lane=13)
    worst, misses = 0.0, 0
    for fam in ("linear", "dec-inc"):
        s = make_schedule(fam, 1000)
        for t in (1, 10, 250, 500, 999):
            ab, bb = s.alpha_bar[t], s.beta_bar[t]
            if abs(ab - 1) < 1e-8 or bb < 1e-8:
                continue
            x, i_in, res, eps = (rs.normal((n, 2)) for _ in range(4))
            back = noise_to_residual(residual_to_noise(res, x, i_in, ab, bb), x, i_in, ab, bb)
            fwd = residual_to_noise(noise_to_residual(eps, x, i_in, ab, bb), x, i_in, ab, bb)
            worst = max(worst, np.abs(back - res).max(), np.abs(fwd - eps).max())
    z = np.zeros(2)
    for fn, ab, bb in ((noise_to_residual, 1.0, 0.5), (residual_to_noise, 0.5, 0.0)):
        try:
            fn(z, z, z, ab, bb)
            misses += 1
        except SingularConversionError:
            pass
    return [_row("conversion-roundtrip", worst, 1e-12), _row("singular-guards", misses, 0.5, "unraised guards")]


def _gradcheck_batch(seed: int = 3):
    from .tasks import make_dataset, make_task

    rs = RandomStream(seed, lane=14)
    task = make_task("shade-restore")
    s = make_schedule("dec-inc", 1000, 0.01)
    trip = make_dataset(task, 4, rs)
    t = rs.integers(1, 990, (4,))
    return task, make_batch(trip, t, s, rs.normal(trip.i0.shape), "index")


def check_gradients(hidden: int = 16):
    task, batch = _gradcheck_batch()
    one = MlpModel(task.data_dim, hidden=hidden, heads=1, seed=1)
    two = MlpModel(task.data_dim, hidden=hidden, heads=2, seed=1)
    l2 = max(grad_check(one, batch, LossConfig(1, 0, "L2")).max_rel_error,
             grad_check(two, batch, LossConfig(1, 1, "L2")).max_rel_error)
    l1 = max(grad_check(one, batch, LossConfig(0, 1, "L1")).max_rel_error,
             grad_check(two, batch, LossConfig(1, 1, "L1")).max_rel_error)
    ra = grad_check(one, batch, lam=0.37, norm="L2")
    rb = grad_check(one, batch, lam=0.37, norm="L1")
    aosa = max(ra.max_rel_error, ra.lambda_rel_error, rb.max_rel_error, rb.lambda_rel_error)
    return [_row("grad-check-l2", l2, 1e-5), _row("grad-check-l1", l1, 1e-5), _row("grad-check-aosa", aosa, 1e-5)]


# -- suite -------------------------------------------------------------------------


def run_checks(fault: bool = False, log=None) -> list[CheckResult]:
    """Run the whole inventory. ``fault`` breaks the reverse update on purpose."""
    groups = (
        check_rng,
        check_schedules,
        check_forward,
        check_marginals,
        lambda: check_ddim(fault),
        lambda: check_ground_truth(fault),
        check_conversions,
        check_gradients,
    )
    rows = []
    for group in groups:
        t0 = time.perf_counter()
        out = group()
        if log is not None:
            log(f"{', '.join(r.name for r in out)}: {time.perf_counter() - t0:.1f}s")
        rows += out
    names = tuple(r.name for r in rows)
    if names != CHECK_INVENTORY:
        raise RuntimeError(f"check inventory mismatch: {names}")
    return rows


def write_report(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check-name", "statistic", "bound", "pass"])
        for r in rows:
            w.writerow([r.name, "%.6g" % r.statistic, "%.6g" % r.bound, "true" if r.passed else "false"])
    return path

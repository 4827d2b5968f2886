"""Command-line front end: ``resdiff <command> [--config FILE] [key=value ...]``.

Configuration is a flat ``key=value`` text file (``#`` starts a comment).
Later sources win: built-in defaults, then ``--config``, then overrides
given as ``key=value`` or ``--key value`` / ``--key=value``. Unknown keys
are rejected. Keys whose default is ``auto`` take their value from the task
preset or the command; the fully resolved configuration is written as
``config.resolved`` next to every run's outputs, and feeding it back with
``--config`` reproduces the run bit for bit.

Outputs go to ``$RESDIFF_OUTPUT_ROOT/<output>`` (root defaults to ``runs``,
``output`` defaults to the command name).

Exit codes: 0 success, 1 a verification check failed, 2 configuration
error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import fileio
from .experiments import path_experiment
from .forward import synthesize
from .metrics import energy_distance, moment_distance, mse_psnr, null_quantile
from .numerics import RandomStream
from .predictors import (
    GaussianOraclePredictor,
    GroundTruthPredictor,
    MlpModel,
    MlpPredictor,
    PairedPredictor,
    SingularConversionError,
    default_condition,
)
from .sampler import METHODS, PATH_MODES, PlanError, SamplingPlan, sample
from .schedules import (
    ADJUST_MODES,
    FAMILIES_DDIM,
    FAMILIES_POWER,
    VARIANCE_MODES,
    ScheduleError,
    adjust_schedule,
    ddim_to_rddm,
    make_ddim_schedule,
    power_family,
    rddm_to_ddim,
    schedule_to_csv,
)
from .tasks import PRESETS, gaussian_params, make_dataset, make_task
from .training import AosaState, LossConfig, TrainConfig, TrainingError, train
from .verify import run_checks, write_report

COMMANDS = ("schedule", "verify", "sample", "train", "aosa", "path-experiment")
OUTPUT_ROOT_ENV = "RESDIFF_OUTPUT_ROOT"
CONFIG_NAME = "config.resolved"
ENERGY_MAX_SAMPLES = 4000
OBJECTIVES = {"SM-Res": ("residual", 1.0, 0.0), "SM-N": ("noise", 0.0, 1.0), "SM-Res-N": ("both", 1.0, 1.0)}


class ConfigError(ValueError):
    pass


# -- configuration -------------------------------------------------------------------


def _choice(options):
    def parse(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return parse


def _positive_int(v):
    n = int(v)
    if n < 1:
        raise ValueError("must be a positive integer")
    return n


def _count(v):
    n = int(v)
    if n < 0:
        raise ValueError("must be a non-negative integer")
    return n


def _positive_float(v):
    x = float(v)
    if not x > 0:
        raise ValueError("must be positive")
    return x


def _unit_float(v):
    x = float(v)
    if not 0.0 <= x <= 1.0:
        raise ValueError("must lie in [0, 1]")
    return x


def _bool(v):
    if v.lower() in ("true", "1", "yes"):
        return True
    if v.lower() in ("false", "0", "no"):
        return False
    raise ValueError("expected true or false")


def _floats(v):
    xs = [float(x) for x in v.split(",") if x.strip()]
    if not xs or any(not x > 0 for x in xs):
        raise ValueError("expected a comma-separated list of positive numbers")
    return xs


def _text(v):
    return v


FAMILIES = FAMILIES_DDIM + FAMILIES_POWER

# key -> (default, parser). "auto" is resolved per task and command.
KEYS = {
    "task": ("gaussian-2d", _choice(tuple(PRESETS))),
    "T": ("1000", _positive_int),
    "schedule": ("auto", _choice(FAMILIES)),
    "beta_bar_T_sq": ("auto", _positive_float),
    "normalize_terminal": ("true", _bool),
    "adjust": ("none", _choice(ADJUST_MODES)),
    "adjust_exponent": ("1", _positive_float),
    "eta": ("0", _unit_float),
    "variance_mode": ("rddm", _choice(VARIANCE_MODES)),
    "method": ("SM-Res-N", _choice(METHODS)),
    "path_mode": ("simultaneous", _choice(PATH_MODES)),
    "steps": ("10", _positive_int),
    "on_singular": ("raise", _choice(("raise", "clamp"))),
    "predictor": ("oracle", _choice(("oracle", "ground-truth", "checkpoint", "paired"))),
    "checkpoint": ("", _text),
    "residual_checkpoint": ("", _text),
    "noise_checkpoint": ("", _text),
    "n_samples": ("1000", _positive_int),
    "seed": ("0", _count),
    "trace": ("false", _bool),
    "n_images": ("8", _count),
    "null_reps": ("200", _positive_int),
    "objective": ("SM-Res", _choice(tuple(OBJECTIVES))),
    "loss": ("auto", _choice(("L1", "L2"))),
    "condition": ("auto", _choice(("index", "alpha", "beta"))),
    "hidden": ("128", _positive_int),
    "iterations": ("auto", _positive_int),
    "batch_size": ("auto", _positive_int),
    "lr": ("auto", _positive_float),
    "aosa_lr": ("auto", _positive_float),
    "delta": ("0.01", _positive_float),
    "log_every": ("10", _positive_int),
    "exponents": ("0.5,1,2,5", _floats),
    "output": ("auto", _text),
    "fault": ("false", _bool),
}


def parse_config_text(text: str, source: str = "config") -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _overrides(tokens) -> dict:
    out = {}
    it = iter(tokens)
    for tok in it:
        if tok.startswith("--"):
            tok = tok[2:]
            if "=" not in tok:
                try:
                    tok = f"{tok}={next(it)}"
                except StopIteration:
                    raise ConfigError(f"flag --{tok} needs a value") from None
        if "=" not in tok:
            raise ConfigError(f"expected key=value, got {tok!r}")
        key, value = tok.split("=", 1)
        out[key.strip().replace("-", "_") if key.strip() not in KEYS else key.strip()] = value.strip()
    return out


def load_config(command: str, config_file=None, overrides=None) -> dict:
    """Merge defaults, file and overrides, then parse and resolve every key."""
    raw = {k: v for k, (v, _) in KEYS.items()}
    sources = []
    if config_file:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        sources.append(parse_config_text(path.read_text(), str(path)))
    sources.append(dict(overrides or {}))
    for src in sources:
        for key, value in src.items():
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            raw[key] = value
    cfg = {}
    for key, value in raw.items():
        if value == "auto":
            cfg[key] = "auto"
            continue
        try:
            cfg[key] = KEYS[key][1](value)
        except ValueError as e:
            raise ConfigError(f"invalid value {value!r} for key {key!r}: {e}") from None
    return _resolve(command, cfg)


def _resolve(command: str, cfg: dict) -> dict:
    task = make_task(cfg["task"])
    auto = {
        "schedule": task.schedule_family,
        "beta_bar_T_sq": task.beta_bar_T_sq,
        "loss": task.loss_norm,
        "batch_size": task.batch_size,
        "lr": task.lr,
        "iterations": 5000 if command == "aosa" else 2000,
        "output": command,
    }
    for key, value in auto.items():
        if cfg[key] == "auto":
            cfg[key] = value
    if cfg["aosa_lr"] == "auto":
        cfg["aosa_lr"] = cfg["lr"]
    if cfg["condition"] == "auto":
        cfg["condition"] = "index" if command == "aosa" else default_condition(OBJECTIVES[cfg["objective"]][0])
    if cfg["schedule"] in FAMILIES_DDIM and abs(cfg["beta_bar_T_sq"] - 1.0) > 1e-12:
        raise ConfigError(
            f"invalid value {cfg['beta_bar_T_sq']!r} for key 'beta_bar_T_sq': "
            f"DDIM-derived schedule {cfg['schedule']!r} fixes it at 1"
        )
    if cfg["steps"] > cfg["T"]:
        raise ConfigError(f"invalid value {cfg['steps']!r} for key 'steps': exceeds T={cfg['T']}")
    return cfg


def format_config(cfg: dict) -> str:
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, list):
            return ",".join(repr(float(x)) for x in v)
        return str(v)

    return "".join(f"{k}={fmt(cfg[k])}\n" for k in KEYS)


def output_dir(cfg: dict) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    out = root / cfg["output"]
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text(format_config(cfg))
    return out


# -- shared builders ---------------------------------------------------------------------


def build_schedule(cfg: dict, exact: bool = False):
    """The run's coefficient schedule; ``exact`` skips terminal normalization."""
    fam, T = cfg["schedule"], cfg["T"]
    kw = dict(eta=cfg["eta"], variance_mode=cfg["variance_mode"])
    if fam in FAMILIES_DDIM:
        s = ddim_to_rddm(make_ddim_schedule(T, fam), normalize_terminal=cfg["normalize_terminal"] and not exact, **kw)
    else:
        s = power_family(fam, T, cfg["beta_bar_T_sq"], **kw)
    return adjust_schedule(s, cfg["adjust"], cfg["adjust_exponent"])


def _load(path_key: str, cfg: dict):
    path = cfg[path_key]
    if not path:
        raise ConfigError(f"key {path_key!r} must name a checkpoint file")
    try:
        return fileio.load_checkpoint(path)
    except FileNotFoundError as e:
        raise ConfigError(f"invalid value {path!r} for key {path_key!r}: {e}") from None


def build_predictor(cfg: dict, task, triplet, schedule, stream):
    """Returns ``(predictor, x_init)``; only ground-truth replay fixes the start."""
    kind = cfg["predictor"]
    if kind == "oracle":
        if task.name != "gaussian-2d":
            raise ConfigError(f"invalid value 'oracle' for key 'predictor': no analytic oracle for {task.name!r}")
        return GaussianOraclePredictor(gaussian_params()), None
    if kind == "ground-truth":
        start, eps = synthesize(triplet, schedule.T, schedule, stream)
        return GroundTruthPredictor(triplet.i_res, eps), start.x
    if kind == "checkpoint":
        return _load("checkpoint", cfg), None
    return PairedPredictor(_load("residual_checkpoint", cfg), _load("noise_checkpoint", cfg)), None


def _check_data_dim(predictor, task):
    models = [p.model for p in (predictor, getattr(predictor, "residual", None), getattr(predictor, "noise", None))
              if isinstance(p, MlpPredictor)]
    for m in models:
        if m.data_dim != task.data_dim:
            raise ConfigError(f"checkpoint data dimension {m.data_dim} does not match task {task.name!r}")


# -- commands ------------------------------------------------------------------------------


def cmd_schedule(cfg: dict, out: Path | None = None, echo=print) -> dict:
    """Export the schedule under both variance modes and report the noise budget."""
    out = out or output_dir(cfg)
    base = build_schedule(cfg)
    summary = {"beta_bar_T_sq": base.beta_bar_T_sq, "alpha_bar_T": float(base.alpha_bar[-1])}
    for mode in VARIANCE_MODES:
        s = base.with_variance(cfg["eta"], mode)
        (out / f"schedule-{mode}.csv").write_text(schedule_to_csv(s))
        total = float(np.sum(s.sigma[1:] ** 2))
        summary[f"sigma_sq_sum_{mode}"] = total
        echo(f"{mode}: sum sigma^2 = {total:.12g} (beta_bar_T^2 = {base.beta_bar_T_sq:.12g}, eta = {cfg['eta']:g})")
    try:
        d = rddm_to_ddim(build_schedule(cfg, exact=True))
        fileio.write_rows(out / "ddim-products.csv", ["t", "alpha_bar_ddim"],
                          ([t, float(v)] for t, v in enumerate(d.alpha_bar_ddim)))
        summary["ddim_roundtrip"] = True
        echo("converted back to cumulative products: ddim-products.csv")
    except ScheduleError as e:
        summary["ddim_roundtrip"] = False
        echo(f"no cumulative-product form: {e}")
    echo(f"alpha_bar_T = {summary['alpha_bar_T']:.17g}")
    return summary


def cmd_verify(cfg: dict, out: Path | None = None, echo=print) -> dict:
    out = out or output_dir(cfg)
    rows = run_checks(fault=cfg["fault"], log=echo)
    write_report(out / "verify-report.csv", rows)
    for r in rows:
        echo(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.statistic:.3g} < {r.bound:.3g}")
    failed = [r.name for r in rows if not r.passed]
    return {"rows": rows, "failed": failed}


def cmd_sample(cfg: dict, out: Path | None = None, echo=print) -> dict:
    out = out or output_dir(cfg)
    task = make_task(cfg["task"])
    schedule = build_schedule(cfg)
    n, seed = cfg["n_samples"], cfg["seed"]
    triplet = make_dataset(task, n, RandomStream(seed, lane=20))
    stream = RandomStream(seed, lane=21)
    predictor, x_init = build_predictor(cfg, task, triplet, schedule, stream)
    _check_data_dim(predictor, task)
    plan = SamplingPlan.uniform(schedule.T, cfg["steps"], eta=cfg["eta"], method=cfg["method"],
                                path_mode=cfg["path_mode"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = sample(plan, predictor, triplet.i_in, schedule, stream, x_init=x_init, trace=cfg["trace"],
                        on_singular=cfg["on_singular"])
    for w in caught:
        echo(f"warning: {w.message}")
    x, traj = result if cfg["trace"] else (result, None)
    fileio.write_samples(out / "samples.csv", x)
    if traj is not None:
        fileio.write_trajectory(out / "trajectory.csv", traj, fileio.trajectory_times(plan))
    metrics = {}
    if task.mode == "generation":
        ref = task.target_sampler(RandomStream(seed, lane=22), n)
        metrics["moment_distance"] = moment_distance(x, ref)
        metrics["moment_null_q99"] = null_quantile(task.target_sampler, n, moment_distance,
                                                   RandomStream(seed, lane=23), reps=cfg["null_reps"])
        m = min(n, ENERGY_MAX_SAMPLES)
        metrics["energy_distance"] = energy_distance(x[:m], ref[:m])
    else:
        metrics["mse"], metrics["psnr"] = mse_psnr(x, triplet.i0)
        metrics["degraded_mse"], metrics["degraded_psnr"] = mse_psnr(triplet.i_in, triplet.i0)
    fileio.write_rows(out / "metrics.csv", ["metric", "value"], metrics.items())
    if task.image_shape is not None:
        k = min(cfg["n_images"], n)
        fileio.write_image_grid(out, "output", x[:k], task.image_shape)
        fileio.write_image_grid(out, "input", triplet.i_in[:k], task.image_shape)
        fileio.write_image_grid(out, "target", triplet.i0[:k], task.image_shape)
    for key, v in metrics.items():
        echo(f"{key} = {v:.6g}")
    return {"samples": x, "metrics": metrics, "triplet": triplet}


def _train_config(cfg: dict, stop_when_resolved: bool = False) -> TrainConfig:
    return TrainConfig(
        iterations=cfg["iterations"], batch_size=cfg["batch_size"], lr=cfg["lr"], aosa_lr=cfg["aosa_lr"],
        norm=cfg["loss"], condition=cfg["condition"], seed=cfg["seed"], delta=cfg["delta"],
        stop_when_resolved=stop_when_resolved,
    )


def cmd_train(cfg: dict, out: Path | None = None, echo=print) -> dict:
    out = out or output_dir(cfg)
    task = make_task(cfg["task"])
    schedule = build_schedule(cfg)
    output, l_res, l_eps = OBJECTIVES[cfg["objective"]]
    model = MlpModel(task.data_dim, hidden=cfg["hidden"], heads=2 if output == "both" else 1, seed=cfg["seed"])
    log = train(model, task, schedule, _train_config(cfg), loss_config=LossConfig(l_res, l_eps, cfg["loss"]),
                log_every=cfg["log_every"])
    predictor = MlpPredictor(model, output, cfg["condition"])
    fileio.save_checkpoint(out / "model.npz", predictor)
    fileio.write_training_log(out / "training-log.csv", log)
    echo(f"trained {cfg['iterations']} iterations; final loss {log[-1].loss:.6g}; checkpoint {out / 'model.npz'}")
    return {"predictor": predictor, "log": log}


def cmd_aosa(cfg: dict, out: Path | None = None, echo=print) -> dict:
    """Train with automatic objective selection until it resolves (or the cap)."""
    out = out or output_dir(cfg)
    task = make_task(cfg["task"])
    schedule = build_schedule(cfg)
    model = MlpModel(task.data_dim, hidden=cfg["hidden"], heads=1, seed=cfg["seed"])
    aosa = AosaState(delta=cfg["delta"])
    log = train(model, task, schedule, _train_config(cfg, stop_when_resolved=True), aosa=aosa,
                log_every=cfg["log_every"])
    fileio.write_training_log(out / "training-log.csv", log)
    fileio.write_rows(
        out / "aosa-result.csv", ["resolved", "resolved_at", "lambda_learn", "reinit_seed"],
        [[aosa.resolved, aosa.resolved_at if aosa.resolved_at is not None else "", float(aosa.lambda_learn),
          aosa.reinit_seed if aosa.reinit_seed is not None else ""]],
    )
    if aosa.resolved_at is None:
        echo(f"unresolved after {cfg['iterations']} iterations (lambda = {aosa.lambda_learn:.4f})")
    else:
        echo(f"resolved to {aosa.resolved} at iteration {aosa.resolved_at}")
    return {"aosa": aosa, "log": log}


def cmd_path_experiment(cfg: dict, out: Path | None = None, echo=print) -> dict:
    task = make_task(cfg["task"])
    if cfg["predictor"] == "checkpoint":
        raise ConfigError(
            "invalid value 'checkpoint' for key 'predictor': a single network shares one time condition "
            "and cannot follow decoupled paths; train separate residual and noise networks and use "
            "predictor=paired with residual_checkpoint and noise_checkpoint"
        )
    out = out or output_dir(cfg)
    schedule = build_schedule(cfg)
    n, seed = cfg["n_samples"], cfg["seed"]
    triplet = make_dataset(task, n, RandomStream(seed, lane=20))
    stream = RandomStream(seed, lane=21)
    eps_init = None
    if cfg["predictor"] == "ground-truth":
        _, eps_init = synthesize(triplet, schedule.T, schedule, stream)
        predictor = GroundTruthPredictor(triplet.i_res, eps_init)
    else:
        predictor, _ = build_predictor(cfg, task, triplet, schedule, stream)
        _check_data_dim(predictor, task)
    report = path_experiment(predictor, triplet, schedule, steps=cfg["steps"], exponents=cfg["exponents"],
                             eps_init=eps_init, stream=stream)
    fileio.write_rows(out / "path-report.csv", ["variant", "energy_distance", "mean_displacement"],
                      ([v.name, v.energy, v.displacement] for v in report.variants))
    fileio.write_rows(out / "path-sensitivity.csv", ["quantity", "value"], [
        ["mean_abs_d_res_d_beta_bar", report.res_beta_sensitivity],
        ["mean_abs_d_eps_d_alpha_bar", report.eps_alpha_sensitivity],
    ])
    for v in report.variants:
        echo(f"{v.name:>16}: energy {v.energy:.4g}  displacement {v.displacement:.4g}")
    echo(f"|d res/d beta_bar| = {report.res_beta_sensitivity:.4g}  "
         f"|d eps/d alpha_bar| = {report.eps_alpha_sensitivity:.4g}")
    return {"report": report}


HANDLERS = {
    "schedule": cmd_schedule,
    "verify": cmd_verify,
    "sample": cmd_sample,
    "train": cmd_train,
    "aosa": cmd_aosa,
    "path-experiment": cmd_path_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resdiff", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--show-keys", action="store_true", help="list configuration keys and defaults, then exit")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    if args.show_keys:
        sys.stdout.write(format_config({k: v for k, (v, _) in KEYS.items()}))
        return 0
    try:
        cfg = load_config(args.command, args.config, _overrides(rest))
        result = HANDLERS[args.command](cfg)
    except (ConfigError, ScheduleError, PlanError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (SingularConversionError, TrainingError, FloatingPointError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3
    if args.command == "verify" and result["failed"]:
        print(f"{len(result['failed'])} check(s) failed: {', '.join(result['failed'])}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""File formats: model checkpoints, CSV tables, and PGM images.

Checkpoint format (version 1)
-----------------------------
A single ``.npz`` archive (no pickled objects) holding one array per named
parameter tensor (``W1``, ``b1``, ... as float64) plus a ``manifest`` entry:
UTF-8 JSON stored as a uint8 array, with keys

    format      "resdiff-mlp"
    version     1
    data_dim, hidden, embed_dim, heads, seed
    output      "residual" | "noise" | "both"
    condition   "index" | "alpha" | "beta"
    shapes      {name: [dims...]}

Loading checks the format tag, the version, and every tensor shape against
the manifest.

CSV tables
----------
trajectory  sample-id, step-index, t, dim-0, dim-1, ...
samples     sample-id, dim-0, dim-1, ...
dataset     sample-id, field, dim-0, ...   (field is i0, i_in or i_res)
training    iteration, loss, lambda_learn, resolved

Floats are written with 17 significant digits so a reload is bit-exact.
"""

from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import numpy as np

from .predictors import MlpModel, MlpPredictor
from .sampler import SamplingPlan

CHECKPOINT_FORMAT = "resdiff-mlp"
CHECKPOINT_VERSION = 1
FLOAT_FMT = "%.17g"


class CheckpointError(ValueError):
    pass


# -- checkpoints -------------------------------------------------------------------


def save_checkpoint(path, predictor: MlpPredictor) -> Path:
    model = predictor.model
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "data_dim": model.data_dim,
        "hidden": model.hidden,
        "embed_dim": model.embed_dim,
        "heads": model.heads,
        "seed": model.seed,
        "output": predictor.outputs,
        "condition": predictor.condition,
        "shapes": {k: list(v.shape) for k, v in model.params.items()},
    }
    blob = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, manifest=blob, **model.params)
    return path


def load_checkpoint(path) -> MlpPredictor:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        if "manifest" not in z.files:
            raise CheckpointError(f"{path}: no manifest")
        man = json.loads(z["manifest"].tobytes().decode())
        if man.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: unknown format {man.get('format')!r}")
        if man.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {man.get('version')!r}")
        model = MlpModel(man["data_dim"], man["hidden"], man["embed_dim"], man["heads"], man["seed"])
        for name, shape in model.shapes().items():
            if name not in z.files:
                raise CheckpointError(f"{path}: missing tensor {name}")
            arr = z[name]
            if list(arr.shape) != list(shape) or list(man["shapes"][name]) != list(shape):
                raise CheckpointError(f"{path}: tensor {name} has shape {arr.shape}, expected {shape}")
            model.params[name] = arr.astype(np.float64)
    return MlpPredictor(model, man["output"], man["condition"])


# -- CSV ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _dims(d: int):
    return [f"dim-{k}" for k in range(d)]


def _flat(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(len(x), -1)


def trajectory_times(plan: SamplingPlan) -> list[int]:
    """The t label of every state a traced ``sample`` run returns."""
    prevs = [p for _, p in plan.pairs()]
    reps = 1 if plan.path_mode == "simultaneous" else 2
    return [int(plan.timesteps[0])] + prevs * reps


def write_trajectory(path, traj, times) -> Path:
    traj = np.asarray(traj, dtype=np.float64)
    steps, n = traj.shape[:2]
    if len(times) != steps:
        raise ValueError(f"{len(times)} time labels for {steps} states")
    flat = traj.reshape(steps, n, -1)

    def rows():
        for i in range(n):
            for k in range(steps):
                yield [i, k, int(times[k]), *flat[k, i]]

    return write_rows(path, ["sample-id", "step-index", "t", *_dims(flat.shape[2])], rows())


def write_samples(path, x) -> Path:
    x = _flat(x)
    return write_rows(path, ["sample-id", *_dims(x.shape[1])], ([i, *row] for i, row in enumerate(x)))


def read_samples(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:]


def write_dataset(path, triplet) -> Path:
    fields = (("i0", _flat(triplet.i0)), ("i_in", _flat(triplet.i_in)), ("i_res", _flat(triplet.i_res)))

    def rows():
        for i in range(len(triplet)):
            for name, arr in fields:
                yield [i, name, *arr[i]]

    return write_rows(path, ["sample-id", "field", *_dims(fields[0][1].shape[1])], rows())


def write_training_log(path, log) -> Path:
    return write_rows(
        path, ["iteration", "loss", "lambda_learn", "resolved"],
        ([r.iteration, float(r.loss), float(r.lambda_learn), r.resolved] for r in log),
    )


# -- PGM ---------------------------------------------------------------------------


def quantize(img) -> np.ndarray:
    """Linear map [-1, 1] -> {0..255}; values outside the range are clipped."""
    img = np.clip(np.asarray(img, dtype=np.float64), -1.0, 1.0)
    return np.rint((img + 1.0) * 127.5).astype(np.uint8)


def encode_pgm(img) -> bytes:
    q = quantize(img)
    if q.ndim != 2:
        raise ValueError(f"PGM needs a 2-d image, got shape {q.shape}")
    h, w = q.shape
    return f"P5\n{w} {h}\n255\n".encode() + q.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    """Inverse of :func:`encode_pgm`, returning values in [-1, 1]."""
    buf = _io.BytesIO(data)
    tokens = []
    while len(tokens) < 4:
        line = buf.readline()
        if not line:
            raise ValueError("truncated PGM header")
        tokens += line.split(b"#")[0].split()
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError("only 8-bit binary PGM (P5) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    q = np.frombuffer(buf.read(w * h), dtype=np.uint8)
    if q.size != w * h:
        raise ValueError("truncated PGM pixel data")
    return q.reshape(h, w).astype(np.float64) / 127.5 - 1.0


def write_pgm(path, img) -> Path:
    path = Path(path)
    path.write_bytes(encode_pgm(img))
    return path


def write_image_grid(directory, prefix: str, images, shape) -> list[Path]:
    directory = Path(directory)
    return [write_pgm(directory / f"{prefix}-{i:04d}.pgm", np.reshape(img, shape)) for i, img in enumerate(images)]

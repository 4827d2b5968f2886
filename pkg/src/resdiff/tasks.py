"""Synthetic generation and restoration tasks.

Presets
-------
gaussian-2d
    I_0 ~ N(mu, diag(s_sq)) with mu = (1.0, -0.5), s_sq = (0.25, 0.5); I_in = 0.
mixture-2d
    equal-weight two-component mixture with means +-(1.2, 0.6), std 0.25; I_in = 0.
shade-restore
    8x8 linear-gradient images in [-1, 1] flattened to 64 values; the degraded
    input darkens the left half by 0.6, so I_res is that fixed shade field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .forward import TripletBatch
from .numerics import RandomStream
from .predictors import GaussianTaskParams

GAUSSIAN_MU = np.array([1.0, -0.5])
GAUSSIAN_S_SQ = np.array([0.25, 0.5])
MIXTURE_MEAN = np.array([1.2, 0.6])
MIXTURE_STD = 0.25
IMAGE_SIDE = 8
SHADE_AMPLITUDE = 0.6


@dataclass(frozen=True)
class TaskSpec:
    name: str
    mode: str  # "generation" or "restoration"
    data_dim: int
    target_sampler: Callable[[RandomStream, int], np.ndarray]
    degradation: Callable[[np.ndarray], np.ndarray] | None = None
    beta_bar_T_sq: float = 1.0
    schedule_family: str = "linear"
    loss_norm: str = "L2"
    image_shape: tuple | None = None
    batch_size: int = 128  # training defaults for this task
    lr: float = 2e-4

    def __post_init__(self):
        if self.mode not in ("generation", "restoration"):
            raise ValueError(f"unknown task mode {self.mode!r}")
        if self.mode == "restoration" and self.degradation is None:
            raise ValueError("restoration tasks need a degradation map")
        if self.beta_bar_T_sq <= 0:
            raise ValueError("beta_bar_T_sq must be positive")

    def inputs(self, i0: np.ndarray) -> np.ndarray:
        if self.mode == "generation":
            return np.zeros_like(i0)
        return self.degradation(i0)


def _gaussian_sampler(stream: RandomStream, n: int) -> np.ndarray:
    return GAUSSIAN_MU + np.sqrt(GAUSSIAN_S_SQ) * stream.normal((n, 2))


def mixture_sample(stream: RandomStream, n: int, return_labels: bool = False):
    """Draws from the two-component mixture; labels are 0/1 component ids."""
    labels = (stream.uniform((n,)) < 0.5).astype(np.int64)
    sign = np.where(labels == 1, 1.0, -1.0)[:, None]
    x = sign * MIXTURE_MEAN + MIXTURE_STD * stream.normal((n, 2))
    return (x, labels) if return_labels else x


def _mixture_sampler(stream: RandomStream, n: int) -> np.ndarray:
    return mixture_sample(stream, n)


def shade_field(side: int = IMAGE_SIDE, amplitude: float = SHADE_AMPLITUDE) -> np.ndarray:
    """Flattened additive shade: ``-amplitude`` on the left half, 0 elsewhere."""
    mask = np.zeros((side, side))
    mask[:, : side // 2] = 1.0
    return (-amplitude * mask).ravel()


def gradient_images(stream: RandomStream, n: int, side: int = IMAGE_SIDE) -> np.ndarray:
    """Random planar ramps ``a*u + b*v + c`` clipped to [-1, 1], flattened."""
    coef = stream.uniform((n, 3), -0.6, 0.6)
    u = np.linspace(-1.0, 1.0, side)
    uu, vv = np.meshgrid(u, u)
    img = coef[:, 0, None] * uu.ravel() + coef[:, 1, None] * vv.ravel() + coef[:, 2, None]
    return np.clip(img, -1.0, 1.0)


def _shade_degrade(i0: np.ndarray) -> np.ndarray:
    return i0 + shade_field()


PRESETS = {
    "gaussian-2d": lambda: TaskSpec("gaussian-2d", "generation", 2, _gaussian_sampler, schedule_family="dec-inc"),
    "mixture-2d": lambda: TaskSpec("mixture-2d", "generation", 2, _mixture_sampler),
    "shade-restore": lambda: TaskSpec(
        "shade-restore", "restoration", IMAGE_SIDE * IMAGE_SIDE, gradient_images, _shade_degrade,
        beta_bar_T_sq=0.01, schedule_family="dec-inc", loss_norm="L1", image_shape=(IMAGE_SIDE, IMAGE_SIDE),
        batch_size=1, lr=8e-5,
    ),
}


def make_task(name: str) -> TaskSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown task {name!r}; expected one of {sorted(PRESETS)}") from None


def gaussian_params() -> GaussianTaskParams:
    return GaussianTaskParams(GAUSSIAN_MU.copy(), GAUSSIAN_S_SQ.copy())


def make_dataset(spec: TaskSpec, n: int, stream: RandomStream) -> TripletBatch:
    if n < 1:
        raise ValueError(f"dataset size must be >= 1, got {n}")
    i0 = spec.target_sampler(stream, n)
    return TripletBatch.from_pair(i0, spec.inputs(i0))

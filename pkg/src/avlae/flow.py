"""Frozen, differentiable Horn-Schunck optical flow.

The solver has no trainable state. Every arithmetic step is an autodiff op,
so a loss on the flow field back-propagates into the input pixels.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .tensor import Tensor, as_tensor

LUMA = (0.299, 0.587, 0.114)


def to_gray(video: Tensor) -> Tensor:
    """``[N, 3, T, H, W]`` -> ``[N, T, H, W]`` luminance."""
    r, g, b = video[:, 0], video[:, 1], video[:, 2]
    return r * LUMA[0] + g * LUMA[1] + b * LUMA[2]


def _neighbour_mean(f: Tensor) -> Tensor:
    p = F.pad(f, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    return (p[:, :, :-2, 1:-1] + p[:, :, 2:, 1:-1] + p[:, :, 1:-1, :-2] + p[:, :, 1:-1, 2:]) * 0.25


def _grad_x(f: Tensor) -> Tensor:
    p = F.pad(f, ((0, 0), (0, 0), (0, 0), (1, 1)), mode="edge")
    return (p[:, :, :, 2:] - p[:, :, :, :-2]) * 0.5


def _grad_y(f: Tensor) -> Tensor:
    p = F.pad(f, ((0, 0), (0, 0), (1, 1), (0, 0)), mode="edge")
    return (p[:, :, 2:, :] - p[:, :, :-2, :]) * 0.5


def estimate_flow(
    video: Tensor, iterations: int = 20, smoothness: float = 0.5, scale: int = 8, intensity: float = 2.0
) -> Tensor:
    """Per-pair displacement fields ``[N, 2, T-1, H/scale, W/scale]``.

    Channel 0 is horizontal (u, +x to the right), channel 1 vertical
    (v, +y downward), in pixels of the downsampled grid. Frame index t maps
    frame t to frame t+1. Luminance is multiplied by ``intensity`` before
    solving; ``smoothness`` is measured in those units. Larger values
    sharpen recovery on textured motion but let flat, flickering regions
    produce large spurious displacements.
    """
    video = as_tensor(video)
    squeeze = video.ndim == 4
    if squeeze:
        video = video.reshape(1, *video.shape)
    if video.ndim != 5 or video.shape[1] != 3:
        raise ValueError(f"expected [N, 3, T, H, W] video, got {video.shape}")
    n, _, t, h, w = video.shape
    if t < 2:
        raise ValueError(f"flow needs at least 2 frames, got T={t}")
    if scale < 1 or h % scale or w % scale:
        raise ValueError(f"scale {scale} must divide the spatial extents {h}x{w}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")

    gray = F.avg_pool2d(to_gray(video), scale) * intensity
    first, second = gray[:, :-1], gray[:, 1:]
    ix = (_grad_x(first) + _grad_x(second)) * 0.5
    iy = (_grad_y(first) + _grad_y(second)) * 0.5
    it = second - first
    denom = ix.square() + iy.square() + smoothness**2

    u = v = None
    for _ in range(iterations):
        if u is None:
            # both fields start at zero, so the first update needs no averaging
            r = it / denom
        else:
            u_bar, v_bar = _neighbour_mean(u), _neighbour_mean(v)
            r = (ix * u_bar + iy * v_bar + it) / denom
        u = -(ix * r) if u is None else u_bar - ix * r
        v = -(iy * r) if v is None else v_bar - iy * r
    out = F.stack([u, v], axis=1)
    return out[0] if squeeze else out


@dataclass(frozen=True)
class FlowEstimator:
    """Configured flow operator; owns constants only, never trainable tensors."""

    iterations: int = 20
    smoothness: float = 0.5
    scale: int = 8
    intensity: float = 2.0

    def __call__(self, video: Tensor) -> Tensor:
        return estimate_flow(video, self.iterations, self.smoothness, self.scale, self.intensity)

    def parameters(self) -> list[Tensor]:
        return []

    def output_shape(self, t: int, h: int, w: int) -> tuple[int, int, int, int]:
        return (2, t - 1, h // self.scale, w // self.scale)

    def state_digest(self) -> str:
        """Hash of everything the operator holds, for frozen-state checks."""
        payload = repr((self.iterations, self.smoothness, self.scale, self.intensity, LUMA))
        return hashlib.sha256(payload.encode() + np.asarray(LUMA).tobytes()).hexdigest()

"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .tensor import get_default_dtype


def check_videos(X, n_frames: int | None = None, height: int | None = None, width: int | None = None,
                 min_frames: int = 2) -> np.ndarray:
    """Validate a ``[n, 3, T, H, W]`` batch in [-1, 1] (a single ``[3, T, H, W]`` is promoted)."""
    X = np.asarray(X)
    if X.ndim == 4:
        X = X[None]
    if X.ndim != 5 or X.shape[1] != 3:
        raise ValueError(f"expected videos shaped [n, 3, T, H, W], got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no videos given")
    if X.shape[2] < min_frames:
        raise ValueError(f"videos need at least {min_frames} frames, got {X.shape[2]}")
    for name, want, got in (("T", n_frames, X.shape[2]), ("H", height, X.shape[3]), ("W", width, X.shape[4])):
        if want is not None and want != got:
            raise ValueError(f"video {name}={got} does not match the model's {name}={want}")
    if not np.isfinite(X).all():
        raise ValueError("videos contain NaN or infinite values")
    if X.min() < -1.0 - 1e-6 or X.max() > 1.0 + 1e-6:
        raise ValueError("video values must lie in [-1, 1]")
    return X.astype(get_default_dtype(), copy=False)


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n, 2):
        raise ValueError(f"labels must be an [n, 2] array of (appearance, motion) ids, got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer) or (y < 0).any():
        raise ValueError("labels must be non-negative integers")
    return y.astype(np.int64)


def check_latents(Z, dim: int) -> np.ndarray:
    Z = np.asarray(Z, dtype=get_default_dtype())
    if Z.ndim == 1:
        Z = Z[None]
    if Z.ndim != 2 or Z.shape[1] != dim:
        raise ValueError(f"expected latents shaped [n, {dim}], got {Z.shape}")
    if not np.isfinite(Z).all():
        raise ValueError("latents contain NaN or infinite values")
    return Z

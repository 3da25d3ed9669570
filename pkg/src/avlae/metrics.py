"""Frechet distance, inception score and the latent-swap disentanglement probe."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .flow import LUMA
from .tensor import Tensor, no_grad


class MatrixSqrtError(np.linalg.LinAlgError):
    pass


def _check_features(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a [n, f] feature matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError(f"{name} needs at least 2 samples, got {x.shape[0]}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite entries")
    if x.shape[0] <= x.shape[1]:
        warnings.warn(f"{name}: {x.shape[0]} samples for {x.shape[1]} features; covariance is rank deficient",
                      stacklevel=3)
    return x


def _psd_sqrt(mat: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    mat = (mat + mat.T) / 2
    try:
        vals, vecs = np.linalg.eigh(mat)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(mat)
        raise MatrixSqrtError(f"eigendecomposition did not converge (condition number {cond:.3e})") from None
    top = max(vals.max(initial=0.0), 0.0)
    vals = np.where(vals < rel_tol * top, 0.0, vals)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(mu_a, cov_a, mu_b, cov_b) -> float:
    """``|mu_a - mu_b|^2 + Tr(cov_a + cov_b - 2 (cov_a cov_b)^(1/2))``.

    ``Tr((cov_a cov_b)^(1/2))`` is evaluated as the trace of the symmetric
    square root of ``cov_a^(1/2) cov_b cov_a^(1/2)``, which has the same
    eigenvalues.
    """
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    if mu_a.shape != mu_b.shape or cov_a.shape != cov_b.shape:
        raise ValueError("feature dimensions differ")
    root_a = _psd_sqrt(cov_a)
    cross = _psd_sqrt(root_a @ cov_b @ root_a)
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * np.trace(cross)
    return float(max(value, 0.0))


def fid(a, b) -> float:
    """Frechet distance between Gaussian fits of two feature sets ``[n, f]``."""
    a = _check_features(a, "a")
    b = _check_features(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return frechet_distance(a.mean(0), np.cov(a, rowvar=False), b.mean(0), np.cov(b, rowvar=False))


def inception_score(probs) -> float:
    """``exp(mean_i KL(p_i || p_bar))`` over rows of a class-probability matrix."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValueError(f"expected a [n, K] probability matrix, got shape {p.shape}")
    if (p < 0).any() or not np.allclose(p.sum(axis=1), 1.0, atol=1e-6, rtol=0):
        raise ValueError("rows must be non-negative and sum to 1")
    marginal = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0)
    return float(np.exp(terms.sum(axis=1).mean()))


# ---------------------------------------------------------------- readouts
def appearance_readout(videos: np.ndarray) -> np.ndarray:
    """Mean colour over frames and pixels: ``[n, 3]``."""
    return np.asarray(videos, dtype=np.float64).mean(axis=(2, 3, 4))


def motion_readout(videos: np.ndarray) -> np.ndarray:
    """Net displacement ``(dx, dy)`` of the intensity centroid from first to last frame.

    Pixels brighter than their frame's median luminance carry weight, so a
    uniform background contributes nothing.
    """
    v = np.asarray(videos, dtype=np.float64)
    gray = np.tensordot(np.asarray(LUMA), v, axes=([0], [1]))  # n, T, H, W
    weight = np.maximum(gray - np.median(gray, axis=(2, 3), keepdims=True), 0.0)
    h, w = gray.shape[2:]
    ys, xs = np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64)
    mass = weight.sum(axis=(2, 3)) + 1e-12
    cx = (weight.sum(axis=2) * xs).sum(axis=2) / mass
    cy = (weight.sum(axis=3) * ys).sum(axis=2) / mass
    return np.stack([cx[:, -1] - cx[:, 0], cy[:, -1] - cy[:, 0]], axis=1)


@dataclass
class ProbeResult:
    """Readout changes caused by resampling one latent while the other is held.

    Each value is the mean readout change divided by the mean change between
    fully independent samples, so 0 means "unaffected" and 1 means "as
    different as two unrelated videos".
    """

    appearance_drift: float
    motion_drift: float
    appearance_swap_effect: float
    motion_swap_effect: float
    appearance_baseline: float
    motion_baseline: float
    n_pairs: int

    def as_dict(self) -> dict:
        return asdict(self)


def _generate(model, z_a: np.ndarray, z_m: np.ndarray, batch: int = 64) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(z_a), batch):
            out.append(model.sample(Tensor(z_a[i : i + batch]), Tensor(z_m[i : i + batch])).data)
    return np.concatenate(out)


def disentanglement_probe(model, n_pairs: int = 128, seed: int = 0) -> ProbeResult:
    d = model.config.latent_dim
    rng = np.random.default_rng([seed, 17])
    z_a, z_m, z_a2, z_m2 = (rng.standard_normal((n_pairs, d)) for _ in range(4))
    base = _generate(model, z_a, z_m)
    new_motion = _generate(model, z_a, z_m2)
    new_appearance = _generate(model, z_a2, z_m)
    independent = _generate(model, z_a2, z_m2)

    def change(readout, other):
        return float(np.linalg.norm(readout(base) - readout(other), axis=1).mean())

    app_base = change(appearance_readout, independent)
    mot_base = change(motion_readout, independent)
    eps = 1e-12
    return ProbeResult(
        appearance_drift=change(appearance_readout, new_motion) / (app_base + eps),
        motion_drift=change(motion_readout, new_appearance) / (mot_base + eps),
        appearance_swap_effect=change(appearance_readout, new_appearance) / (app_base + eps),
        motion_swap_effect=change(motion_readout, new_motion) / (mot_base + eps),
        appearance_baseline=app_base,
        motion_baseline=mot_base,
        n_pairs=n_pairs,
    )

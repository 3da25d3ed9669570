"""scikit-learn style wrapper around the trainer."""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .tensor import Tensor, no_grad
from .training import TrainConfig, Trainer
from .validation import check_latents, check_videos


class AVLAE(BaseEstimator, TransformerMixin):
    """Adversarial video latent autoencoder.

    ``fit`` trains on videos ``[n, 3, T, H, W]`` in [-1, 1]. ``transform``
    encodes videos into ``[n, 2d]`` rows holding ``(w_A, w_M)``, where the
    appearance code comes from frame ``frame`` (1-based). ``inverse_transform``
    decodes such rows back into videos.

    The defaults are the desk-scale geometry; larger settings are plain
    constructor arguments.
    """

    def __init__(self, latent_dim=32, n_frames=8, height=32, width=32, channels=128, disc_channels=32,
                 hidden=128, steps=600, batch=8, alpha=2e-4, beta1=0.5, beta2=0.999, k1=1.0, k2=1.0,
                 use_motion_encoder=True, flow_iterations=20, flow_smoothness=0.5, flow_scale=2,
                 generator_loss="non_saturating", rec_norm="l2", frame=1, random_state=0):
        self.latent_dim = latent_dim
        self.n_frames = n_frames
        self.height = height
        self.width = width
        self.channels = channels
        self.disc_channels = disc_channels
        self.hidden = hidden
        self.steps = steps
        self.batch = batch
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.k1 = k1
        self.k2 = k2
        self.use_motion_encoder = use_motion_encoder
        self.flow_iterations = flow_iterations
        self.flow_smoothness = flow_smoothness
        self.flow_scale = flow_scale
        self.generator_loss = generator_loss
        self.rec_norm = rec_norm
        self.frame = frame
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(TrainConfig)}
        params = {k: v for k, v in self.get_params().items() if k in names}
        return TrainConfig(seed=self.random_state, log_every=0, **params)

    def fit(self, X, y=None):
        X = check_videos(X, self.n_frames, self.height, self.width)
        self.trainer_ = Trainer(self._config())
        self.history_ = [report for report in self.trainer_.fit(X)]
        self.n_features_in_ = 2 * self.latent_dim
        return self

    @property
    def model_(self):
        check_is_fitted(self, "trainer_")
        return self.trainer_.model

    def transform(self, X) -> np.ndarray:
        model = self.model_
        X = check_videos(X, self.n_frames, self.height, self.width)
        if not 1 <= self.frame <= self.n_frames:
            raise IndexError(f"frame {self.frame} outside [1, {self.n_frames}]")
        with no_grad():
            x = Tensor(X)
            w_a = model.encode_appearance(x[:, :, self.frame - 1]).data
            w_m = model.encode_motion(x).data if model.E_M is not None else np.zeros_like(w_a)
        return np.concatenate([w_a, w_m], axis=1).astype(np.float64)

    def inverse_transform(self, W) -> np.ndarray:
        model = self.model_
        W = check_latents(W, 2 * self.latent_dim)
        d = self.latent_dim
        with no_grad():
            return model.generate(Tensor(W[:, :d]), Tensor(W[:, d:])).data

    def reconstruct(self, X) -> np.ndarray:
        """``G(E_A(x_t), E_M(x))`` for every video in ``X``."""
        return self.inverse_transform(self.transform(X))

    def sample(self, n: int, random_state=None):
        """Draw ``n`` videos; returns ``(videos, z_a, z_m)``."""
        model = self.model_
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        z_a = rng.standard_normal((n, self.latent_dim))
        z_m = rng.standard_normal((n, self.latent_dim))
        with no_grad():
            videos = model.sample(Tensor(z_a), Tensor(z_m)).data
        return videos, z_a, z_m

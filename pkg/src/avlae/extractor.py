"""Toy video classifier used as the feature extractor for FID and IS.

It is trained on the synthetic dataset's (appearance x motion) grid. The
network has a factorized convolutional trunk over the raw frames, a second
trunk over the frozen optical flow, a shared feature layer, and two softmax
heads whose outer product is the distribution over grid cells.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from . import functional as F
from .flow import FlowEstimator
from .networks import SLOPE, MLP, _down_widths, _FactorizedStack
from .optim import Adam
from .tensor import Tensor, no_grad
from .validation import check_labels, check_videos


class _Net:
    def __init__(self, geometry, n_features, channels, n_app, n_mot, flow, rng):
        t, h, w = geometry
        self.flow = flow
        self.frames = _FactorizedStack("X.frames", 3, (t, h, w), _down_widths(channels, h), rng)
        ft, fh, _ = flow.output_shape(t, h, w)[1:]
        self.motion = _FactorizedStack("X.flow", 2, (ft, fh, fh), _down_widths(channels, fh), rng)
        joint = self.frames.out_features + self.motion.out_features
        self.embed = MLP("X.embed", [joint, n_features], rng)
        self.app_head = MLP("X.app", [n_features, n_app], rng)
        self.mot_head = MLP("X.mot", [n_features, n_mot], rng)
        self.parts = (self.frames, self.motion, self.embed, self.app_head, self.mot_head)

    def parameters(self):
        return [p for part in self.parts for p in part.parameters()]

    def features(self, video: Tensor) -> Tensor:
        with no_grad():
            flow = self.flow(video).detach()
        joint = F.concat([self.frames(video), self.motion(flow)], axis=1)
        return F.leaky_relu(self.embed(joint), SLOPE)

    def logits(self, video: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        feats = self.features(video)
        return feats, self.app_head(feats), self.mot_head(feats)


def _log_softmax(x: Tensor) -> Tensor:
    shift = Tensor(x.data.max(axis=1, keepdims=True), dtype=x.dtype)
    z = x - shift
    return z - z.exp().sum(axis=1, keepdims=True).log()


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


class VideoFeatureExtractor(BaseEstimator, ClassifierMixin, TransformerMixin):
    """Classifier over (appearance, motion) grid cells with a feature ``transform``.

    ``fit`` takes videos ``[n, 3, T, H, W]`` and ``y`` as an ``[n, 2]``
    integer array of (appearance, motion) labels. ``predict`` returns grid
    labels ``appearance * n_motion + motion``. A fraction of the training
    data is held out; ``validation_score_`` is the grid accuracy there.
    """

    def __init__(self, n_features=64, channels=16, steps=1200, batch_size=32, learning_rate=2e-3,
                 validation_fraction=0.2, flow_scale=2, random_state=0):
        self.n_features = n_features
        self.channels = channels
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.validation_fraction = validation_fraction
        self.flow_scale = flow_scale
        self.random_state = random_state

    def fit(self, X, y):
        X = check_videos(X)
        y = check_labels(y, len(X))
        rng = np.random.default_rng(self.random_state)
        order = rng.permutation(len(X))
        n_val = int(round(len(X) * self.validation_fraction))
        val, train = order[:n_val], order[n_val:]
        self.n_appearance_ = int(y[:, 0].max()) + 1
        self.n_motion_ = int(y[:, 1].max()) + 1
        self.classes_ = np.arange(self.n_appearance_ * self.n_motion_)
        self.geometry_ = X.shape[2:]
        self.net_ = _Net(self.geometry_, self.n_features, self.channels, self.n_appearance_, self.n_motion_,
                         FlowEstimator(scale=self.flow_scale), rng)
        opt = Adam(self.net_.parameters(), alpha=self.learning_rate, beta1=0.9, beta2=0.999)
        self.loss_curve_ = []
        for step in range(self.steps):
            rows = train[rng.integers(0, len(train), size=self.batch_size)]
            _, app, mot = self.net_.logits(Tensor(X[rows]))
            ya, ym = y[rows, 0], y[rows, 1]
            idx = np.arange(len(rows))
            loss = -(_log_softmax(app)[idx, ya].mean() + _log_softmax(mot)[idx, ym].mean())
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.loss_curve_.append(loss.item())
        if n_val:
            grid = y[val, 0] * self.n_motion_ + y[val, 1]
            self.validation_score_ = float(np.mean(self.predict(X[val]) == grid))
        else:
            self.validation_score_ = float("nan")
        return self

    def _forward(self, X, batch=64):
        check_is_fitted(self, "net_")
        X = check_videos(X)
        if X.shape[2:] != tuple(self.geometry_):
            raise ValueError(f"videos have geometry {X.shape[2:]}, extractor expects {tuple(self.geometry_)}")
        feats, app, mot = [], [], []
        with no_grad():
            for i in range(0, len(X), batch):
                f, a, m = self.net_.logits(Tensor(X[i : i + batch]))
                feats.append(f.data)
                app.append(a.data)
                mot.append(m.data)
        return np.concatenate(feats), np.concatenate(app), np.concatenate(mot)

    def transform(self, X) -> np.ndarray:
        return self._forward(X)[0].astype(np.float64)

    def predict_proba(self, X) -> np.ndarray:
        _, app, mot = self._forward(X)
        pa, pm = _softmax(app.astype(np.float64)), _softmax(mot.astype(np.float64))
        return (pa[:, :, None] * pm[:, None, :]).reshape(len(pa), -1)

    def predict(self, X) -> np.ndarray:
        _, app, mot = self._forward(X)
        return app.argmax(axis=1) * self.n_motion_ + mot.argmax(axis=1)

    def score(self, X, y, sample_weight=None) -> float:
        y = np.asarray(y)
        if y.ndim == 2:
            y = y[:, 0] * self.n_motion_ + y[:, 1]
        return float(np.average(self.predict(X) == y, weights=sample_weight))

    def require_gate(self, threshold: float = 0.9) -> None:
        """Refuse metric use unless held-out accuracy reached ``threshold``."""
        if not hasattr(self, "net_"):
            raise NotFittedError("the feature extractor has not been trained")
        if not self.validation_score_ >= threshold:
            raise RuntimeError(
                f"feature extractor held-out accuracy {self.validation_score_:.3f} is below {threshold}"
            )

    def state_tensors(self) -> dict[str, np.ndarray]:
        check_is_fitted(self, "net_")
        return {p.name: p.data for part in self.net_.parts for p in part.parameters()}

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for part in self.net_.parts:
            for p in part.parameters():
                p.data = tensors[p.name].astype(p.dtype).copy()

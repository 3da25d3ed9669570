"""Adversarial and latent-reconstruction losses plus the three-step trainer.

Each iteration runs three updates with disjoint responsibilities:

1. discriminators: ``E_M*`` + ``D_V`` and ``E_A`` + ``D_I`` ascend the
   adversarial objective (two Adam groups);
2. generator: ``F_A``, ``F_M`` and ``G`` descend the fake-sample terms;
3. latent reconstruction: ``E_A``, ``E_M*`` and ``G`` descend
   ``k1 |w_M - E_M(x_hat)|^2 + k2 |w_A - E_A(x_hat_t)|^2``.

Parameters outside a step's update set are never written.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import functional as F
from .networks import NETWORK_IDS, AVLAEModel, ModelConfig, select_frames
from .optim import Adam
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

STEP_GROUPS = {
    "video_disc": ("E_M_star", "D_V"),
    "image_disc": ("E_A", "D_I"),
    "generator": ("F_A", "F_M", "G"),
    "latent_rec": ("E_A", "E_M_star", "G"),
}


class TrainingDiverged(RuntimeError):
    """A loss became NaN or infinite."""


@dataclass
class TrainConfig:
    alpha: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    k1: float = 1.0
    k2: float = 1.0
    latent_dim: int = 128
    n_frames: int = 16
    height: int = 128
    width: int = 128
    channels: int = 64
    disc_channels: int | None = None
    hidden: int = 128
    batch: int = 8
    steps: int = 1000
    seed: int = 0
    use_motion_encoder: bool = True
    flow_iterations: int = 20
    flow_smoothness: float = 0.5
    flow_scale: int = 8
    generator_loss: str = "saturating"
    rec_norm: str = "l2"
    log_every: int = 10
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("k1 and k2 must be non-negative")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.generator_loss not in ("saturating", "non_saturating"):
            raise ValueError(f"unknown generator_loss {self.generator_loss!r}")
        if self.rec_norm not in ("l2", "l1"):
            raise ValueError(f"unknown rec_norm {self.rec_norm!r}")
        self.model_config()

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """3x8x32x32 videos with 32-d latents: small enough for a laptop CPU.

        The generator is wide and the critics narrow; with equal widths the
        discriminators saturate within a few dozen steps at this size. The
        non-saturating generator loss is used for the same reason.
        """
        base = dict(latent_dim=32, n_frames=8, height=32, width=32, channels=128, disc_channels=32, hidden=128,
                    batch=8, steps=600, flow_scale=2, generator_loss="non_saturating")
        base.update(overrides)
        return cls(**base)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            latent_dim=self.latent_dim, n_frames=self.n_frames, height=self.height, width=self.width,
            channels=self.channels, disc_channels=self.disc_channels, hidden=self.hidden,
            use_motion_encoder=self.use_motion_encoder,
            flow_iterations=self.flow_iterations, flow_smoothness=self.flow_smoothness,
            flow_scale=self.flow_scale,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        """Hash of everything that determines parameter shapes and the update rule."""
        keys = ("latent_dim", "n_frames", "height", "width", "channels", "disc_channels", "hidden",
                "use_motion_encoder", "flow_iterations", "flow_smoothness", "flow_scale")
        blob = json.dumps({k: getattr(self, k) for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class StepReport:
    step: int
    losses: dict[str, float] = field(default_factory=dict)
    delta_norms: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0

    def merge(self, other: "StepReport") -> "StepReport":
        self.losses.update(other.losses)
        for k, v in other.delta_norms.items():
            self.delta_norms[k] = float(np.hypot(self.delta_norms.get(k, 0.0), v))
        self.wall_time += other.wall_time
        return self

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    def check_finite(self) -> None:
        bad = {k: v for k, v in self.losses.items() if not np.isfinite(v)}
        if bad:
            raise TrainingDiverged(f"non-finite loss at step {self.step}: {bad}")


# ------------------------------------------------------------------ losses
def adversarial_terms(real_logit: Tensor | None, fake_logit: Tensor) -> tuple[Tensor | None, Tensor]:
    """``(mean log s(real) + mean log(1 - s(fake)), mean log(1 - s(fake)))``.

    Uses ``log s(l) = -softplus(-l)`` and ``log(1 - s(l)) = -softplus(l)``.
    """
    gen_term = (-F.softplus(fake_logit)).mean()
    if real_logit is None:
        return None, gen_term
    disc_term = (-F.softplus(-real_logit)).mean() + gen_term
    return disc_term, gen_term


def loss_adv_video(model: AVLAEModel, real: Tensor, fake: Tensor) -> tuple[Tensor, Tensor]:
    real_m = model.encode_motion(real) if model.E_M is not None else None
    fake_m = model.encode_motion(fake) if model.E_M is not None else None
    return adversarial_terms(model.D_V(real, real_m), model.D_V(fake, fake_m))


def loss_adv_image(model: AVLAEModel, real_frame: Tensor, fake_frame: Tensor) -> tuple[Tensor, Tensor]:
    real_logit = model.disc_image(model.encode_appearance(real_frame))
    fake_logit = model.disc_image(model.encode_appearance(fake_frame))
    return adversarial_terms(real_logit, fake_logit)


def reconstruction_terms(
    w_a: Tensor, w_m: Tensor, enc_a: Tensor | None, enc_m: Tensor | None, k1: float, k2: float, norm: str = "l2"
) -> Tensor:
    """``k1 |w_m - enc_m|^2 + k2 |w_a - enc_a|^2`` averaged over the batch."""
    def dist(a, b):
        diff = a - b
        per = diff.square() if norm == "l2" else diff.abs()
        return per.sum(axis=1).mean()

    total = Tensor(0.0, dtype=w_a.dtype)
    if k1 and enc_m is not None:
        total = total + dist(w_m, enc_m) * k1
    if k2 and enc_a is not None:
        total = total + dist(w_a, enc_a) * k2
    return total


def loss_rec(
    model: AVLAEModel, z_a: Tensor, z_m: Tensor, frame_idx: np.ndarray, k1: float = 1.0, k2: float = 1.0,
    norm: str = "l2",
) -> Tensor:
    """Latent reconstruction loss for fresh latents ``(z_a, z_m)``.

    The mapped latents are targets: no gradient reaches ``F_A``/``F_M``.
    """
    with no_grad():
        w_a = model.map_appearance(z_a)
        w_m = model.map_motion(z_m)
    if not k1 and not k2:
        return Tensor(0.0, dtype=w_a.dtype)
    fake = model.generate(w_a, w_m)
    enc_a = model.encode_appearance(select_frames(fake, frame_idx)) if k2 else None
    enc_m = model.encode_motion(fake) if k1 and model.E_M is not None else None
    return reconstruction_terms(w_a, w_m, enc_a, enc_m, k1, k2, norm)


# ----------------------------------------------------------------- trainer
def _snapshot(model: AVLAEModel) -> dict[str, list[np.ndarray]]:
    return {k: [p.data.copy() for p in net.parameters()] for k, net in model.networks.items()}


def _delta_norms(model: AVLAEModel, before: dict[str, list[np.ndarray]]) -> dict[str, float]:
    out = {}
    for k, net in model.networks.items():
        sq = sum(float(np.sum((p.data.astype(np.float64) - b) ** 2)) for p, b in zip(net.parameters(), before[k]))
        out[k] = float(np.sqrt(sq))
    return out


def batch_indices(n: int, batch: int, step: int, seed: int) -> np.ndarray:
    """Dataset rows for a global step: seeded per-epoch permutations, wrapped."""
    start = step * batch
    rows = []
    while len(rows) < batch:
        epoch, offset = divmod(start + len(rows), n)
        perm = np.random.default_rng([seed, epoch]).permutation(n)
        take = min(batch - len(rows), n - offset)
        rows.extend(perm[offset : offset + take])
    return np.asarray(rows)


class Trainer:
    def __init__(self, config: TrainConfig, model: AVLAEModel | None = None):
        self.config = config
        self.model = model or AVLAEModel(config.model_config(), np.random.default_rng([config.seed, 1]))
        self.rng = np.random.default_rng([config.seed, 2])
        self.step_count = 0
        c = config
        m = self.model
        self.optimizers = {
            name: Adam(m.parameters(*ids), c.alpha, c.beta1, c.beta2) for name, ids in STEP_GROUPS.items()
        }
        self._fake_idx: np.ndarray | None = None

    # -- sampling ----------------------------------------------------------
    def sample_latents(self, n: int) -> tuple[Tensor, Tensor]:
        d = self.config.latent_dim
        z_a = Tensor(self.rng.standard_normal((n, d)))
        z_m = Tensor(self.rng.standard_normal((n, d)))
        return z_a, z_m

    def sample_frame_index(self, n: int) -> np.ndarray:
        return self.rng.integers(0, self.config.n_frames, size=n)

    def _fake_frames(self, n: int) -> np.ndarray:
        if self._fake_idx is None or len(self._fake_idx) != n:
            self._fake_idx = self.sample_frame_index(n)
        return self._fake_idx

    def _run(self, name: str, loss: Tensor, groups: tuple[str, ...], losses: dict) -> StepReport:
        report = StepReport(self.step_count, losses=losses)
        report.check_finite()
        for g in groups:
            self.optimizers[g].zero_grad()
        # gradients of earlier steps must not leak into this update
        for p in self.model.parameters():
            p.grad = None
        loss.backward()
        for g in groups:
            self.optimizers[g].step()
        return report

    # -- the three steps ---------------------------------------------------------
    def step_discriminators(self, real: np.ndarray | Tensor) -> StepReport:
        t0 = time.perf_counter()
        m, n = self.model, len(real)
        real = Tensor(real)
        before = _snapshot(m)
        z_a, z_m = self.sample_latents(n)
        with no_grad():
            fake = m.sample(z_a, z_m).detach()
            # flow of fixed inputs carries no trainable state; skip its graph
            real_flow = m.flow(real) if m.E_M is not None else None
            fake_flow = m.flow(fake) if m.E_M is not None else None
        real_idx = self.sample_frame_index(n)
        fake_idx = self._fake_frames(n)
        if m.E_M is not None:
            rv = m.D_V(real, m.E_M.encode_flow(real_flow))
            fv = m.D_V(fake, m.E_M.encode_flow(fake_flow))
        else:
            rv, fv = m.D_V(real), m.D_V(fake)
        disc_v, _ = adversarial_terms(rv, fv)
        disc_i, _ = loss_adv_image(m, select_frames(real, real_idx), select_frames(fake, fake_idx))
        objective = -(disc_v + disc_i)
        losses = {"L_V_disc": disc_v.item(), "L_I_disc": disc_i.item(),
                  "D_V_real": float(np.mean(rv.data > 0)), "D_V_fake": float(np.mean(fv.data < 0))}
        report = self._run("discriminators", objective, ("video_disc", "image_disc"), losses)
        report.delta_norms = _delta_norms(m, before)
        report.wall_time = time.perf_counter() - t0
        return report

    def generator_objective(self, z_a: Tensor, z_m: Tensor, frame_idx: np.ndarray) -> Tensor:
        m = self.model
        fake = m.sample(z_a, z_m)
        image_logit, video_logit = m.fake_logits(fake, frame_idx)
        if self.config.generator_loss == "saturating":
            return adversarial_terms(None, image_logit)[1] + adversarial_terms(None, video_logit)[1]
        return F.softplus(-image_logit).mean() + F.softplus(-video_logit).mean()

    def step_generator(self) -> StepReport:
        t0 = time.perf_counter()
        m = self.model
        before = _snapshot(m)
        n = self.config.batch
        z_a, z_m = self.sample_latents(n)
        loss = self.generator_objective(z_a, z_m, self._fake_frames(n))
        report = self._run("generator", loss, ("generator",), {"L_gen": loss.item()})
        report.delta_norms = _delta_norms(m, before)
        report.wall_time = time.perf_counter() - t0
        return report

    def step_latent_recon(self) -> StepReport:
        t0 = time.perf_counter()
        m, c = self.model, self.config
        before = _snapshot(m)
        n = c.batch
        z_a, z_m = self.sample_latents(n)
        idx = self._fake_frames(n)
        loss = loss_rec(m, z_a, z_m, idx, c.k1, c.k2, c.rec_norm)
        losses = {"L_rec": loss.item()}
        if loss.requires_grad:
            report = self._run("latent_rec", loss, ("latent_rec",), losses)
        else:
            report = StepReport(self.step_count, losses=losses)
            report.check_finite()
        report.delta_norms = _delta_norms(m, before)
        report.wall_time = time.perf_counter() - t0
        return report

    def train_step(self, real: np.ndarray) -> StepReport:
        """One full iteration: Steps I, II, III on a shared fake-frame index."""
        self._fake_idx = None
        report = StepReport(self.step_count)
        report.merge(self.step_discriminators(real))
        report.merge(self.step_generator())
        report.merge(self.step_latent_recon())
        self._fake_idx = None
        self.step_count += 1
        return report

    def fit(self, videos: np.ndarray, steps: int | None = None) -> Iterator[StepReport]:
        """Yield one report per iteration until the step budget is spent."""
        if len(videos) == 0:
            raise ValueError("dataset is empty")
        steps = self.config.steps if steps is None else steps
        end = self.step_count + steps
        while self.step_count < end:
            rows = batch_indices(len(videos), self.config.batch, self.step_count, self.config.seed)
            report = self.train_step(videos[rows])
            if self.config.log_every and report.step % self.config.log_every == 0:
                logger.info("step %d %s", report.step, report.losses)
            yield report

    # -- persistence -------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        tensors = {name: p.data for name, p in self.model.named_parameters().items()}
        for group, opt in self.optimizers.items():
            for p, m, v in zip(opt.params, opt.state.m, opt.state.v):
                tensors[f"adam.{group}.m.{p.name}"] = m
                tensors[f"adam.{group}.v.{p.name}"] = v
        return tensors

    def header(self) -> dict:
        return {
            "fingerprint": self.config.fingerprint(),
            "step": self.step_count,
            "rng_state": self.rng.bit_generator.state,
            "adam_t": {g: opt.state.t for g, opt in self.optimizers.items()},
            "config": self.config.to_dict(),
        }

    def load_state(self, header: dict, tensors: dict[str, np.ndarray]) -> None:
        expected = set(self.state_dict())
        missing = sorted(expected - set(tensors))
        if missing:
            raise KeyError(f"checkpoint is missing tensor {missing[0]!r} ({len(missing)} missing)")
        for name, p in self.model.named_parameters().items():
            p.data = tensors[name].astype(p.dtype).copy()
        for group, opt in self.optimizers.items():
            opt.state.m = [tensors[f"adam.{group}.m.{p.name}"].astype(p.dtype).copy() for p in opt.params]
            opt.state.v = [tensors[f"adam.{group}.v.{p.name}"].astype(p.dtype).copy() for p in opt.params]
            opt.state.t = int(header["adam_t"][group])
        self.step_count = int(header["step"])
        self.rng.bit_generator.state = header["rng_state"]


def parameter_partition(model: AVLAEModel) -> dict[str, list[str]]:
    """Parameter names per network id; the lists are pairwise disjoint."""
    out: dict[str, list[str]] = {k: [] for k in NETWORK_IDS if k in model.networks}
    for net_id, name, _ in model.iter_parameters():
        out[net_id].append(name)
    return out

"""The seven AVLAE networks and the model that wires them together.

``F_A``/``F_M`` map input latents to the intermediate space, ``G`` turns the
concatenated intermediate latent into a video, ``E_A`` encodes one frame,
``E_M`` encodes the optical flow of a whole video, and ``D_I``/``D_V`` score
encoded frames and (video, encoded motion) pairs. Discriminators return
logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import functional as F
from .flow import FlowEstimator
from .tensor import Tensor, as_tensor, get_default_dtype, no_grad

NETWORK_IDS = ("F_A", "F_M", "G", "E_A", "E_M_star", "D_I", "D_V")
SLOPE = 0.2


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 128
    n_frames: int = 16
    height: int = 128
    width: int = 128
    channels: int = 64
    disc_channels: int | None = None
    hidden: int = 128
    mapping_layers: int = 5
    disc_layers: int = 3
    use_motion_encoder: bool = True
    flow_iterations: int = 20
    flow_smoothness: float = 0.5
    flow_scale: int = 8

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("videos need at least 2 frames")
        if self.height != self.width:
            raise ValueError("only square frames are supported")
        if not _is_pow2(self.n_frames) or self.height < 4 or not _is_pow2(self.height // 4) or self.height % 4:
            raise ValueError("n_frames and height/4 must be powers of two")
        if self.height % self.flow_scale:
            raise ValueError(f"flow scale {self.flow_scale} must divide {self.height}")

    @property
    def critic_channels(self) -> int:
        """Base width of the encoders and the video discriminator trunk."""
        return self.channels if self.disc_channels is None else self.disc_channels


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


class Network:
    """Named parameter collection with a forward ``__call__``."""

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, Tensor] = {}

    def _param(self, key: str, shape, fan_in: int, rng: np.random.Generator, zero: bool = False) -> Tensor:
        if zero:
            data = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / ((1.0 + SLOPE**2) * fan_in))
            data = rng.uniform(-bound, bound, size=shape)
        t = Tensor(data.astype(get_default_dtype()), requires_grad=True)
        t.name = f"{self.name}.{key}"
        self.params[key] = t
        return t

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"{self.name}.{k}": v for k, v in self.params.items()}

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


class MLP(Network):
    """Stacked fully connected layers, leaky-relu between, linear output."""

    def __init__(self, name: str, sizes: list[int], rng: np.random.Generator):
        super().__init__(name)
        self.n_layers = len(sizes) - 1
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self._param(f"fc{i}.weight", (b, a), a, rng)
            self._param(f"fc{i}.bias", (b,), a, rng, zero=True)

    def __call__(self, x: Tensor) -> Tensor:
        for i in range(self.n_layers):
            x = F.linear(x, self.params[f"fc{i}.weight"], self.params[f"fc{i}.bias"])
            if i < self.n_layers - 1:
                x = F.leaky_relu(x, SLOPE)
        return x


class _FactorizedStack(Network):
    """Strided factorized (1+2)D convolutions with leaky-relu, then flatten."""

    def __init__(self, name, in_channels, in_shape, widths, rng, min_spatial=4):
        super().__init__(name)
        self.stages = []
        c, (t, h, _) = in_channels, in_shape
        for i, width in enumerate(widths):
            ss, ks, ps = (2, 4, 1) if h > min_spatial else (1, 3, 1)
            if t > 2:
                st, kt, pt = 2, 3, 1
            else:
                st, kt, pt = 1, t, 0
            self._param(f"conv{i}.spatial", (width, c, ks, ks), c * ks * ks, rng)
            self._param(f"conv{i}.temporal", (width, width, kt), width * kt, rng)
            self._param(f"conv{i}.bias", (width,), width * kt, rng, zero=True)
            self.stages.append(((st, ss), (pt, ps)))
            t = (t + 2 * pt - kt) // st + 1
            h = (h + 2 * ps - ks) // ss + 1
            c = width
        self.out_shape = (c, t, h, h)
        self.out_features = c * t * h * h

    def __call__(self, x: Tensor) -> Tensor:
        for i, (stride, padding) in enumerate(self.stages):
            p = self.params
            x = F.conv_1p2d(x, p[f"conv{i}.spatial"], p[f"conv{i}.temporal"], stride, padding,
                            bias=p[f"conv{i}.bias"])
            x = F.leaky_relu(x, SLOPE)
        return x.reshape(x.shape[0], -1)


def _down_widths(channels: int, size: int, min_spatial: int = 4) -> list[int]:
    n = max(1, int(round(math.log2(size / min_spatial))))
    return [max(8, channels // 2 ** (n - 1 - i)) for i in range(n)]


class Generator(Network):
    """Concatenated ``[w_A, w_M]`` -> video via factorized transposed convs."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__("G")
        d, c0 = cfg.latent_dim, cfg.channels
        self.seed_shape = (c0, 1, 4, 4)
        self._param("fc.weight", (int(np.prod(self.seed_shape)), 2 * d), 2 * d, rng)
        self._param("fc.bias", (int(np.prod(self.seed_shape)),), 2 * d, rng, zero=True)
        t_stages = int(math.log2(cfg.n_frames))
        s_stages = int(math.log2(cfg.height // 4))
        n = max(t_stages, s_stages, 1)
        self.stages = []
        c = c0
        for i in range(n):
            last = i == n - 1
            out = 3 if last else max(8, c // 2)
            mid = c if last else out
            kt, st, pt = (4, 2, 1) if i < t_stages else (3, 1, 1)
            ks, ss, ps = (4, 2, 1) if i < s_stages else (3, 1, 1)
            self._param(f"up{i}.temporal", (c, mid, kt), c * kt, rng)
            self._param(f"up{i}.spatial", (mid, out, ks, ks), mid * ks * ks // (ss * ss), rng)
            self._param(f"up{i}.bias", (out,), mid, rng, zero=True)
            self.stages.append(((st, ss), (pt, ps)))
            c = out

    def __call__(self, w_a: Tensor, w_m: Tensor) -> Tensor:
        x = F.concat([w_a, w_m], axis=1)
        return self.from_joint(x)

    def from_joint(self, w: Tensor) -> Tensor:
        p = self.params
        x = F.leaky_relu(F.linear(w, p["fc.weight"], p["fc.bias"]), SLOPE)
        x = x.reshape(w.shape[0], *self.seed_shape)
        for i, (stride, padding) in enumerate(self.stages):
            x = F.conv_transpose_1p2d(x, p[f"up{i}.spatial"], p[f"up{i}.temporal"], stride, padding,
                                      bias=p[f"up{i}.bias"])
            x = x.tanh() if i == len(self.stages) - 1 else F.leaky_relu(x, SLOPE)
        return x


class AppearanceEncoder(Network):
    """Single frame ``[N, 3, H, W]`` -> ``d``-dimensional appearance code."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__("E_A")
        self.convs = []
        c, h = 3, cfg.height
        for i, width in enumerate(_down_widths(cfg.critic_channels, cfg.height)):
            self._param(f"conv{i}.weight", (width, c, 1, 4, 4), c * 16, rng)
            self._param(f"conv{i}.bias", (width,), c * 16, rng, zero=True)
            c, h = width, h // 2
        self.n_convs = i + 1
        flat = c * h * h
        self._param("fc.weight", (cfg.latent_dim, flat), flat, rng)
        self._param("fc.bias", (cfg.latent_dim,), flat, rng, zero=True)

    def __call__(self, frame: Tensor) -> Tensor:
        p = self.params
        x = frame.reshape(frame.shape[0], frame.shape[1], 1, *frame.shape[2:])
        for i in range(self.n_convs):
            x = F.conv3d(x, p[f"conv{i}.weight"], p[f"conv{i}.bias"], stride=(1, 2, 2), padding=(0, 1, 1))
            x = F.leaky_relu(x, SLOPE)
        return F.linear(x.reshape(x.shape[0], -1), p["fc.weight"], p["fc.bias"])


class MotionEncoder(Network):
    """Flow-based motion code. Only the convolutional trunk is trainable."""

    def __init__(self, cfg: ModelConfig, flow: FlowEstimator, rng: np.random.Generator):
        super().__init__("E_M_star")
        self.flow = flow
        _, t, h, _ = flow.output_shape(cfg.n_frames, cfg.height, cfg.width)
        self.trunk = _FactorizedStack("E_M_star", 2, (t, h, h), _down_widths(cfg.critic_channels, h), rng)
        self.params = self.trunk.params
        flat = self.trunk.out_features
        self._param("fc.weight", (cfg.latent_dim, flat), flat, rng)
        self._param("fc.bias", (cfg.latent_dim,), flat, rng, zero=True)

    def encode_flow(self, flow: Tensor) -> Tensor:
        return F.linear(self.trunk(flow), self.params["fc.weight"], self.params["fc.bias"])

    def __call__(self, video: Tensor) -> Tensor:
        return self.encode_flow(self.flow(video))


class VideoDiscriminator(Network):
    """Convolutional trunk over the raw video, joined with ``w'_M`` before 3 FC layers."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__("D_V")
        self.trunk = _FactorizedStack("D_V", 3, (cfg.n_frames, cfg.height, cfg.width),
                                      _down_widths(cfg.critic_channels, cfg.height), rng)
        self.params = self.trunk.params
        self.use_motion = cfg.use_motion_encoder
        head_in = self.trunk.out_features + (cfg.latent_dim if self.use_motion else 0)
        sizes = [head_in] + [cfg.hidden] * (cfg.disc_layers - 1) + [1]
        self.head = MLP("D_V", sizes, rng)
        for k, v in self.head.params.items():
            self.params[f"head.{k}"] = v
            v.name = f"D_V.head.{k}"

    def __call__(self, video: Tensor, w_m: Tensor | None = None) -> Tensor:
        feats = self.trunk(video)
        if self.use_motion:
            if w_m is None:
                raise ValueError("this video discriminator expects an encoded motion vector")
            feats = F.concat([feats, w_m], axis=1)
        return self.head(feats).reshape(-1)


class AVLAEModel:
    """Holds the seven networks and exposes the model-level operations."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.config = cfg
        d = cfg.latent_dim
        self.flow = FlowEstimator(cfg.flow_iterations, cfg.flow_smoothness, cfg.flow_scale)
        self.F_A = MLP("F_A", [d] * (cfg.mapping_layers + 1), rng)
        self.F_M = MLP("F_M", [d] * (cfg.mapping_layers + 1), rng)
        self.G = Generator(cfg, rng)
        self.E_A = AppearanceEncoder(cfg, rng)
        self.E_M = MotionEncoder(cfg, self.flow, rng) if cfg.use_motion_encoder else None
        self.D_I = MLP("D_I", [d] + [cfg.hidden] * (cfg.disc_layers - 1) + [1], rng)
        self.D_V = VideoDiscriminator(cfg, rng)

    @property
    def networks(self) -> dict[str, Network]:
        nets = {"F_A": self.F_A, "F_M": self.F_M, "G": self.G, "E_A": self.E_A,
                "E_M_star": self.E_M, "D_I": self.D_I, "D_V": self.D_V}
        return {k: v for k, v in nets.items() if v is not None}

    def parameters(self, *ids: str) -> list[Tensor]:
        nets = self.networks
        ids = ids or tuple(nets)
        return [p for i in ids if i in nets for p in nets[i].parameters()]

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for net in self.networks.values():
            out.update(net.named_parameters())
        return out

    def iter_parameters(self) -> Iterator[tuple[str, str, Tensor]]:
        for net_id, net in self.networks.items():
            for name, p in net.named_parameters().items():
                yield net_id, name, p

    # -- operations ---------------------------------------------------------
    def _latent(self, z) -> Tensor:
        z = as_tensor(z)
        if z.ndim == 1:
            z = z.reshape(1, -1)
        if z.shape[1] != self.config.latent_dim:
            raise ValueError(f"latent dimension {z.shape[1]} != {self.config.latent_dim}")
        return z

    def map_appearance(self, z_a) -> Tensor:
        return self.F_A(self._latent(z_a))

    def map_motion(self, z_m) -> Tensor:
        return self.F_M(self._latent(z_m))

    def generate(self, w_a, w_m) -> Tensor:
        return self.G(self._latent(w_a), self._latent(w_m))

    def encode_appearance(self, frame) -> Tensor:
        frame = as_tensor(frame)
        if frame.ndim == 3:
            frame = frame.reshape(1, *frame.shape)
        return self.E_A(frame)

    def encode_motion(self, video) -> Tensor:
        if self.E_M is None:
            raise RuntimeError("model was built without a motion encoder")
        video = as_tensor(video)
        if video.ndim == 4:
            video = video.reshape(1, *video.shape)
        return self.E_M(video)

    def disc_image(self, w_a) -> Tensor:
        return self.D_I(self._latent(w_a)).reshape(-1)

    def disc_video(self, video, w_m=None) -> Tensor:
        video = as_tensor(video)
        if video.ndim == 4:
            video = video.reshape(1, *video.shape)
        if w_m is not None:
            w_m = self._latent(w_m)
        return self.D_V(video, w_m)

    def sample(self, z_a, z_m) -> Tensor:
        return self.generate(self.map_appearance(z_a), self.map_motion(z_m))

    def reconstruct_video(self, video, t: int) -> Tensor:
        """``G(E_A(x_t), E_M(x))`` with a 1-based frame index ``t``."""
        video = as_tensor(video)
        squeeze = video.ndim == 4
        if squeeze:
            video = video.reshape(1, *video.shape)
        n_frames = video.shape[2]
        if not 1 <= t <= n_frames:
            raise IndexError(f"frame index {t} outside [1, {n_frames}]")
        out = self.generate(self.encode_appearance(video[:, :, t - 1]), self.encode_motion(video))
        return out[0] if squeeze else out

    def fake_logits(self, video: Tensor, frame_idx: np.ndarray) -> tuple[Tensor, Tensor | None]:
        """Image and video discriminator logits for a batch and per-video frame indices."""
        frames = select_frames(video, frame_idx)
        image_logit = self.disc_image(self.encode_appearance(frames))
        w_m = self.encode_motion(video) if self.E_M is not None else None
        return image_logit, self.D_V(video, w_m)


def select_frames(video: Tensor, frame_idx: np.ndarray) -> Tensor:
    """Pick frame ``frame_idx[i]`` (0-based) from video ``i``: ``[N, 3, H, W]``."""
    frame_idx = np.asarray(frame_idx, dtype=np.int64)
    return video[np.arange(video.shape[0]), :, frame_idx]


def check_finite(model: AVLAEModel) -> bool:
    with no_grad():
        return all(np.isfinite(p.data).all() for p in model.parameters())

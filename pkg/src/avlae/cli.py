"""``avlae`` command line: train, sample, swap, reconstruct, eval.

Exit codes: 0 success, 1 user error (bad config, missing file, mismatched
checkpoint, bad arguments), 2 runtime abort (diverged training, I/O failure).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .data import SyntheticSpec, export_frames, export_grid, ingest_external, make_synthetic, noise_videos
from .tensor import Tensor, no_grad
from .training import TrainConfig, Trainer, TrainingDiverged

logger = logging.getLogger("avlae")

EXIT_OK, EXIT_USER, EXIT_RUNTIME = 0, 1, 2

# config-file key -> TrainConfig field, per section
SECTIONS = {
    "model": {"d": "latent_dim", "T": "n_frames", "H": "height", "W": "width", "channels": "channels",
              "disc_channels": "disc_channels", "hidden": "hidden"},
    "optim": {"alpha": "alpha", "beta1": "beta1", "beta2": "beta2", "k1": "k1", "k2": "k2", "batch": "batch",
              "steps": "steps", "seed": "seed", "generator_loss": "generator_loss", "rec_norm": "rec_norm"},
    "flow": {"iterations": "flow_iterations", "smoothness": "flow_smoothness", "scale": "flow_scale"},
    "io": {"out_dir": None, "checkpoint_every": "checkpoint_every", "log_every": "log_every"},
    "ablation": {"k1_zero": None, "k2_zero": None, "no_motion_encoder": None},
    "data": {"source": None, "n_videos": None, "seed": None, "background": None, "radius": None,
             "path": None, "resize": None, "hflip": None},
}


class UserError(Exception):
    pass


@dataclasses.dataclass
class RunConfig:
    train: TrainConfig
    data: dict
    out_dir: Path

    def sidecar(self) -> dict:
        return {"fingerprint": self.train.fingerprint(), "seed": self.train.seed, "config": self.train.to_dict(),
                "data": self.data}


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UserError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UserError(f"{path}: top level must be an object")
    for section, body in doc.items():
        if section not in SECTIONS:
            raise UserError(f"{path}: unknown section {section!r}")
        if not isinstance(body, dict):
            raise UserError(f"{path}: section {section!r} must be an object")
        unknown = sorted(set(body) - set(SECTIONS[section]))
        if unknown:
            raise UserError(f"{path}: unknown key {section}.{unknown[0]}")
    return doc


def build_run_config(doc: dict, overrides: dict) -> RunConfig:
    """Defaults, then file values, then command-line ``overrides`` (TrainConfig field names)."""
    values = {}
    for section in ("model", "optim", "flow", "io"):
        for key, value in doc.get(section, {}).items():
            field = SECTIONS[section][key]
            if field is not None:
                values[field] = value
    ablation = doc.get("ablation", {})
    if ablation.get("k1_zero"):
        values["k1"] = 0.0
    if ablation.get("k2_zero"):
        values["k2"] = 0.0
    if ablation.get("no_motion_encoder"):
        values["use_motion_encoder"] = False
    values.update({k: v for k, v in overrides.items() if v is not None and k != "out_dir"})
    try:
        train = TrainConfig.desk(**values)
    except (TypeError, ValueError) as exc:
        raise UserError(f"invalid configuration: {exc}") from None
    data = {"source": "synthetic", "n_videos": 1024, "seed": train.seed, **doc.get("data", {})}
    if data["source"] not in ("synthetic", "directory"):
        raise UserError(f"unknown data source {data['source']!r}")
    out_dir = Path(overrides.get("out_dir") or doc.get("io", {}).get("out_dir") or "runs/avlae")
    return RunConfig(train, data, out_dir)


def load_dataset(run: RunConfig) -> np.ndarray:
    c, data = run.train, run.data
    if data["source"] == "synthetic":
        spec = SyntheticSpec(n_videos=int(data["n_videos"]), n_frames=c.n_frames, height=c.height, width=c.width,
                             background=data.get("background", "solid"), radius=float(data.get("radius", 5.0)),
                             seed=int(data["seed"]))
        return make_synthetic(spec).videos
    if "path" not in data:
        raise UserError("data.source 'directory' needs data.path")
    resize = tuple(data["resize"]) if data.get("resize") else None
    videos, info = ingest_external(data["path"], c.n_frames, c.height, c.width, resize=resize,
                                   seed=int(data["seed"]), hflip=bool(data.get("hflip", False)))
    if not len(videos):
        raise UserError(f"no usable videos under {data['path']} ({info['skipped']} too short)")
    return videos


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def latent_digest(z: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(z, dtype="<f4").tobytes()).hexdigest()


# ---------------------------------------------------------------- commands
def cmd_train(args) -> int:
    doc = read_config_file(args.config) if args.config else {}
    run = build_run_config(doc, {"steps": args.steps, "seed": args.seed, "out_dir": args.out_dir})
    videos = load_dataset(run)
    trainer = Trainer(run.train)
    out = run.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        header, tensors = io.load_checkpoint(args.resume, run.train.fingerprint())
        trainer.load_state(header, tensors)
    write_json(out / "run.json", run.sidecar())
    every = run.train.checkpoint_every
    remaining = run.train.steps - trainer.step_count
    with open(out / "train.jsonl", "a" if args.resume else "w") as log:
        for report in trainer.fit(videos, max(remaining, 0)):
            log.write(report.to_json() + "\n")
            if run.train.log_every and report.step % run.train.log_every == 0:
                logger.info("step %d %s", report.step, {k: round(v, 4) for k, v in report.losses.items()})
            if every and trainer.step_count % every == 0:
                io.save_checkpoint(out / f"step_{trainer.step_count:06d}.avc1", trainer.header(), trainer.state_dict())
    io.save_checkpoint(out / "final.avc1", trainer.header(), trainer.state_dict())
    print(f"trained {trainer.step_count} steps; checkpoint {out / 'final.avc1'}")
    return EXIT_OK


def load_trainer(path, config_path=None) -> Trainer:
    path = Path(path)
    if not path.is_file():
        raise UserError(f"checkpoint not found: {path}")
    expected = None
    if config_path:
        expected = build_run_config(read_config_file(config_path), {}).train.fingerprint()
    header, tensors = io.load_checkpoint(path, expected)
    config = TrainConfig(**header["config"])
    if config.fingerprint() != header.get("fingerprint"):
        raise io.FingerprintMismatch(f"{path}: stored config does not match stored fingerprint")
    trainer = Trainer(config)
    trainer.load_state(header, tensors)
    return trainer


def _emit_videos(out: Path, videos: np.ndarray, prefix: str) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, video in enumerate(videos):
        name = f"{prefix}_{i:04d}"
        io.save_video(out / f"{name}.avt1", np.clip(video, -1, 1))
        export_frames(video, out / name)
        names.append(name)
    export_grid(videos, out / f"{prefix}_grid.png")
    return names


def _sidecar(trainer: Trainer, command: str, **extra) -> dict:
    return {"command": command, "fingerprint": trainer.config.fingerprint(), "checkpoint_step": trainer.step_count,
            "config": trainer.config.to_dict(), **extra}


def cmd_sample(args) -> int:
    trainer = load_trainer(args.checkpoint, args.config)
    d = trainer.config.latent_dim
    rng = np.random.default_rng([args.seed, 101])
    z_a, z_m = rng.standard_normal((args.n, d)), rng.standard_normal((args.n, d))
    with no_grad():
        videos = trainer.model.sample(Tensor(z_a), Tensor(z_m)).data
    out = Path(args.out)
    names = _emit_videos(out, videos, "sample")
    write_json(out / "meta.json", _sidecar(trainer, "sample", seed=args.seed, n=args.n, videos=names))
    print(f"wrote {args.n} videos to {out}")
    return EXIT_OK


def cmd_swap(args) -> int:
    trainer = load_trainer(args.checkpoint, args.config)
    d = trainer.config.latent_dim
    rng = np.random.default_rng([args.seed, 102])
    shared = np.repeat(rng.standard_normal((1, d)), args.n, axis=0)
    varied = rng.standard_normal((args.n, d))
    z_a, z_m = (shared, varied) if args.mode == "fix-appearance" else (varied, shared)
    with no_grad():
        videos = trainer.model.sample(Tensor(z_a), Tensor(z_m)).data
    fixed = z_a if args.mode == "fix-appearance" else z_m
    digests = [latent_digest(z) for z in fixed.astype(np.float32)]
    if len(set(digests)) != 1:
        raise RuntimeError("shared latent differs between outputs")
    out = Path(args.out)
    names = _emit_videos(out, videos, "swap")
    fixed_name = "z_A" if args.mode == "fix-appearance" else "z_M"
    write_json(out / "meta.json", _sidecar(
        trainer, "swap", seed=args.seed, mode=args.mode, n=args.n, videos=names,
        fixed_latent=fixed_name, fixed_latent_sha256=digests, fixed_latent_identical=True,
    ))
    print(f"wrote {args.n} videos sharing {fixed_name} to {out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    trainer = load_trainer(args.checkpoint, args.config)
    path = Path(args.input)
    if not path.is_file():
        raise UserError(f"input video not found: {path}")
    video = io.load_video(path)
    c = trainer.config
    if video.shape != (3, c.n_frames, c.height, c.width):
        raise UserError(f"input video shape {video.shape} does not match the model ({3, c.n_frames, c.height, c.width})")
    if not 1 <= args.frame <= c.n_frames:
        raise UserError(f"frame {args.frame} outside [1, {c.n_frames}]")
    with no_grad():
        recon = trainer.model.reconstruct_video(Tensor(video), args.frame).data
    out = Path(args.out)
    names = _emit_videos(out, np.stack([video, recon]), "pair")
    l1 = float(np.abs(recon - video).mean())
    write_json(out / "meta.json", _sidecar(trainer, "reconstruct", input=str(path), frame=args.frame,
                                           videos=names, mean_l1=l1))
    print(f"reconstruction L1 {l1:.4f}; wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .extractor import VideoFeatureExtractor
    from .metrics import disentanglement_probe, fid, inception_score

    trainer = load_trainer(args.checkpoint, args.config)
    c = trainer.config
    spec = SyntheticSpec(n_videos=max(2 * args.n, 2048), n_frames=c.n_frames, height=c.height, width=c.width,
                         seed=args.seed)
    data = make_synthetic(spec)
    extractor = VideoFeatureExtractor(random_state=args.seed).fit(
        data.videos, np.stack([data.appearance, data.motion], axis=1)
    )
    extractor.require_gate(0.9)
    rng = np.random.default_rng([args.seed, 103])
    z_a, z_m = rng.standard_normal((args.n, c.latent_dim)), rng.standard_normal((args.n, c.latent_dim))
    generated = []
    with no_grad():
        for i in range(0, args.n, 64):
            generated.append(trainer.model.sample(Tensor(z_a[i : i + 64]), Tensor(z_m[i : i + 64])).data)
    generated = np.concatenate(generated)
    real = data.videos[: args.n]
    noise = noise_videos(args.n, c.n_frames, c.height, c.width, seed=args.seed)
    feats = {k: extractor.transform(v) for k, v in (("real", real), ("generated", generated), ("noise", noise))}
    probe = disentanglement_probe(trainer.model, n_pairs=min(args.n, 256), seed=args.seed)
    result = {
        "extractor_accuracy": extractor.validation_score_,
        "fid_generated": fid(feats["generated"], feats["real"]),
        "fid_noise": fid(feats["noise"], feats["real"]),
        "inception_score": inception_score(extractor.predict_proba(generated)),
        "probe": probe.as_dict(),
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    if args.out:
        write_json(Path(args.out) / "eval.json", _sidecar(trainer, "eval", seed=args.seed, n=args.n, result=result))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avlae", description="Adversarial video latent autoencoder")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    def with_checkpoint(name, help_text, func):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--config", help="refuse the checkpoint unless it matches this config")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    p = with_checkpoint("sample", "draw random videos", cmd_sample)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--out", required=True)

    p = with_checkpoint("swap", "videos sharing one latent", cmd_swap)
    p.add_argument("--mode", choices=("fix-appearance", "fix-motion"), required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--out", required=True)

    p = with_checkpoint("reconstruct", "G(E_A(x_t), E_M(x)) for a stored video", cmd_reconstruct)
    p.add_argument("--input", required=True, help="AVT1 video [3, T, H, W]")
    p.add_argument("--frame", type=int, default=1, help="1-based appearance frame")
    p.add_argument("--out", required=True)

    p = with_checkpoint("eval", "FID, IS and the disentanglement probe", cmd_eval)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USER
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "n", 1) is not None and getattr(args, "n", 1) < 1:
        print("error: --n must be >= 1", file=sys.stderr)
        return EXIT_USER
    try:
        return args.func(args)
    except (UserError, io.FingerprintMismatch, io.ContainerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (TrainingDiverged, OSError, RuntimeError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()

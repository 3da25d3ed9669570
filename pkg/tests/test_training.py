import numpy as np
import pytest

from avlae import io
from avlae.networks import select_frames
from avlae.tensor import Tensor, no_grad, precision
from avlae.training import (
    STEP_GROUPS,
    TrainConfig,
    Trainer,
    TrainingDiverged,
    adversarial_terms,
    batch_indices,
    loss_rec,
    parameter_partition,
    reconstruction_terms,
)

SMALL = dict(latent_dim=6, n_frames=4, height=16, width=16, channels=8, disc_channels=8, hidden=12, flow_scale=2,
             flow_iterations=4, batch=4, steps=10, log_every=0)


def small_config(**kw):
    return TrainConfig(**{**SMALL, **kw})


def videos(n=16, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, size=(n, 3, 4, 16, 16)).astype(np.float32)


def snapshot(model):
    return {name: p.data.copy() for name, p in model.named_parameters().items()}


# --------------------------------------------------------------- oracles
def test_adversarial_terms_match_naive_formula(rng):
    with precision(np.float64):
        real, fake = rng.standard_normal(7) * 3, rng.standard_normal(7) * 3
        disc, gen = adversarial_terms(Tensor(real), Tensor(fake))
    sig = lambda x: 1 / (1 + np.exp(-x))
    naive_gen = np.mean(np.log(1 - sig(fake)))
    assert abs(gen.item() - naive_gen) <= 1e-6
    assert abs(disc.item() - (np.mean(np.log(sig(real))) + naive_gen)) <= 1e-6


def test_reconstruction_unit_offsets_give_dimension():
    w = Tensor(np.zeros((1, 4)))
    enc = Tensor(np.ones((1, 4)))
    total = reconstruction_terms(w, w, enc_a=enc, enc_m=enc, k1=1.0, k2=0.0)
    assert total.item() == 4.0


def test_reconstruction_hand_computed(rng):
    with precision(np.float64):
        w_a, w_m, e_a, e_m = (rng.standard_normal((3, 5)) for _ in range(4))
        got = reconstruction_terms(Tensor(w_a), Tensor(w_m), Tensor(e_a), Tensor(e_m), k1=0.5, k2=2.0).item()
        l1 = reconstruction_terms(Tensor(w_a), Tensor(w_m), Tensor(e_a), Tensor(e_m), 1.0, 1.0, norm="l1").item()
    expect = np.mean(0.5 * ((w_m - e_m) ** 2).sum(1) + 2.0 * ((w_a - e_a) ** 2).sum(1))
    assert abs(got - expect) <= 1e-9
    assert abs(l1 - np.mean(np.abs(w_m - e_m).sum(1) + np.abs(w_a - e_a).sum(1))) <= 1e-9


def test_reconstruction_is_zero_when_codes_match(rng):
    w = Tensor(rng.standard_normal((2, 4)))
    assert reconstruction_terms(w, w, w, w, 1.0, 1.0).item() == 0.0


def test_loss_rec_is_zero_for_disabled_terms(rng):
    tr = Trainer(small_config(k1=0.0, k2=0.0))
    z = Tensor(rng.standard_normal((2, 6)))
    assert loss_rec(tr.model, z, z, np.zeros(2, dtype=int), 0.0, 0.0).item() == 0.0


def test_loss_rec_targets_are_detached(rng):
    tr = Trainer(small_config())
    z = Tensor(rng.standard_normal((2, 6)))
    loss_rec(tr.model, z, z, np.array([0, 3])).backward()
    assert all(p.grad is None for p in tr.model.parameters("F_A", "F_M"))
    assert any(p.grad is not None for p in tr.model.parameters("G"))


@pytest.mark.parametrize("kw", [dict(k1=-1.0), dict(batch=0), dict(generator_loss="x"), dict(rec_norm="l3")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        small_config(**kw)


def test_defaults():
    c = TrainConfig()
    assert (c.alpha, c.beta1, c.beta2, c.k1, c.k2, c.latent_dim, c.n_frames) == (2e-4, 0.5, 0.999, 1.0, 1.0, 128, 16)
    assert c.generator_loss == "saturating" and c.rec_norm == "l2"


# ------------------------------------------------------------- partition
STEP_SETS = {
    "step_discriminators": {"E_M_star", "D_V", "E_A", "D_I"},
    "step_generator": {"F_A", "F_M", "G"},
    "step_latent_recon": {"E_A", "E_M_star", "G"},
}


def _run_step(trainer, name, real):
    if name == "step_discriminators":
        return getattr(trainer, name)(real)
    return getattr(trainer, name)()


@pytest.mark.parametrize("step", sorted(STEP_SETS))
def test_update_partition(step):
    tr = Trainer(small_config(seed=5))
    data = videos()
    partition = parameter_partition(tr.model)
    flow_digest = tr.model.flow.state_digest()
    for it in range(5):
        rows = batch_indices(len(data), 4, it, 0)
        # advance the model so every iteration starts from a different state
        tr.train_step(data[rows])
        before = snapshot(tr.model)
        _run_step(tr, step, data[rows])
        after = snapshot(tr.model)
        for net_id, names in partition.items():
            changed = [not np.array_equal(before[n], after[n]) for n in names]
            if net_id in STEP_SETS[step]:
                assert any(changed), f"{step} did not update {net_id}"
            else:
                assert not any(changed), f"{step} wrote to {net_id}"
        assert tr.model.flow.state_digest() == flow_digest


def test_step_groups_cover_steps():
    assert set(STEP_GROUPS["video_disc"]) | set(STEP_GROUPS["image_disc"]) == STEP_SETS["step_discriminators"]
    assert set(STEP_GROUPS["generator"]) == STEP_SETS["step_generator"]
    assert set(STEP_GROUPS["latent_rec"]) == STEP_SETS["step_latent_recon"]


def test_generator_step_reaches_all_generator_networks():
    tr = Trainer(small_config())
    z_a, z_m = tr.sample_latents(4)
    tr.generator_objective(z_a, z_m, np.zeros(4, dtype=int)).backward()
    for net in ("F_A", "F_M", "G"):
        assert sum(float(np.abs(p.grad).sum()) for p in tr.model.parameters(net)) > 0


# -------------------------------------------------------- sign coherence
def _disc_objective(model, real, fake, real_idx, fake_idx):
    with no_grad():
        rv = model.D_V(real, model.encode_motion(real))
        fv = model.D_V(fake, model.encode_motion(fake))
        disc_v, _ = adversarial_terms(rv, fv)
        ri = model.disc_image(model.encode_appearance(select_frames(real, real_idx)))
        fi = model.disc_image(model.encode_appearance(select_frames(fake, fake_idx)))
        disc_i, _ = adversarial_terms(ri, fi)
    return disc_v.item() + disc_i.item()


def test_discriminator_step_improves_its_objective():
    tr = Trainer(small_config(alpha=1e-3))
    real = Tensor(videos(4))
    replay = np.random.default_rng()
    replay.bit_generator.state = tr.rng.bit_generator.state
    z_a, z_m = replay.standard_normal((4, 6)), replay.standard_normal((4, 6))
    real_idx, fake_idx = replay.integers(0, 4, size=4), replay.integers(0, 4, size=4)
    with no_grad():
        fake = tr.model.sample(Tensor(z_a, dtype=np.float32), Tensor(z_m, dtype=np.float32))
    before = _disc_objective(tr.model, real, fake, real_idx, fake_idx)
    tr.step_discriminators(real.data)
    assert _disc_objective(tr.model, real, fake, real_idx, fake_idx) > before


def test_generator_step_improves_its_objective():
    tr = Trainer(small_config(alpha=1e-3))
    replay = np.random.default_rng()
    replay.bit_generator.state = tr.rng.bit_generator.state
    z_a, z_m = Tensor(replay.standard_normal((4, 6))), Tensor(replay.standard_normal((4, 6)))
    idx = np.array([0, 1, 2, 3])
    tr._fake_idx = idx
    with no_grad():
        before = tr.generator_objective(z_a, z_m, idx).item()
    tr.step_generator()
    with no_grad():
        after = tr.generator_objective(z_a, z_m, idx).item()
    assert after < before


# ----------------------------------------------------- determinism, resume
def _stream(reports):
    return [(r.step, r.losses, r.delta_norms) for r in reports]


def test_identical_seeds_give_identical_reports():
    data = videos()
    a = _stream(Trainer(small_config(seed=3)).fit(data, 10))
    b = _stream(Trainer(small_config(seed=3)).fit(data, 10))
    assert a == b
    c = _stream(Trainer(small_config(seed=4)).fit(data, 10))
    assert a != c


def test_resume_matches_uninterrupted_run():
    data = videos()
    straight = _stream(Trainer(small_config(seed=2)).fit(data, 10))
    first = Trainer(small_config(seed=2))
    head = _stream(first.fit(data, 5))
    header, tensors = io.decode_checkpoint(io.encode_checkpoint(first.header(), first.state_dict()))
    resumed = Trainer(small_config(seed=2))
    resumed.load_state(header, tensors)
    tail = _stream(resumed.fit(data, 5))
    assert head + tail == straight


def test_load_state_reports_missing_tensor():
    tr = Trainer(small_config())
    tensors = tr.state_dict()
    tensors.pop(next(iter(tensors)))
    with pytest.raises(KeyError, match="missing"):
        Trainer(small_config()).load_state(tr.header(), tensors)


def test_nan_loss_aborts():
    tr = Trainer(small_config())
    bad = videos(4)
    bad[0, 0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged):
        tr.train_step(bad)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        next(Trainer(small_config()).fit(np.zeros((0, 3, 4, 16, 16), np.float32)))


def test_batch_indices_cover_each_epoch():
    rows = np.concatenate([batch_indices(10, 3, s, 0) for s in range(10)])
    assert sorted(rows[:10]) == list(range(10))
    assert sorted(rows[10:20]) == list(range(10))


def test_ablation_switches_build_expected_models():
    assert Trainer(small_config(use_motion_encoder=False)).model.E_M is None
    k1_zero = Trainer(small_config(k1=0.0))
    z = Tensor(np.random.default_rng(0).standard_normal((2, 6)))
    loss_rec(k1_zero.model, z, z, np.zeros(2, dtype=int), 0.0, 1.0).backward()
    assert all(p.grad is None for p in k1_zero.model.parameters("E_M_star"))


def test_fingerprint_tracks_architecture_only():
    assert small_config().fingerprint() == small_config(steps=99, seed=7).fingerprint()
    assert small_config().fingerprint() != small_config(channels=16).fingerprint()

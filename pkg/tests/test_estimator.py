import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from avlae import AVLAE
from avlae.validation import check_labels, check_latents, check_videos

TINY = dict(latent_dim=6, n_frames=4, height=16, width=16, channels=8, disc_channels=8, hidden=12, steps=2,
            batch=4, flow_iterations=4)


def clips(n=8):
    return np.random.default_rng(0).uniform(-1, 1, size=(n, 3, 4, 16, 16)).astype(np.float32)


def test_get_params_and_clone():
    est = AVLAE(**TINY)
    params = est.get_params()
    assert params["latent_dim"] == 6 and params["generator_loss"] == "non_saturating"
    assert clone(est).get_params() == params


def test_unfitted_use_raises():
    with pytest.raises(NotFittedError):
        AVLAE(**TINY).transform(clips(2))


def test_fit_transform_inverse_sample():
    est = AVLAE(**TINY).fit(clips())
    assert len(est.history_) == 2
    codes = est.transform(clips(3))
    assert codes.shape == (3, 12)
    assert est.inverse_transform(codes).shape == (3, 3, 4, 16, 16)
    assert est.reconstruct(clips(2)).shape == (2, 3, 4, 16, 16)
    videos, z_a, z_m = est.sample(2, random_state=1)
    assert videos.shape == (2, 3, 4, 16, 16) and z_a.shape == (2, 6)
    np.testing.assert_array_equal(est.sample(2, random_state=1)[0], videos)


def test_geometry_mismatch_rejected():
    with pytest.raises(ValueError, match="T="):
        AVLAE(**TINY).fit(np.zeros((2, 3, 5, 16, 16), np.float32))


def test_validation_helpers():
    with pytest.raises(ValueError):
        check_videos(np.zeros((2, 4, 4, 8, 8)))
    with pytest.raises(ValueError):
        check_videos(np.full((1, 3, 4, 8, 8), 2.0))
    with pytest.raises(ValueError):
        check_videos(np.zeros((1, 3, 1, 8, 8)))
    assert check_videos(np.zeros((3, 4, 8, 8))).shape == (1, 3, 4, 8, 8)
    with pytest.raises(ValueError):
        check_labels(np.array([[0, -1]]), 1)
    with pytest.raises(ValueError):
        check_latents(np.zeros((2, 3)), 4)
    assert check_latents(np.zeros(4), 4).shape == (1, 4)

import numpy as np
import pytest

from avlae.flow import FlowEstimator, estimate_flow
from avlae.gradcheck import check_gradients
from avlae.tensor import Tensor


def blob_video(shift=1.0, n_frames=4, size=24, sigma=2.0):
    """A gaussian blob moving ``shift`` px/frame to the right, in [-1, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    frames = []
    for t in range(n_frames):
        cx, cy = size / 2 - 3 + shift * t, size / 2
        frames.append(np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2)) * 2 - 1)
    gray = np.stack(frames)
    return np.repeat(gray[None], 3, axis=0)


def test_static_video_gives_exactly_zero_flow(rng):
    frame = rng.uniform(-1, 1, size=(3, 1, 16, 16))
    video = np.repeat(frame, 4, axis=1)
    flow = estimate_flow(Tensor(video), scale=1).data
    assert flow.shape == (2, 3, 16, 16)
    assert np.all(flow == 0.0)


def test_translation_is_recovered_on_object_support(f64):
    video = blob_video()
    flow = estimate_flow(Tensor(video), scale=1).data
    support = video[0, :-1] > -0.5
    u, v = flow[0][support], flow[1][support]
    assert 0.7 <= u.mean() <= 1.3
    assert np.abs(v).mean() < 0.3


def test_leftward_motion_has_negative_u(f64):
    video = blob_video(shift=-1.0)
    flow = estimate_flow(Tensor(video), scale=1).data
    support = video[0, :-1] > -0.5
    assert flow[0][support].mean() < -0.5


def test_output_shape_with_downsampling():
    video = Tensor(np.zeros((2, 3, 5, 16, 16)))
    assert estimate_flow(video, scale=8).shape == (2, 2, 4, 2, 2)
    assert FlowEstimator(scale=8).output_shape(5, 16, 16) == (2, 4, 2, 2)


@pytest.mark.parametrize("kwargs", [dict(scale=3), dict(iterations=0)])
def test_invalid_arguments(kwargs):
    with pytest.raises(ValueError):
        estimate_flow(Tensor(np.zeros((3, 4, 16, 16))), **kwargs)


def test_single_frame_rejected():
    with pytest.raises(ValueError, match="2 frames"):
        estimate_flow(Tensor(np.zeros((3, 1, 8, 8))))


def test_flow_gradient_reaches_pixels(f64, rng):
    video = Tensor(rng.uniform(-1, 1, size=(1, 3, 3, 8, 8)), requires_grad=True)
    probe = rng.standard_normal((1, 2, 2, 4, 4))
    fn = lambda: (estimate_flow(video, iterations=5, scale=2) * probe).sum()
    assert check_gradients(fn, [video], max_entries=60, rng=rng) <= 1e-3


def test_estimator_is_frozen():
    est = FlowEstimator()
    digest = est.state_digest()
    assert est.parameters() == []
    with pytest.raises(Exception):
        est.iterations = 3
    est(Tensor(np.zeros((1, 3, 2, 16, 16))))
    assert est.state_digest() == digest

import numpy as np
import pytest
from PIL import Image
from sklearn.metrics import mutual_info_score

from avlae.data import (
    HEADINGS,
    SyntheticSpec,
    export_frames,
    export_grid,
    from_uint8,
    ingest_external,
    make_synthetic,
    render_video,
    to_uint8,
)
from avlae.flow import estimate_flow
from avlae.metrics import motion_readout
from avlae.tensor import Tensor


def test_dataset_shapes_and_range():
    ds = make_synthetic(SyntheticSpec(n_videos=48, seed=1))
    assert ds.videos.shape == (48, 3, 8, 32, 32)
    assert ds.videos.dtype == np.float32
    assert ds.videos.min() >= -1 and ds.videos.max() <= 1
    assert ds.appearance.max() < 12 and ds.motion.max() < 16


def test_generation_is_deterministic():
    spec = SyntheticSpec(n_videos=20, seed=4, background="drift")
    a, b = make_synthetic(spec), make_synthetic(spec)
    assert a.videos.tobytes() == b.videos.tobytes()
    assert not np.array_equal(a.videos, make_synthetic(SyntheticSpec(n_videos=20, seed=5)).videos)


def test_object_stays_inside_frame():
    ds = make_synthetic(SyntheticSpec(n_videos=192, seed=2))
    border = np.concatenate([ds.videos[..., 0, :], ds.videos[..., -1, :], ds.videos[..., :, 0],
                             ds.videos[..., :, -1]], axis=-1)
    assert np.all(border == -1.0)


def test_speed_zero_gives_static_frames_and_zero_flow():
    ds = make_synthetic(SyntheticSpec(n_videos=4, speeds=(0.0,), seed=0))
    v = ds.videos[0]
    assert all(np.array_equal(v[:, 0], v[:, t]) for t in range(v.shape[1]))
    assert np.all(estimate_flow(Tensor(v), scale=1).data == 0.0)


def test_east_speed_one_centroid_moves_one_pixel_per_frame():
    spec = SyntheticSpec(n_frames=8)
    assert HEADINGS[0] == "E"
    v = render_video(spec, "circle", spec.palette[0], direction=0, speed=1.0, start=(8.0, 16.0))
    disp = motion_readout(v[None])[0]
    assert abs(disp[0] / 7 - 1.0) < 0.05
    assert abs(disp[1]) < 0.05


def test_labels_are_independent():
    ds = make_synthetic(SyntheticSpec(n_videos=10000, n_frames=2, height=16, width=16, radius=2.0,
                                      speeds=(1.0, 2.0), seed=0))
    assert mutual_info_score(ds.appearance, ds.motion) < 0.01
    assert len(np.unique(ds.labels)) == 12 * 16


def test_geometry_too_small_is_rejected():
    with pytest.raises(ValueError, match="cannot hold"):
        make_synthetic(SyntheticSpec(height=16, width=16, n_frames=8))


def test_unknown_background():
    with pytest.raises(ValueError):
        make_synthetic(SyntheticSpec(n_videos=1, background="plaid"))


def test_pixel_mapping():
    np.testing.assert_array_equal(to_uint8(np.array([-1.0, 0.0, 1.0])), [0, 128, 255])
    np.testing.assert_allclose(from_uint8(np.array([0, 255])), [-1.0, 1.0])


def test_export_frames_are_lossless(tmp_path):
    v = make_synthetic(SyntheticSpec(n_videos=1, seed=3)).videos[0]
    paths = export_frames(v, tmp_path / "clip")
    assert len(paths) == 8
    back = np.stack([np.asarray(Image.open(p)) for p in paths])
    np.testing.assert_array_equal(back, to_uint8(v).transpose(1, 2, 3, 0))
    assert export_grid(v[None], tmp_path / "grid.png").exists()


def test_export_then_ingest_is_near_inverse(tmp_path):
    videos = make_synthetic(SyntheticSpec(n_videos=3, seed=3)).videos
    for i, v in enumerate(videos):
        export_frames(v, tmp_path / f"video_{i}")
    loaded, info = ingest_external(tmp_path, n_frames=8, height=32, width=32)
    assert info["loaded"] == 3 and info["skipped"] == 0
    assert np.abs(loaded - videos).max() <= 1 / 127.5


def test_ingest_resize_crop_skip_and_flip(tmp_path):
    rng = np.random.default_rng(0)
    for name, n in (("long", 5), ("short", 2)):
        folder = tmp_path / name
        folder.mkdir()
        for t in range(n):
            Image.fromarray(rng.integers(0, 256, size=(40, 60, 3), dtype=np.uint8)).save(folder / f"{t:03d}.png")
    videos, info = ingest_external(tmp_path, n_frames=4, height=32, width=32, resize=(48, 32), hflip=True)
    assert videos.shape == (2, 3, 4, 32, 32)
    assert info["skipped"] == 1 and info["skipped_names"] == ["short"]
    np.testing.assert_array_equal(videos[1], videos[0][..., ::-1])
    assert videos.min() >= -1 and videos.max() <= 1


def test_ingest_resize_then_center_crop(tmp_path):
    folder = tmp_path / "v"
    folder.mkdir()
    for t in range(2):
        Image.fromarray(np.full((200, 300, 3), 255, np.uint8)).save(folder / f"{t}.png")
    videos, _ = ingest_external(tmp_path, n_frames=2, height=128, width=128, resize=(170, 128))
    assert videos.shape == (1, 3, 2, 128, 128)
    assert np.all(videos == 1.0)


def test_ingest_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_external(tmp_path / "nope", 4, 32, 32)

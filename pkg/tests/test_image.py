"""Image pipeline: I/O, luma, bicubic kernel oracle, crops, synthetic data."""
import numpy as np
import pytest
from scipy import ndimage

from persr import autodiff as ad
from persr.image import (
    ImageError, ImageRGB, bicubic_resize, degrade, images_to_tensor,
    list_pngs, load_image, random_crop_pair, read_manifest, resize_matrix,
    rgb_to_y601, save_image, score_mean_for_strength, synth_scored_dataset,
    synth_sr_dataset, tensor_to_images,
)


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def cubic_kernel_reference(t):
    """Cubic convolution weight for a = -0.5, written out independently."""
    t = abs(t)
    if t <= 1:
        return (1.5 * t - 2.5) * t * t + 1.0
    if t < 2:
        return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    return 0.0


def mean_abs_laplacian(image):
    y = rgb_to_y601(image)
    lap = ndimage.convolve(y, np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]]), mode="nearest")
    return np.abs(lap).mean()


# ---------------------------------------------------------------- type + I/O

def test_image_clamps_and_validates():
    img = ImageRGB(np.array([[[2.0, -1.0, 0.5]]]))
    np.testing.assert_allclose(img.data, [[[1.0, 0.0, 0.5]]])
    with pytest.raises(ImageError):
        ImageRGB(np.zeros((4, 4)))
    with pytest.raises(ImageError):
        ImageRGB(np.zeros((0, 4, 3)))


def test_png_roundtrip_error_bound(tmp_path, rng):
    img = ImageRGB(rng.uniform(size=(17, 23, 3)))
    save_image(img, tmp_path / "x.png")
    back = load_image(tmp_path / "x.png")
    assert np.abs(back.data - img.data).max() <= 1.0 / 510 + 1e-12


def test_load_image_reports_path(tmp_path):
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"not a png")
    with pytest.raises(ImageError, match="broken.png"):
        load_image(bad)


def test_y601_anchor_values():
    white = ImageRGB(np.ones((1, 1, 3)))
    black = ImageRGB(np.zeros((1, 1, 3)))
    red = ImageRGB(np.array([[[1.0, 0.0, 0.0]]]))
    assert rgb_to_y601(white)[0, 0] == pytest.approx(235.0, abs=1e-9)
    assert rgb_to_y601(black)[0, 0] == pytest.approx(16.0)
    assert rgb_to_y601(red)[0, 0] == pytest.approx(81.481)


# ---------------------------------------------------------------- resampling

def test_resize_matrix_rows_sum_to_one():
    for n_in, n_out in ((10, 20), (20, 10), (96, 24), (7, 13)):
        rows = resize_matrix(n_in, n_out).sum(axis=1)
        np.testing.assert_allclose(rows, 1.0, atol=1e-12)


def test_upscale_matches_direct_kernel_evaluation():
    # independent oracle: evaluate the cubic convolution by hand on a ramp
    signal = np.arange(12.0) ** 1.5 / 40.0
    mat = resize_matrix(12, 24)
    ours = mat @ signal
    for i in (6, 7, 11, 15):  # interior coords, away from the clamped edges
        center = (i + 0.5) / 2.0 - 0.5
        want = sum(cubic_kernel_reference(center - j) * signal[j]
                   for j in range(int(np.floor(center)) - 1, int(np.floor(center)) + 3))
        assert ours[i] == pytest.approx(want, abs=1e-12)


def test_downscale_widens_kernel():
    # at scale 1/2 an alternating signal must average out, not alias
    signal = np.tile([0.0, 1.0], 12)
    down = resize_matrix(24, 12) @ signal
    assert np.abs(down[3:-3] - 0.5).max() < 0.15
    # a 4-tap unwidened kernel centered between samples would keep full swing
    assert np.abs(np.diff(down[3:-3])).max() < 0.2


def test_bicubic_identity_and_dims(rng):
    img = ImageRGB(rng.uniform(size=(9, 13, 3)))
    same = bicubic_resize(img, 1)
    np.testing.assert_array_equal(same.data, img.data)
    up = bicubic_resize(img, 2)
    assert (up.height, up.width) == (18, 26)
    down = bicubic_resize(img, 0.5)
    assert (down.height, down.width) == (4, 6)


def test_bicubic_preserves_constants():
    img = ImageRGB(np.full((10, 10, 3), 0.37))
    for scale in (2, 4, 0.5, 0.25):
        out = bicubic_resize(img, scale)
        np.testing.assert_allclose(out.data, 0.37, atol=1e-12)


def test_bicubic_rejects_collapse():
    img = ImageRGB(np.zeros((4, 4, 3)))
    with pytest.raises(ImageError):
        bicubic_resize(img, 0.1)
    with pytest.raises(ImageError):
        bicubic_resize(img, -1.0)


# ---------------------------------------------------------------- crops

def test_random_crop_pair_aligned_and_consistent(rng):
    hr = ImageRGB(rng.uniform(size=(50, 61, 3)))
    pair = random_crop_pair(hr, 4, 6, rng)
    assert pair.lr.data.shape == (6, 6, 3)
    assert pair.hr.data.shape == (24, 24, 3)
    redone = bicubic_resize(pair.hr, 0.25)
    np.testing.assert_array_equal(pair.lr.data, redone.data)


def test_random_crop_pair_deterministic():
    hr = ImageRGB(np.random.default_rng(3).uniform(size=(40, 40, 3)))
    a = random_crop_pair(hr, 2, 8, np.random.default_rng(12))
    b = random_crop_pair(hr, 2, 8, np.random.default_rng(12))
    np.testing.assert_array_equal(a.hr.data, b.hr.data)


def test_random_crop_pair_rejects_small_images(rng):
    hr = ImageRGB(rng.uniform(size=(30, 30, 3)))
    with pytest.raises(ImageError):
        random_crop_pair(hr, 8, 6, rng)
    with pytest.raises(ImageError):
        random_crop_pair(hr, 3, 4, rng)


# ---------------------------------------------------------------- synthesis

def test_synth_sr_dataset_deterministic():
    a = synth_sr_dataset(5, 3, 48)
    b = synth_sr_dataset(5, 3, 48)
    assert len(a) == 3
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.data, y.data)
    c = synth_sr_dataset(6, 1, 48)
    assert np.abs(c[0].data - a[0].data).max() > 1e-3


def test_synth_sr_dataset_has_high_frequency_content():
    for img in synth_sr_dataset(11, 4, 96):
        smoothed = bicubic_resize(bicubic_resize(img, 0.25), 4)
        assert mean_abs_laplacian(img) > mean_abs_laplacian(smoothed)


def test_score_strength_endpoints():
    assert score_mean_for_strength(0.0) == pytest.approx(10.0)
    assert score_mean_for_strength(1.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        score_mean_for_strength(1.5)


def test_stronger_degradation_never_scores_higher(rng):
    base = synth_sr_dataset(2, 1, 48)[0]
    weak = degrade(base, 0.2, rng)
    strong = degrade(base, 0.8, rng)
    assert score_mean_for_strength(0.8) < score_mean_for_strength(0.2)
    assert mean_abs_laplacian(strong) < mean_abs_laplacian(weak)


def test_synth_scored_dataset_sane():
    data = synth_scored_dataset(4, 6, 48)
    again = synth_scored_dataset(4, 6, 48)
    for a, b in zip(data, again):
        np.testing.assert_array_equal(a.image.data, b.image.data)
        np.testing.assert_array_equal(a.score_dist.p, b.score_dist.p)
    for item in data:
        assert item.score_dist.p.sum() == pytest.approx(1.0, abs=1e-9)
        assert 1.0 <= item.score_dist.mean <= 10.0


# ---------------------------------------------------------------- plumbing

def test_read_manifest(tmp_path):
    (tmp_path / "list.txt").write_text("a.png\n# comment\n  b.png  # trailing\n\n")
    entries = read_manifest(tmp_path / "list.txt")
    assert entries == [tmp_path / "a.png", tmp_path / "b.png"]


def test_list_pngs_sorted(tmp_path, rng):
    for name in ("c.png", "a.png", "b.png"):
        save_image(ImageRGB(rng.uniform(size=(4, 4, 3))), tmp_path / name)
    assert [p.name for p in list_pngs(tmp_path)] == ["a.png", "b.png", "c.png"]


def test_tensor_roundtrip(rng):
    imgs = [ImageRGB(rng.uniform(size=(5, 7, 3))) for _ in range(3)]
    t = images_to_tensor(imgs, dtype=np.float64)
    assert t.shape == (3, 3, 5, 7)
    back = tensor_to_images(t)
    for a, b in zip(imgs, back):
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)
    with pytest.raises(ImageError):
        images_to_tensor([imgs[0], ImageRGB(rng.uniform(size=(4, 4, 3)))])
    assert isinstance(t, ad.Tensor)

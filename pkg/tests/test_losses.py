"""Loss semantics: closed-form values, identities, and the weighted sum."""
import numpy as np
import pytest

from persr import autodiff as ad
from persr.losses import (
    LossWeights, ScoreDistribution, ScoreLossParams,
    adversarial_gen, disc_loss, emd_sq, emd_sq_mean, gaussian_to_bins,
    mean_score, recon_l1, repr_loss, score_loss, total_gen_loss,
)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def brute_force_emd_sq(p, q):
    """Independent oracle: explicit double loop over cumulative bins."""
    total = 0.0
    for i in range(10):
        cp = sum(p[: i + 1])
        cq = sum(q[: i + 1])
        total += (cp - cq) ** 2
    return total


# ------------------------------------------------------------- distributions

def test_score_distribution_validates():
    with pytest.raises(ValueError):
        ScoreDistribution(np.ones(9) / 9)
    with pytest.raises(ValueError):
        ScoreDistribution(np.full(10, 0.2))
    p = np.zeros(10)
    p[0] = 1.0 - 1e-6
    with pytest.raises(ValueError):
        ScoreDistribution(p)
    bad = np.full(10, 0.2)
    bad[0] = -0.8
    with pytest.raises(ValueError):
        ScoreDistribution(bad)


def test_gaussian_to_bins_remaps_and_is_symmetric():
    dist = gaussian_to_bins(4.5, 1.5)
    # source 4.5 on the 0..9 scale lands at 5.5, between bins 5 and 6
    np.testing.assert_allclose(dist.p[4], dist.p[5])
    assert dist.mean == pytest.approx(5.5, abs=1e-9)


def test_gaussian_to_bins_point_mass():
    dist = gaussian_to_bins(3.0, 0.1, mean_range=(1.0, 10.0))
    assert dist.p[2] > 0.99


def test_gaussian_to_bins_validates():
    with pytest.raises(ValueError):
        gaussian_to_bins(4.0, 0.0)
    with pytest.raises(ValueError):
        gaussian_to_bins(4.0, 1.0, mean_range=(0.0, 10.0))
    with pytest.raises(ValueError):
        gaussian_to_bins(11.0, 1.0, mean_range=(1.0, 10.0))


def test_mean_score_values():
    assert mean_score(np.full(10, 0.1)) == pytest.approx(5.5)
    point = np.zeros(10)
    point[6] = 1.0
    assert mean_score(ScoreDistribution(point)) == pytest.approx(7.0)


def test_mean_score_tensor_path_matches(rng):
    logits = ad.Tensor(rng.normal(size=(4, 10)), dtype=np.float64)
    dist = ad.softmax(logits)
    got = mean_score(dist)
    np.testing.assert_allclose(got.data, dist.data @ np.arange(1.0, 11.0), atol=1e-12)


# ---------------------------------------------------------------- recon

def test_recon_l1_values(rng):
    ones = np.ones((2, 3, 4, 4))
    assert float(recon_l1(ones, np.zeros_like(ones))) == pytest.approx(1.0)
    x = rng.normal(size=(2, 3, 5, 5))
    assert float(recon_l1(x, x)) == 0.0
    with pytest.raises(ad.ShapeError):
        recon_l1(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 5, 5)))


# ---------------------------------------------------------------- adversarial

def test_adversarial_gen_values():
    assert float(adversarial_gen(np.array([1.0]))) == pytest.approx(0.0)
    assert float(adversarial_gen(np.array([0.5]))) == pytest.approx(np.log(2.0))
    assert float(adversarial_gen(np.array([np.exp(-1.0)]))) == pytest.approx(1.0)


def test_adversarial_gen_logit_path_is_equivalent(rng):
    z = rng.normal(size=8) * 3
    p = 1.0 / (1.0 + np.exp(-z))
    from_probs = float(adversarial_gen(p))
    from_logits = float(adversarial_gen(logits=z))
    assert from_logits == pytest.approx(from_probs, abs=1e-12)
    with pytest.raises(ValueError):
        adversarial_gen(p, logits=z)
    with pytest.raises(ValueError):
        adversarial_gen()


def test_disc_loss_values():
    perfect = float(disc_loss(np.array([1.0, 1.0]), np.array([0.0] * 6)))
    assert perfect == pytest.approx(0.0, abs=1e-9)
    coin = float(disc_loss(np.array([0.5, 0.5]), np.array([0.5] * 6)))
    assert coin == pytest.approx(2 * np.log(2.0))


def test_disc_loss_averages_each_batch_separately(rng):
    # 2 real vs 6 fake: each term over its own batch size
    zr = rng.normal(size=2)
    zf = rng.normal(size=6)
    got = float(disc_loss(real_logits=zr, fake_logits=zf))
    want = np.logaddexp(0, -zr).mean() + np.logaddexp(0, zf).mean()
    assert got == pytest.approx(want, abs=1e-12)
    split = float(disc_loss(real_logits=zr, fake_logits=[zf[:2], zf[2:4], zf[4:]]))
    assert split == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------- scores

def test_score_loss_values():
    assert float(score_loss(7.0, 10.0)) == pytest.approx(0.0)
    # inside the slack region: gap_sr <= alpha * gap_gt
    assert float(score_loss(5.0, 9.0)) == pytest.approx(0.0)
    assert float(score_loss(9.0, 8.0)) == pytest.approx(1.2)
    vec = float(score_loss(np.array([9.0, 5.0]), np.array([8.0, 9.0])))
    assert vec == pytest.approx(0.6)


def test_score_loss_params_validate():
    with pytest.raises(ValueError):
        ScoreLossParams(s_max=0.0)
    with pytest.raises(ValueError):
        ScoreLossParams(alpha=2.5)
    assert float(score_loss(9.0, 8.0, ScoreLossParams(alpha=1.0))) == pytest.approx(1.0)


def test_repr_loss_values():
    assert float(repr_loss(np.array([3.0, 4.0]), np.zeros(2))) == pytest.approx(25.0)
    batch = float(repr_loss(np.array([[3.0, 4.0], [0.0, 0.0]]), np.zeros((2, 2))))
    assert batch == pytest.approx(12.5)


# ---------------------------------------------------------------- EMD

def test_emd_sq_point_masses():
    a, b, j = np.zeros(10), np.zeros(10), np.zeros(10)
    a[0] = 1.0
    b[1] = 1.0
    j[9] = 1.0
    assert float(emd_sq(a, b)) == pytest.approx(1.0)
    assert float(emd_sq(a, j)) == pytest.approx(9.0)


def test_emd_sq_identity_and_symmetry(rng):
    for _ in range(25):
        p = rng.dirichlet(np.ones(10))
        q = rng.dirichlet(np.ones(10))
        assert float(emd_sq(p, p)) == 0.0
        assert float(emd_sq(p, q)) == pytest.approx(float(emd_sq(q, p)), abs=1e-15)
        assert float(emd_sq(p, q)) == pytest.approx(brute_force_emd_sq(p, q), abs=1e-12)


def test_emd_sq_rejects_invalid():
    with pytest.raises(ValueError):
        emd_sq(np.full(10, 0.2), np.full(10, 0.1))
    with pytest.raises(ValueError):
        emd_sq(np.ones(9), np.full(10, 0.1))


def test_emd_sq_mean_matches_rowwise(rng):
    gt = rng.dirichlet(np.ones(10), size=5)
    pred = rng.dirichlet(np.ones(10), size=5)
    got = float(emd_sq_mean(gt, pred))
    want = np.mean([brute_force_emd_sq(g, p) for g, p in zip(gt, pred)])
    assert got == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------- totals

def test_total_gen_loss_unit_parts():
    parts = [1.0] * 6
    assert float(total_gen_loss(parts, LossWeights())) == pytest.approx(0.37)


def test_total_gen_loss_skips_zero_weight_parts():
    w = LossWeights.recon_adv_mix(0.5, 0.0)
    total = float(total_gen_loss([1.0, 1.0, None, None, None, None], w))
    assert total == pytest.approx(0.6)
    with pytest.raises(ValueError):
        total_gen_loss([1.0, None, None, None, None, None], LossWeights())


def test_loss_weight_presets():
    assert LossWeights.from_preset("eq8") == LossWeights()
    assert LossWeights.from_preset("eq10:ar=0.05:ap=1") == LossWeights()
    ablated = LossWeights.from_preset("eq10:ar=0.5:ap=0")
    assert ablated.w_r == pytest.approx(0.5)
    assert not ablated.uses_predictors
    explicit = LossWeights.from_preset("1,0,0,0,0,0")
    assert explicit.w_r == 1.0
    with pytest.raises(ValueError):
        LossWeights.from_preset("nope")
    with pytest.raises(ValueError):
        LossWeights.from_preset("eq10:zz=1")
    with pytest.raises(ValueError):
        LossWeights(w_r=-0.1)


def test_losses_are_differentiable(rng):
    from gradcheck import assert_grads_ok, check_op

    errs = check_op(
        lambda p: emd_sq(np.full(10, 0.1), ad.softmax(p)),
        [rng.normal(size=10)])
    assert_grads_ok(errs)
    errs = check_op(
        lambda z: disc_loss(real_logits=ad.relu(z) + ad.Tensor(np.full(4, 0.1)), fake_logits=z),
        [rng.normal(size=4)])
    assert_grads_ok(errs)

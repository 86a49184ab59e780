"""Training objectives: reconstruction, adversarial, score, representation.

Every loss returns a scalar :class:`~persr.autodiff.Tensor` so it can join a
weighted sum and be backpropagated; ``float()`` unwraps the value. Plain
arrays and floats are accepted wherever gradients are not needed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor

__all__ = [
    "ScoreDistribution", "ScoreLossParams", "LossWeights",
    "gaussian_to_bins", "mean_score",
    "recon_l1", "adversarial_gen", "disc_loss",
    "score_loss", "repr_loss", "emd_sq", "emd_sq_mean", "total_gen_loss",
    "LOG_FLOOR",
]

BIN_SCORES = np.arange(1.0, 11.0)
LOG_FLOOR = 1e-12


@dataclass
class ScoreDistribution:
    """Probabilities over the ten score bins 1..10."""

    p: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.p, dtype=np.float64).reshape(-1)
        if arr.shape != (10,):
            raise ValueError(f"ScoreDistribution needs 10 bins, got shape {np.shape(self.p)}")
        if np.any(arr < 0):
            raise ValueError("ScoreDistribution: negative probability")
        if abs(arr.sum() - 1.0) > 1e-9:
            raise ValueError(f"ScoreDistribution: probabilities sum to {arr.sum()!r}, not 1")
        self.p = arr

    @property
    def mean(self) -> float:
        return float(self.p @ BIN_SCORES)


@dataclass
class ScoreLossParams:
    """Hinge parameters: ceiling score and the fraction of the reference gap."""

    s_max: float = 10.0
    alpha: float = 0.8

    def __post_init__(self):
        if self.s_max <= 0:
            raise ValueError(f"s_max must be positive, got {self.s_max}")
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must be in (0, 2], got {self.alpha}")


@dataclass(frozen=True)
class LossWeights:
    """Weights for (recon, adversarial, aesthetic score, aesthetic repr,
    subjective score, subjective repr)."""

    w_r: float = 0.05
    w_g: float = 0.1
    w_as: float = 0.01
    w_ar: float = 0.1
    w_ss: float = 0.01
    w_sr: float = 0.1

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {value}")

    def as_dict(self) -> dict[str, float]:
        return {"w_r": self.w_r, "w_g": self.w_g, "w_as": self.w_as,
                "w_ar": self.w_ar, "w_ss": self.w_ss, "w_sr": self.w_sr}

    def as_tuple(self) -> tuple[float, ...]:
        return (self.w_r, self.w_g, self.w_as, self.w_ar, self.w_ss, self.w_sr)

    @property
    def uses_predictors(self) -> bool:
        return any(w > 0 for w in (self.w_as, self.w_ar, self.w_ss, self.w_sr))

    @classmethod
    def recon_adv_mix(cls, alpha_r: float, alpha_p: float) -> "LossWeights":
        """Ablation family: alpha_r on reconstruction, alpha_p gating all four
        predictor-driven terms, adversarial fixed at 0.1."""
        return cls(w_r=alpha_r, w_g=0.1, w_as=0.01 * alpha_p, w_ar=0.1 * alpha_p,
                   w_ss=0.01 * alpha_p, w_sr=0.1 * alpha_p)

    @classmethod
    def from_preset(cls, spec: str) -> "LossWeights":
        """Parse a preset id: 'eq8', 'eq10[:ar=..][:ap=..]', or six comma floats."""
        spec = spec.strip()
        if spec == "eq8":
            return cls()
        if spec == "eq10" or spec.startswith("eq10:"):
            kv = {"ar": 0.05, "ap": 1.0}
            for part in spec.split(":")[1:]:
                if "=" not in part:
                    raise ValueError(f"bad eq10 parameter {part!r} in preset {spec!r}")
                key, _, value = part.partition("=")
                if key not in kv:
                    raise ValueError(f"unknown eq10 parameter {key!r} in preset {spec!r}")
                kv[key] = float(value)
            return cls.recon_adv_mix(kv["ar"], kv["ap"])
        parts = spec.split(",")
        if len(parts) == 6:
            return cls(*[float(p) for p in parts])
        raise ValueError(f"unknown loss preset {spec!r}")


# ---------------------------------------------------------------- helpers

def _as_dist_array(q, name: str) -> np.ndarray:
    """Validate a plain distribution (rows sum to 1, no negatives)."""
    if isinstance(q, ScoreDistribution):
        return q.p
    arr = np.asarray(q, dtype=np.float64)
    if arr.shape[-1] != 10:
        raise ValueError(f"{name}: expected 10 bins on the last axis, got shape {arr.shape}")
    if np.any(arr < -1e-9):
        raise ValueError(f"{name}: negative probability")
    if not np.allclose(arr.sum(axis=-1), 1.0, atol=1e-6):
        raise ValueError(f"{name}: rows do not sum to 1")
    return arr


def gaussian_to_bins(mean: float, std: float, mean_range=(0.0, 9.0)) -> ScoreDistribution:
    """Gaussian density sampled at the bin centers 1..10 and normalized.

    mean_range declares the source scale as (low, low+9); the mean is shifted
    by 1-low onto the 1..10 bin scale (a unit-slope remap), so the default
    (0, 9) shifts by +1 and (1, 10) leaves the mean in place.
    """
    low, high = float(mean_range[0]), float(mean_range[1])
    if abs((high - low) - 9.0) > 1e-12:
        raise ValueError(f"mean_range must span 9 units, got {mean_range}")
    if std <= 0:
        raise ValueError(f"std must be positive, got {std}")
    if not low <= mean <= high:
        raise ValueError(f"mean {mean} outside declared range {mean_range}")
    center = mean + (1.0 - low)
    dens = np.exp(-0.5 * ((BIN_SCORES - center) / std) ** 2)
    total = dens.sum()
    if total <= 0:
        dens = np.zeros(10)
        dens[int(np.clip(round(center), 1, 10)) - 1] = 1.0
        total = 1.0
    return ScoreDistribution(dens / total)


def mean_score(dist):
    """Expected score over bins 1..10.

    Accepts a ScoreDistribution or array (returns float / float array) or a
    (N, 10) Tensor (returns a differentiable (N,) Tensor).
    """
    if isinstance(dist, Tensor):
        bins = np.broadcast_to(BIN_SCORES, dist.shape).astype(dist.dtype)
        return ad.tsum(ad.mul(dist, Tensor(bins)), axis=dist.ndim - 1)
    if isinstance(dist, ScoreDistribution):
        return dist.mean
    arr = _as_dist_array(dist, "mean_score")
    out = arr @ BIN_SCORES
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- losses

def recon_l1(gt, sr) -> Tensor:
    """Mean absolute difference over every pixel and channel."""
    gt, sr = as_tensor(gt), as_tensor(sr)
    if gt.shape != sr.shape:
        raise ad.ShapeError(f"recon_l1: shape mismatch {gt.shape} vs {sr.shape}")
    return ad.mean_abs(ad.sub(gt, sr))


def adversarial_gen(d_out=None, *, logits=None) -> Tensor:
    """Generator's non-saturating loss, mean of -log D.

    Pass logits for the numerically stable softplus(-z) form (used in
    training); probabilities are floored at 1e-12 before the log.
    """
    if (d_out is None) == (logits is None):
        raise ValueError("adversarial_gen: pass exactly one of d_out or logits")
    if logits is not None:
        return ad.tmean(ad.softplus(ad.neg(as_tensor(logits))))
    d = as_tensor(d_out)
    return ad.neg(ad.tmean(ad.log(ad.clip_floor(d, LOG_FLOOR))))


def disc_loss(d_real=None, d_fake=None, *, real_logits=None, fake_logits=None) -> Tensor:
    """Discriminator cross-entropy; each term averages over its own batch.

    fake_logits may be a list of equal-size per-path batches, averaged
    uniformly (equivalent to one flat mean over all fakes).
    """
    if (d_real is None) == (real_logits is None):
        raise ValueError("disc_loss: pass exactly one of d_real or real_logits")
    if (d_fake is None) == (fake_logits is None):
        raise ValueError("disc_loss: pass exactly one of d_fake or fake_logits")
    if real_logits is not None:
        real_term = ad.tmean(ad.softplus(ad.neg(as_tensor(real_logits))))
    else:
        real_term = ad.neg(ad.tmean(ad.log(ad.clip_floor(as_tensor(d_real), LOG_FLOOR))))
    if fake_logits is not None:
        batches = fake_logits if isinstance(fake_logits, (list, tuple)) else [fake_logits]
        sizes = {as_tensor(b).size for b in batches}
        if len(sizes) > 1:
            raise ad.ShapeError(f"disc_loss: fake batches must be equal-sized, got {sorted(sizes)}")
        terms = [ad.tmean(ad.softplus(as_tensor(b))) for b in batches]
        fake_term = ad.scale(_sum_tensors(terms), 1.0 / len(terms))
    else:
        d = as_tensor(d_fake)
        one_minus = ad.sub(Tensor(np.ones(d.shape, dtype=d.dtype)), d)
        fake_term = ad.neg(ad.tmean(ad.log(ad.clip_floor(one_minus, LOG_FLOOR))))
    return ad.add(real_term, fake_term)


def score_loss(s_gt, s_sr, params: ScoreLossParams | None = None) -> Tensor:
    """Hinge on the score shortfall: max(0, (s_max - s_sr) - alpha*(s_max - s_gt)).

    Scalar inputs give the plain hinge; vectors are averaged elementwise.
    """
    params = params or ScoreLossParams()
    s_gt, s_sr = as_tensor(s_gt, dtype=np.float64), as_tensor(s_sr, dtype=np.float64)
    if s_gt.shape != s_sr.shape:
        raise ad.ShapeError(f"score_loss: shape mismatch {s_gt.shape} vs {s_sr.shape}")
    smax = Tensor(np.full(s_sr.shape, params.s_max, dtype=s_sr.dtype))
    gap_sr = ad.sub(smax, s_sr)
    gap_gt = ad.scale(ad.sub(smax, s_gt), params.alpha)
    hinge = ad.relu(ad.sub(gap_sr, gap_gt))
    return hinge if hinge.size == 1 else ad.tmean(hinge)


def repr_loss(r_gt, r_sr) -> Tensor:
    """Squared distance summed over features, then averaged over the batch."""
    r_gt, r_sr = as_tensor(r_gt), as_tensor(r_sr)
    if r_gt.shape != r_sr.shape:
        raise ad.ShapeError(f"repr_loss: shape mismatch {r_gt.shape} vs {r_sr.shape}")
    diff = ad.sub(r_gt, r_sr)
    sq = ad.mul(diff, diff)
    if sq.ndim == 1:
        return ad.tsum(sq)
    return ad.tmean(ad.tsum(sq, axis=1))


def emd_sq(q_gt, q_pred) -> Tensor:
    """Squared earth mover's distance over the 10 cumulative bins.

    Sum over bins of the squared CDF differences, exactly as the training
    objective defines it (no 1/N factor). Differentiable in q_pred when it is
    a Tensor; plain inputs are validated as distributions.
    """
    gt = _as_dist_array(q_gt, "emd_sq gt")
    if isinstance(q_pred, Tensor):
        pred = q_pred
    else:
        pred = Tensor(_as_dist_array(q_pred, "emd_sq pred"))
    if pred.shape != gt.shape:
        raise ad.ShapeError(f"emd_sq: shape mismatch {gt.shape} vs {pred.shape}")
    diff = ad.sub(ad.cumsum_last(Tensor(gt.astype(pred.dtype))), ad.cumsum_last(pred))
    return ad.tsum(ad.mul(diff, diff))


def emd_sq_mean(q_gt: np.ndarray, q_pred) -> Tensor:
    """Mean squared EMD over a batch of (N, 10) distributions."""
    gt = _as_dist_array(q_gt, "emd_sq_mean gt")
    pred = q_pred if isinstance(q_pred, Tensor) else Tensor(np.asarray(q_pred))
    if pred.shape != gt.shape:
        raise ad.ShapeError(f"emd_sq_mean: shape mismatch {gt.shape} vs {pred.shape}")
    diff = ad.sub(ad.cumsum_last(Tensor(gt.astype(pred.dtype))), ad.cumsum_last(pred))
    return ad.tmean(ad.tsum(ad.mul(diff, diff), axis=1))


def _sum_tensors(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return acc


def total_gen_loss(parts, weights: LossWeights) -> Tensor:
    """Weighted sum of the six generator losses.

    parts: sequence (l_r, l_g, l_as, l_ar, l_ss, l_sr); a part may be None
    only when its weight is 0 (zero-weight parts are skipped entirely, never
    evaluated here).
    """
    parts = tuple(parts)
    if len(parts) != 6:
        raise ValueError(f"total_gen_loss: expected 6 parts, got {len(parts)}")
    terms = []
    for name, part, w in zip(("l_r", "l_g", "l_as", "l_ar", "l_ss", "l_sr"),
                             parts, weights.as_tuple()):
        if w == 0:
            continue
        if part is None:
            raise ValueError(f"total_gen_loss: {name} has weight {w} but no value")
        terms.append(ad.scale(as_tensor(part, dtype=np.float64), w))
    if not terms:
        return Tensor(np.asarray(0.0))
    return _sum_tensors(terms)

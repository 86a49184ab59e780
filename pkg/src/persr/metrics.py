"""Full-reference and no-reference quality metrics plus the report writer.

PSNR and SSIM run on the studio-swing luma plane after a 4-pixel border
crop. The no-reference score fits generalized Gaussian statistics of locally
normalized luma patches against a pristine model (same crop). The combined
perceptual index averages the no-reference score with the inverted
predictor score.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, special

from .image import ImageRGB, ImageError, list_pngs, load_image, resize_plane, rgb_to_y601

__all__ = [
    "MetricError", "psnr_y", "ssim_y", "perceptual_index",
    "PristineModel", "fit_pristine", "niqe", "save_pristine", "load_pristine",
    "QualityRow", "QualityReport", "quality_report", "read_sr_scores",
]

BORDER_CROP = 4


class MetricError(ValueError):
    """Metric preconditions violated."""


def _cropped_y(image: ImageRGB, min_size: int, metric: str) -> np.ndarray:
    y = rgb_to_y601(image)
    h, w = y.shape
    if h - 2 * BORDER_CROP < min_size or w - 2 * BORDER_CROP < min_size:
        raise MetricError(
            f"{metric}: image {h}x{w} smaller than {min_size}px after the "
            f"{BORDER_CROP}px border crop")
    return y[BORDER_CROP:h - BORDER_CROP, BORDER_CROP:w - BORDER_CROP]


# ---------------------------------------------------------------- PSNR / SSIM

def psnr_y(gt: ImageRGB, sr: ImageRGB) -> float:
    """Peak signal-to-noise ratio in dB on cropped luma; +inf for identical."""
    if gt.data.shape != sr.data.shape:
        raise MetricError(f"psnr_y: shape mismatch {gt.data.shape} vs {sr.data.shape}")
    a = _cropped_y(gt, 9, "psnr_y")
    b = _cropped_y(sr, 9, "psnr_y")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _ssim_window() -> np.ndarray:
    half = 5
    g = np.exp(-0.5 * (np.arange(-half, half + 1) / 1.5) ** 2)
    win = np.outer(g, g)
    return win / win.sum()


_SSIM_WIN = _ssim_window()


def _valid_filter(plane: np.ndarray) -> np.ndarray:
    out = ndimage.correlate(plane, _SSIM_WIN, mode="constant")
    return out[5:-5, 5:-5]


def ssim_y(gt: ImageRGB, sr: ImageRGB) -> float:
    """Mean structural similarity on cropped luma.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 255,
    averaged over the valid filter region.
    """
    if gt.data.shape != sr.data.shape:
        raise MetricError(f"ssim_y: shape mismatch {gt.data.shape} vs {sr.data.shape}")
    a = _cropped_y(gt, 11, "ssim_y")
    b = _cropped_y(sr, 11, "ssim_y")
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    mu_a = _valid_filter(a)
    mu_b = _valid_filter(b)
    var_a = _valid_filter(a * a) - mu_a * mu_a
    var_b = _valid_filter(b * b) - mu_b * mu_b
    cov = _valid_filter(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------- NIQE

_MSCN_HALF = 3
_MSCN_SIGMA = 7.0 / 6.0


def _mscn_kernel() -> np.ndarray:
    g = np.exp(-0.5 * (np.arange(-_MSCN_HALF, _MSCN_HALF + 1) / _MSCN_SIGMA) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


_MSCN_WIN = _mscn_kernel()

# moment-ratio lookup for the generalized Gaussian shape parameter
_GAM_GRID = np.arange(0.2, 10.0 + 1e-9, 0.001)
_RHO_GRID = (special.gamma(2.0 / _GAM_GRID) ** 2
             / (special.gamma(1.0 / _GAM_GRID) * special.gamma(3.0 / _GAM_GRID)))


def _mscn(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean-subtracted contrast-normalized field and the local deviation map.

    y is a 0..255 luma plane; the +1 stabilizer keeps flat regions finite.
    """
    mu = ndimage.correlate(y, _MSCN_WIN, mode="nearest")
    sigma = np.sqrt(np.abs(ndimage.correlate(y * y, _MSCN_WIN, mode="nearest") - mu * mu))
    return (y - mu) / (sigma + 1.0), sigma


def _fit_ggd(x: np.ndarray) -> tuple[float, float]:
    """Shape and variance of a zero-mean generalized Gaussian, by moment
    matching against the precomputed ratio grid."""
    e2 = float(np.mean(x * x))
    e1 = float(np.mean(np.abs(x)))
    if e2 < 1e-12 or e1 < 1e-12:
        return float(_GAM_GRID[-1]), e2
    rho = e1 * e1 / e2
    alpha = float(_GAM_GRID[np.argmin(np.abs(_RHO_GRID - rho))])
    return alpha, e2


def _fit_aggd(x: np.ndarray) -> tuple[float, float, float, float]:
    """Asymmetric generalized Gaussian fit: (shape, mean, left var, right var)."""
    left = x[x < 0]
    right = x[x > 0]
    sig_l = math.sqrt(float(np.mean(left * left))) if left.size else 1e-6
    sig_r = math.sqrt(float(np.mean(right * right))) if right.size else 1e-6
    sig_l = max(sig_l, 1e-6)
    sig_r = max(sig_r, 1e-6)
    gam = sig_l / sig_r
    e2 = float(np.mean(x * x))
    e1 = float(np.mean(np.abs(x)))
    if e2 < 1e-12:
        return float(_GAM_GRID[-1]), 0.0, sig_l ** 2, sig_r ** 2
    rhat = e1 * e1 / e2
    rnorm = rhat * (gam ** 3 + 1.0) * (gam + 1.0) / (gam ** 2 + 1.0) ** 2
    alpha = float(_GAM_GRID[np.argmin(np.abs(_RHO_GRID - rnorm))])
    eta = (sig_r - sig_l) * (special.gamma(2.0 / alpha)
                             / math.sqrt(special.gamma(1.0 / alpha) * special.gamma(3.0 / alpha)))
    return alpha, float(eta), sig_l ** 2, sig_r ** 2


def _patch_features(m: np.ndarray) -> np.ndarray:
    """18 statistics of one normalized patch: GGD of the field plus AGGD of
    the four orientation products."""
    feats = list(_fit_ggd(m))
    products = (
        m[:, :-1] * m[:, 1:],
        m[:-1, :] * m[1:, :],
        m[:-1, :-1] * m[1:, 1:],
        m[:-1, 1:] * m[1:, :-1],
    )
    for prod in products:
        feats.extend(_fit_aggd(prod))
    return np.array(feats)


def _orientation_paired(feats: np.ndarray) -> np.ndarray:
    """Each patch contributes its features twice, once with the two diagonal
    blocks swapped. A horizontal flip maps one copy onto the other, so
    statistics built from the paired set are flip-invariant."""
    swapped = feats.copy()
    for base in (0, 18):
        d1 = slice(base + 10, base + 14)
        d2 = slice(base + 14, base + 18)
        swapped[:, d1], swapped[:, d2] = feats[:, d2], feats[:, d1]
    return np.concatenate([feats, swapped], axis=0)


@dataclass
class PristineModel:
    """Gaussian model (mean, covariance) of pristine patch statistics."""

    nu: np.ndarray
    sigma: np.ndarray
    patch_size: int = 96
    sharpness_threshold: float = 0.75

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != (self.nu.size, self.nu.size):
            raise MetricError(f"PristineModel: covariance {sigma.shape} does not match "
                              f"mean of length {self.nu.size}")
        self.sigma = 0.5 * (sigma + sigma.T)  # keep it symmetric


def _image_feature_sets(y: np.ndarray, patch_size: int):
    """Per-tile 36-d features at two scales plus scale-1 sharpness."""
    half = resize_plane(y, 0.5)
    ps2 = patch_size // 2
    tiles_i = min(y.shape[0] // patch_size, half.shape[0] // ps2)
    tiles_j = min(y.shape[1] // patch_size, half.shape[1] // ps2)
    if tiles_i < 1 or tiles_j < 1:
        raise MetricError(
            f"niqe: image {y.shape} too small for a {patch_size}px patch at both scales")
    mscn1, dev1 = _mscn(y)
    mscn2, _ = _mscn(half)
    feats = []
    sharps = []
    for bi in range(tiles_i):
        for bj in range(tiles_j):
            p1 = mscn1[bi * patch_size:(bi + 1) * patch_size,
                       bj * patch_size:(bj + 1) * patch_size]
            p2 = mscn2[bi * ps2:(bi + 1) * ps2, bj * ps2:(bj + 1) * ps2]
            feats.append(np.concatenate([_patch_features(p1), _patch_features(p2)]))
            d = dev1[bi * patch_size:(bi + 1) * patch_size,
                     bj * patch_size:(bj + 1) * patch_size]
            sharps.append(float(d.mean()))
    return np.array(feats), np.array(sharps)


def _select_patches(feats: np.ndarray, sharps: np.ndarray, threshold: float):
    """Keep patches above threshold * max sharpness; falls back to all."""
    peak = sharps.max()
    keep = sharps > threshold * peak
    if not keep.any():
        return feats, True
    return feats[keep], False


def fit_pristine(corpus, patch_size: int = 96, sharpness_threshold: float = 0.75) -> PristineModel:
    """Fit the pristine statistics model from at least 10 clean images.

    Selected-patch features are pooled across the corpus; the covariance gets
    a 1e-6 ridge so it stays invertible.
    """
    corpus = list(corpus)
    if len(corpus) < 10:
        raise MetricError(f"fit_pristine: need at least 10 images, got {len(corpus)}")
    pooled = []
    for image in corpus:
        y = _cropped_y(image, patch_size, "fit_pristine")
        feats, sharps = _image_feature_sets(y, patch_size)
        kept, _ = _select_patches(feats, sharps, sharpness_threshold)
        pooled.append(_orientation_paired(kept))
    stacked = np.concatenate(pooled, axis=0)
    nu = stacked.mean(axis=0)
    sigma = np.cov(stacked, rowvar=False, ddof=1) if stacked.shape[0] > 1 else np.zeros((36, 36))
    sigma = sigma + 1e-6 * np.eye(36)
    return PristineModel(nu=nu, sigma=sigma, patch_size=patch_size,
                         sharpness_threshold=sharpness_threshold)


def _niqe_with_info(image: ImageRGB, model: PristineModel) -> tuple[float, bool]:
    y = _cropped_y(image, model.patch_size, "niqe")
    feats, sharps = _image_feature_sets(y, model.patch_size)
    kept, fallback = _select_patches(feats, sharps, model.sharpness_threshold)
    kept = _orientation_paired(kept)
    nu2 = kept.mean(axis=0)
    sigma2 = np.cov(kept, rowvar=False, ddof=1) if kept.shape[0] > 1 else np.zeros((36, 36))
    pooled = (model.sigma + sigma2) / 2.0
    diff = model.nu - nu2
    try:
        sol = np.linalg.solve(pooled, diff)
    except np.linalg.LinAlgError:
        sol = np.linalg.pinv(pooled) @ diff
    dist_sq = float(diff @ sol)
    return math.sqrt(max(dist_sq, 0.0)), fallback


def niqe(image: ImageRGB, model: PristineModel) -> float:
    """Statistical distance of an image from the pristine model (lower is
    closer to pristine). Scores are comparable only under the same model."""
    return _niqe_with_info(image, model)[0]


def save_pristine(model: PristineModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, nu=model.nu, sigma=model.sigma,
             patch_size=model.patch_size, sharpness_threshold=model.sharpness_threshold)


def load_pristine(path) -> PristineModel:
    path = Path(path)
    try:
        with np.load(path) as data:
            return PristineModel(nu=data["nu"], sigma=data["sigma"],
                                 patch_size=int(data["patch_size"]),
                                 sharpness_threshold=float(data["sharpness_threshold"]))
    except (OSError, KeyError, ValueError) as err:
        raise MetricError(f"cannot load pristine model {path}: {err}") from err


# ---------------------------------------------------------------- PI + report

def perceptual_index(niqe_value: float, sr_score: float) -> float:
    """Average of the inverted predictor score (10 - s) and the no-reference
    statistic: lower is better."""
    if not math.isfinite(niqe_value) or niqe_value < 0:
        raise MetricError(f"perceptual_index: bad niqe value {niqe_value}")
    if not math.isfinite(sr_score):
        raise MetricError(f"perceptual_index: bad score {sr_score}")
    return 0.5 * ((10.0 - sr_score) + niqe_value)


@dataclass
class QualityRow:
    name: str
    psnr_db: float | None = None
    ssim: float | None = None
    niqe: float | None = None
    sr_score: float | None = None
    pi: float | None = None


@dataclass
class QualityReport:
    rows: list[QualityRow]
    means: QualityRow
    warnings: list[str] = field(default_factory=list)

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["name,psnr_db,ssim,niqe,sr_score,pi"]
        for row in self.rows + [self.means]:
            cells = [row.name]
            for value in (row.psnr_db, row.ssim, row.niqe, row.sr_score, row.pi):
                if value is None:
                    cells.append("")
                elif math.isinf(value):
                    cells.append("inf")
                else:
                    cells.append(f"{value:.6f}")
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n")


def read_sr_scores(path) -> dict[str, float]:
    """Side-channel scores: 'name,score' per line, header tolerated."""
    scores = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, _, value = line.partition(",")
        try:
            scores[name.strip()] = float(value)
        except ValueError:
            continue  # header or junk line
    return scores


def _column_mean(rows: list[QualityRow], attr: str) -> float | None:
    values = [getattr(r, attr) for r in rows if getattr(r, attr) is not None]
    if not values:
        return None
    return float(np.mean(values))


def quality_report(gt_dir, sr_dir, pristine: PristineModel | None = None,
                   sr_scores: dict[str, float] | None = None) -> QualityReport:
    """Evaluate matched PNG pairs from two directories.

    Unmatched names are warned about and skipped, never fatal. The combined
    index appears exactly where both the no-reference score and a side-channel
    predictor score are present.
    """
    gt_names = {p.name: p for p in list_pngs(gt_dir)}
    sr_names = {p.name: p for p in list_pngs(sr_dir)}
    warnings = []
    for name in sorted(set(gt_names) - set(sr_names)):
        warnings.append(f"no SR image for {name}")
    for name in sorted(set(sr_names) - set(gt_names)):
        warnings.append(f"no ground truth for {name}")
    rows = []
    for name in sorted(set(gt_names) & set(sr_names)):
        gt = load_image(gt_names[name])
        sr = load_image(sr_names[name])
        row = QualityRow(name=name)
        if gt.data.shape == sr.data.shape:
            row.psnr_db = psnr_y(gt, sr)
            row.ssim = ssim_y(gt, sr)
        else:
            warnings.append(f"size mismatch for {name}: "
                            f"{gt.data.shape[:2]} vs {sr.data.shape[:2]}")
        if pristine is not None:
            value, fallback = _niqe_with_info(sr, pristine)
            row.niqe = value
            if fallback:
                warnings.append(f"niqe patch selection empty for {name}; used all patches")
        if sr_scores and name in sr_scores:
            row.sr_score = sr_scores[name]
        if row.niqe is not None and row.sr_score is not None:
            row.pi = perceptual_index(row.niqe, row.sr_score)
        rows.append(row)
    means = QualityRow(
        name="__mean__",
        psnr_db=_column_mean(rows, "psnr_db"),
        ssim=_column_mean(rows, "ssim"),
        niqe=_column_mean(rows, "niqe"),
        sr_score=_column_mean(rows, "sr_score"),
        pi=_column_mean(rows, "pi"),
    )
    return QualityReport(rows=rows, means=means, warnings=warnings)

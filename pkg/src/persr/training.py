"""The three training phases, the optimizer, schedules, and checkpoints.

Phases: L1 pretraining of the multi-scale upscaler, two-stage score-predictor
fitting, and the adversarial perceptual phase (discriminator step first, then
the generator against the weighted six-part loss). Every phase is driven by
named RNG streams so runs are bit-reproducible and resumable.
"""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats as scipy_stats
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Tensor, backward, no_grad
from .image import images_to_tensor, random_crop_pair
from .losses import (
    LossWeights,
    ScoreLossParams,
    adversarial_gen,
    disc_loss,
    emd_sq_mean,
    mean_score,
    recon_l1,
    repr_loss,
    score_loss,
    total_gen_loss,
)
from .models import SCALES, multipass_x4

__all__ = [
    "TrainingError", "RngStreams", "AdamState", "adam_step", "Schedule",
    "Checkpoint", "save_checkpoint", "load_checkpoint", "load_params_into",
    "adam_from_checkpoint",
    "PretrainConfig", "PretrainResult", "pretrain_eusr",
    "PredictorPhaseConfig", "PredictorResult", "train_predictor",
    "PerceptualConfig", "PerceptualResult", "train_perceptual",
    "AblationCell", "ablation_grid", "ablate",
]

CHECKPOINT_MAGIC = "PERSRCKPT 1"

PRETRAIN_LOG_HEADER = "step,scale,loss,lr"
PREDICTOR_LOG_HEADER = "stage,epoch,batch,loss"
PERCEPTUAL_LOG_HEADER = "step,l_r,l_g,l_as,l_ar,l_ss,l_sr,total,d_loss,lr"


class TrainingError(RuntimeError):
    """Phase preconditions or checkpoint integrity violated."""


class RngStreams:
    """Named deterministic random streams derived from one seed.

    Each consumer (crop sampling, scale draws, shuffling, init) gets its own
    stream so that changing how one consumer draws never shifts the others.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gens: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        if name not in self._gens:
            seq = np.random.SeedSequence([self.seed, zlib.crc32(name.encode())])
            self._gens[name] = np.random.Generator(np.random.PCG64(seq))
        return self._gens[name]

    def state_dict(self) -> dict:
        return {"seed": self.seed,
                "streams": {n: g.bit_generator.state for n, g in self._gens.items()}}

    @classmethod
    def from_state(cls, state: dict) -> "RngStreams":
        streams = cls(state["seed"])
        for name, bg_state in state["streams"].items():
            streams.stream(name).bit_generator.state = bg_state
        return streams


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    """Per-parameter moment accumulators plus one shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update applied in place to every given parameter."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise TrainingError(f"adam_step: no gradient for {missing[0]} "
                            f"({len(missing)} of {len(params)} missing)")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data)
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def _clear_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- schedule

@dataclass(frozen=True)
class Schedule:
    """Step-halving learning rate, desk-scalable by an integer divisor.

    ``scale_factor`` divides both the step budget and the halving interval,
    so the lr trajectory shape is preserved at reduced length. A None
    interval means constant lr.
    """

    base_lr: float
    total_steps: int
    halving_interval: int | None = None
    scale_factor: int = 1

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.halving_interval is not None and self.halving_interval < 1:
            raise ValueError(f"halving_interval must be >= 1, got {self.halving_interval}")
        if self.scale_factor < 1:
            raise ValueError(f"scale_factor must be >= 1, got {self.scale_factor}")

    @property
    def steps(self) -> int:
        return max(1, self.total_steps // self.scale_factor)

    @property
    def interval(self) -> int | None:
        if self.halving_interval is None:
            return None
        return max(1, self.halving_interval // self.scale_factor)

    def lr(self, step: int) -> float:
        if step < 0:
            raise ValueError(f"step must be >= 0, got {step}")
        if self.interval is None:
            return self.base_lr
        return self.base_lr * 0.5 ** (step // self.interval)


# ---------------------------------------------------------------- checkpoint

@dataclass
class Checkpoint:
    kind: str
    step: int
    digest: str
    tensors: dict[str, np.ndarray]
    adam_meta: dict[str, dict]
    rng_state: dict | None

    def group(self, name: str) -> dict[str, np.ndarray]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.tensors.items()
                if k.startswith(prefix)}


def _payload_array(value) -> np.ndarray:
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return arr.reshape(1) if arr.ndim == 0 else arr


def save_checkpoint(path, *, kind: str, step: int, groups: dict[str, dict],
                    adam: dict[str, AdamState] | None = None,
                    streams: RngStreams | None = None, digest: str = "") -> None:
    """One self-contained file: text header + manifest, then raw float32.

    groups maps a prefix (gen, disc, pred) to that model's named parameters;
    optimizer moments ride along under a reserved prefix so resume is exact.
    """
    adam = adam or {}
    entries: list[tuple[str, np.ndarray]] = []
    for gname, params in groups.items():
        for pname, p in params.items():
            entries.append((f"{gname}.{pname}", _payload_array(p)))
    adam_meta = {}
    for gname, st in adam.items():
        adam_meta[gname] = {"t": st.t, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps}
        for moment in ("m", "v"):
            for pname, arr in getattr(st, moment).items():
                entries.append((f"__adam__.{gname}.{moment}.{pname}", _payload_array(arr)))
    meta = {"kind": kind, "step": int(step), "digest": digest, "adam": adam_meta,
            "rng": streams.state_dict() if streams is not None else None}
    lines = [CHECKPOINT_MAGIC, json.dumps(meta, sort_keys=True, default=int)]
    offset = 0
    for name, arr in entries:
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"{name} f4 {shape} {offset} {arr.nbytes}")
        offset += arr.nbytes
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\nDATA\n").encode())
        for _, arr in entries:
            fh.write(arr.tobytes())


def load_checkpoint(path, *, expect_kind: str | None = None,
                    expect_digest: str | None = None) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise TrainingError(f"cannot read checkpoint {path}: {err}") from err
    marker = b"\nDATA\n"
    pos = raw.find(marker)
    if pos < 0:
        raise TrainingError(f"{path}: not a checkpoint (no data marker)")
    head = raw[:pos].decode("utf-8", errors="replace").split("\n")
    payload = raw[pos + len(marker):]
    if head[0] != CHECKPOINT_MAGIC:
        raise TrainingError(f"{path}: unsupported checkpoint header {head[0]!r}")
    try:
        meta = json.loads(head[1])
        kind, step, digest = meta["kind"], int(meta["step"]), meta["digest"]
        adam_meta, rng_state = meta["adam"], meta["rng"]
    except (IndexError, KeyError, ValueError, TypeError) as err:
        raise TrainingError(f"{path}: corrupt checkpoint metadata: {err}") from err
    tensors: dict[str, np.ndarray] = {}
    for line in head[2:]:
        parts = line.split(" ")
        if len(parts) != 5 or parts[1] != "f4":
            raise TrainingError(f"{path}: corrupt manifest line {line!r}")
        name, _, shape_s, off_s, nbytes_s = parts
        try:
            shape = tuple(int(d) for d in shape_s.split(","))
            off, nbytes = int(off_s), int(nbytes_s)
        except ValueError as err:
            raise TrainingError(f"{path}: corrupt manifest line {line!r}") from err
        if off < 0 or off + nbytes > len(payload) or nbytes != 4 * math.prod(shape):
            raise TrainingError(f"{path}: truncated or inconsistent payload for {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4", count=nbytes // 4,
                                      offset=off).reshape(shape).copy()
    if expect_kind is not None and kind != expect_kind:
        raise TrainingError(f"{path}: expected a {expect_kind} checkpoint, found {kind}")
    if expect_digest is not None and digest != expect_digest:
        raise TrainingError(
            f"{path}: config digest mismatch (checkpoint {digest[:12]}..., "
            f"current {expect_digest[:12]}...)")
    return Checkpoint(kind=kind, step=step, digest=digest, tensors=tensors,
                      adam_meta=adam_meta, rng_state=rng_state)


def load_params_into(model_params: dict[str, Tensor], ckpt: Checkpoint, group: str) -> None:
    stored = ckpt.group(group)
    for name, p in model_params.items():
        if name not in stored:
            raise TrainingError(f"checkpoint missing tensor {group}.{name}")
        arr = stored[name]
        if arr.shape != p.data.shape:
            raise TrainingError(f"checkpoint tensor {group}.{name} has shape {arr.shape}, "
                                f"model expects {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
        p.grad = None


def adam_from_checkpoint(ckpt: Checkpoint, group: str) -> AdamState:
    meta = ckpt.adam_meta.get(group)
    if meta is None:
        raise TrainingError(f"checkpoint has no optimizer state for group {group}")
    state = AdamState(beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"],
                      t=int(meta["t"]))
    for moment, store in (("m", state.m), ("v", state.v)):
        prefix = f"__adam__.{group}.{moment}."
        for name, arr in ckpt.tensors.items():
            if name.startswith(prefix):
                store[name[len(prefix):]] = arr.copy()
    return state


# ---------------------------------------------------------------- pretraining

@dataclass
class PretrainConfig:
    """Reference-scale values; pass scale_factor to shrink the run."""

    steps: int = 1_000_000
    batch_size: int = 16
    lr_patch: int = 48
    base_lr: float = 1e-4
    halving_interval: int | None = 200_000
    scale_factor: int = 1

    def schedule(self) -> Schedule:
        return Schedule(self.base_lr, self.steps, self.halving_interval, self.scale_factor)


@dataclass
class PretrainResult:
    log_rows: list[str]
    final_loss: float
    steps_run: int


def pretrain_eusr(model, images, config: PretrainConfig, streams: RngStreams, *,
                  adam: AdamState | None = None, start_step: int = 0) -> PretrainResult:
    """L1 training, one randomly drawn upscaling path per step.

    Only the parameters on the drawn path receive gradients, so the update
    touches exactly those; log rows are ``step,scale,loss,lr``.
    """
    if not images:
        raise TrainingError("pretrain: empty dataset")
    schedule = config.schedule()
    adam = adam if adam is not None else AdamState()
    params = model.named_parameters()
    scale_rng = streams.stream("scale")
    crop_rng = streams.stream("crop")
    rows = []
    final_loss = math.nan
    for step in range(start_step, schedule.steps):
        lr = schedule.lr(step)
        scale = SCALES[int(scale_rng.integers(len(SCALES)))]
        lr_patches, hr_patches = [], []
        for _ in range(config.batch_size):
            idx = int(crop_rng.integers(len(images)))
            pair = random_crop_pair(images[idx], scale, config.lr_patch, crop_rng)
            lr_patches.append(pair.lr)
            hr_patches.append(pair.hr)
        sr = model.forward(images_to_tensor(lr_patches), scale)
        loss = recon_l1(images_to_tensor(hr_patches), sr)
        final_loss = float(loss)
        backward(loss)
        touched = {name: p for name, p in params.items() if p.grad is not None}
        adam_step(touched, adam, lr)
        _clear_grads(params.values())
        rows.append(f"{step},{scale},{final_loss:.6e},{lr:.6e}")
    return PretrainResult(log_rows=rows, final_loss=final_loss,
                          steps_run=max(0, schedule.steps - start_step))


# ---------------------------------------------------------------- predictors

@dataclass
class PredictorPhaseConfig:
    """Two-stage schedule: head-only warmup, then full fine-tune."""

    kind: str
    stage1_epochs: int
    stage2_epochs: int
    stage1_batch: int = 128
    stage2_batch: int = 32
    stage1_lr: float = 1e-3
    stage2_lr: float = 1e-5
    scale_factor: int = 1

    KINDS = ("aesthetic", "subjective")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"kind must be one of {self.KINDS}, got {self.kind!r}")

    @classmethod
    def for_kind(cls, kind: str, scale_factor: int = 1) -> "PredictorPhaseConfig":
        epochs = {"aesthetic": 5, "subjective": 100}.get(kind)
        if epochs is None:
            raise ValueError(f"kind must be one of {cls.KINDS}, got {kind!r}")
        return cls(kind=kind, stage1_epochs=epochs, stage2_epochs=epochs,
                   scale_factor=scale_factor)

    def epochs(self, stage: int) -> int:
        base = self.stage1_epochs if stage == 1 else self.stage2_epochs
        return max(1, base // self.scale_factor)


@dataclass
class PredictorResult:
    log_rows: list[str]
    untrained_val_emd: float
    val_emd: float
    srocc: float


def _predictor_val(model, x_val: np.ndarray, q_val: np.ndarray, batch: int = 64):
    preds = []
    with no_grad():
        for i in range(0, x_val.shape[0], batch):
            dist, _ = model.forward(Tensor(x_val[i:i + batch]))
            preds.append(dist.data)
    pred = np.concatenate(preds, axis=0)
    emd = float(emd_sq_mean(q_val, Tensor(pred)))
    return emd, mean_score(pred.astype(np.float64))


def train_predictor(model, train_set, val_set, config: PredictorPhaseConfig,
                    streams: RngStreams) -> PredictorResult:
    """Fit a score predictor on (image, score distribution) pairs.

    Stage 1 updates only the dense head (backbone bit-unchanged); stage 2
    fine-tunes everything. Loss is the mean squared EMD; validation reports
    it plus the rank correlation of predicted vs labeled mean scores.
    """
    if not train_set or not val_set:
        raise TrainingError("predictor: empty train or validation split")
    x_train = images_to_tensor([s.image for s in train_set]).data
    q_train = np.stack([s.score_dist.p for s in train_set])
    x_val = images_to_tensor([s.image for s in val_set]).data
    q_val = np.stack([s.score_dist.p for s in val_set])
    shuffle_rng = streams.stream("shuffle")
    all_params = model.named_parameters()
    untrained_emd, _ = _predictor_val(model, x_val, q_val)
    rows = []
    for stage in (1, 2):
        updated = model.head_parameters() if stage == 1 else all_params
        optimizer = AdamState(eps=1e-7)
        lr = config.stage1_lr if stage == 1 else config.stage2_lr
        batch = config.stage1_batch if stage == 1 else config.stage2_batch
        for epoch in range(config.epochs(stage)):
            order = shuffle_rng.permutation(len(train_set))
            for i, start in enumerate(range(0, len(order), batch)):
                sel = order[start:start + batch]
                dist, _ = model.forward(Tensor(x_train[sel]))
                loss = emd_sq_mean(q_train[sel], dist)
                loss_val = float(loss)
                backward(loss)
                adam_step(updated, optimizer, lr)
                _clear_grads(all_params.values())
                rows.append(f"{stage},{epoch},{i},{loss_val:.6e}")
    val_emd, pred_means = _predictor_val(model, x_val, q_val)
    label_means = np.array([s.score_dist.mean for s in val_set])
    srocc = float(scipy_stats.spearmanr(pred_means, label_means).statistic)
    return PredictorResult(log_rows=rows, untrained_val_emd=untrained_emd,
                           val_emd=val_emd, srocc=srocc)


# ---------------------------------------------------------------- perceptual

@dataclass
class PerceptualConfig:
    """Reference scale: 4e5 steps, lr 1e-5 / 2e-5, 48px LR patches."""

    steps: int = 400_000
    scale_factor: int = 1
    lr_patch: int = 48
    gen_lr: float = 1e-5
    disc_lr: float = 2e-5
    multipass: bool = True
    score_params: ScoreLossParams = field(default_factory=ScoreLossParams)
    # hinge margin for the subjective predictor, if it differs from score_params
    subjective_score_params: ScoreLossParams | None = None

    @property
    def effective_steps(self) -> int:
        return max(1, self.steps // self.scale_factor)

    @property
    def subjective_params(self) -> ScoreLossParams:
        return self.subjective_score_params or self.score_params


@dataclass
class PerceptualResult:
    log_rows: list[str]
    stats: dict[str, float]


def _mean_tensors(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return ad.scale(acc, 1.0 / len(terms))


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6e}"


def train_perceptual(gen, disc, aesthetic, subjective, images, weights: LossWeights,
                     config: PerceptualConfig, streams: RngStreams, *,
                     gen_adam: AdamState | None = None,
                     disc_adam: AdamState | None = None,
                     start_step: int = 0) -> PerceptualResult:
    """Adversarial phase: per step, 2 HR/LR pairs, the multipass outputs as
    fakes (6 with multipass, 2 without), discriminator update strictly first,
    then one generator update on the path-averaged six-part loss.

    Predictors must arrive frozen; zero-weight parts are never evaluated, so
    weights with all predictor terms at 0 never touch the predictors.
    """
    if not images:
        raise TrainingError("perceptual: empty dataset")
    if all(w == 0 for w in weights.as_tuple()):
        raise TrainingError("perceptual: all loss weights are zero")
    if weights.uses_predictors:
        for name, pred in (("aesthetic", aesthetic), ("subjective", subjective)):
            if pred is None:
                raise TrainingError(f"perceptual: {name} predictor required by loss weights")
            if not pred.frozen:
                raise TrainingError(f"perceptual: {name} predictor must be frozen")
    hr_size = 4 * config.lr_patch
    if disc.input_size != hr_size:
        raise TrainingError(f"perceptual: discriminator takes {disc.input_size}px inputs "
                            f"but HR patches are {hr_size}px")
    gen_adam = gen_adam if gen_adam is not None else AdamState()
    disc_adam = disc_adam if disc_adam is not None else AdamState()
    gen_params = gen.named_parameters()
    disc_params = disc.named_parameters()
    crop_rng = streams.stream("crop")
    start_counts = (gen.forward_count,
                    aesthetic.forward_count if aesthetic is not None else 0,
                    subjective.forward_count if subjective is not None else 0)
    disc_out_min, disc_out_max = math.inf, -math.inf
    rows = []
    for step in range(start_step, config.effective_steps):
        lr_patches, hr_patches = [], []
        for _ in range(2):
            idx = int(crop_rng.integers(len(images)))
            pair = random_crop_pair(images[idx], 4, config.lr_patch, crop_rng)
            lr_patches.append(pair.lr)
            hr_patches.append(pair.hr)
        x = images_to_tensor(lr_patches)
        real = images_to_tensor(hr_patches)
        fakes = multipass_x4(gen, x, enabled=config.multipass)

        real_logits = disc.logits(real)
        fake_logits = [disc.logits(f.detach()) for f in fakes]
        d_loss = disc_loss(real_logits=real_logits, fake_logits=fake_logits)
        d_val = float(d_loss)
        backward(d_loss)
        adam_step(disc_params, disc_adam, config.disc_lr)
        _clear_grads(disc_params.values())
        for logits in [real_logits] + fake_logits:
            probs = expit(logits.data.astype(np.float64))
            disc_out_min = min(disc_out_min, float(probs.min()))
            disc_out_max = max(disc_out_max, float(probs.max()))

        l_r = _mean_tensors([recon_l1(real, f) for f in fakes]) if weights.w_r > 0 else None
        l_g = (_mean_tensors([adversarial_gen(logits=disc.logits(f)) for f in fakes])
               if weights.w_g > 0 else None)
        l_as = l_ar = l_ss = l_sr = None
        if weights.w_as > 0 or weights.w_ar > 0:
            l_as, l_ar = _predictor_terms(aesthetic, real, fakes, weights.w_as,
                                          weights.w_ar, config.score_params)
        if weights.w_ss > 0 or weights.w_sr > 0:
            l_ss, l_sr = _predictor_terms(subjective, real, fakes, weights.w_ss,
                                          weights.w_sr, config.subjective_params)
        parts = (l_r, l_g, l_as, l_ar, l_ss, l_sr)
        part_vals = [None if p is None else float(p) for p in parts]
        total = total_gen_loss(parts, weights)
        total_val = float(total)
        backward(total)
        touched = {name: p for name, p in gen_params.items() if p.grad is not None}
        adam_step(touched, gen_adam, config.gen_lr)
        _clear_grads(gen_params.values())
        _clear_grads(disc_params.values())  # grads that flowed through l_g

        rows.append(",".join([str(step)] + [_fmt(v) for v in part_vals]
                             + [f"{total_val:.6e}", f"{d_val:.6e}", f"{config.gen_lr:.6e}"]))
    stats = {
        "steps": float(config.effective_steps - start_step),
        "gen_forwards": float(gen.forward_count - start_counts[0]),
        "aesthetic_calls": float((aesthetic.forward_count if aesthetic is not None else 0)
                                 - start_counts[1]),
        "subjective_calls": float((subjective.forward_count if subjective is not None else 0)
                                  - start_counts[2]),
        "disc_out_min": disc_out_min,
        "disc_out_max": disc_out_max,
    }
    return PerceptualResult(log_rows=rows, stats=stats)


def _predictor_terms(predictor, real, fakes, w_score: float, w_repr: float,
                     params: ScoreLossParams):
    """Score hinge and representation terms for one predictor, averaged over
    the fake paths. The ground-truth pass is tape-free (predictor frozen,
    images constant)."""
    gt_dist, gt_rep = predictor.forward(real)
    gt_scores = mean_score(gt_dist.data.astype(np.float64))
    score_terms, repr_terms = [], []
    for f in fakes:
        dist, rep = predictor.forward(f)
        if w_score > 0:
            score_terms.append(score_loss(gt_scores, mean_score(dist), params))
        if w_repr > 0:
            repr_terms.append(repr_loss(gt_rep, rep))
    l_score = _mean_tensors(score_terms) if score_terms else None
    l_repr = _mean_tensors(repr_terms) if repr_terms else None
    return l_score, l_repr


# ---------------------------------------------------------------- ablations

@dataclass(frozen=True)
class AblationCell:
    name: str
    weights: LossWeights
    multipass: bool = True


def ablation_grid(name: str) -> list[AblationCell]:
    """Named study grids: weight mixes, loss exclusions, multipass on/off."""
    if name == "eq10":
        return [AblationCell(f"ar{ar}_ap{ap}", LossWeights.recon_adv_mix(ar, ap))
                for ar in (0.5, 0.05, 0.005) for ap in (0, 1)]
    if name == "losses":
        base = LossWeights()
        return [
            AblationCell("all", base),
            AblationCell("no_recon", replace(base, w_r=0.0)),
            AblationCell("no_adversarial", replace(base, w_g=0.0)),
            AblationCell("no_aesthetic", replace(base, w_as=0.0, w_ar=0.0)),
            AblationCell("no_subjective", replace(base, w_ss=0.0, w_sr=0.0)),
        ]
    if name == "multipass":
        return [AblationCell("multipass_on", LossWeights(), multipass=True),
                AblationCell("multipass_off", LossWeights(), multipass=False)]
    raise ValueError(f"unknown ablation grid {name!r}")


def ablate(cells, run_cell) -> list[dict]:
    """Run one training+evaluation callable per cell; a cell's failure is
    recorded in its row and never stops the grid."""
    rows = []
    for cell in cells:
        try:
            rows.append({"cell": cell.name, **run_cell(cell)})
        except Exception as err:  # cell isolation is the contract here
            rows.append({"cell": cell.name, "error": f"{type(err).__name__}: {err}"})
    return rows

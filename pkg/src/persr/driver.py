"""Phase drivers: wire a RunConfig into models, training loops, and reports.

Every run writes its fully resolved config next to its outputs, so any result
can be reproduced from that file alone. Checkpoints carry the config digest
and loading refuses a mismatch, which keeps the pretrain -> predictors ->
perceptual ordering honest across separate invocations.
"""
from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .config import (
    RunConfig,
    config_digest,
    load_scored_images,
    load_sr_images,
    write_config,
)
from .image import (
    bicubic_resize,
    images_to_tensor,
    load_image,
    resize_matrix,
    save_image,
    tensor_to_images,
)
from .losses import LossWeights, ScoreLossParams
from .metrics import fit_pristine, load_pristine, quality_report, read_sr_scores, save_pristine
from .models import DiscriminatorModel, EusrConfig, EusrModel, ScorePredictorModel
from .training import (
    PERCEPTUAL_LOG_HEADER,
    PREDICTOR_LOG_HEADER,
    PRETRAIN_LOG_HEADER,
    AdamState,
    PerceptualConfig,
    PredictorPhaseConfig,
    PretrainConfig,
    RngStreams,
    TrainingError,
    ablate,
    ablation_grid,
    load_checkpoint,
    load_params_into,
    pretrain_eusr,
    save_checkpoint,
    train_perceptual,
    train_predictor,
)

__all__ = [
    "UPSCALE_PATHS", "PRETRAIN_CKPT", "PERCEPTUAL_CKPT", "PRISTINE_FILE",
    "predictor_ckpt", "prepare_out", "build_generator", "build_discriminator",
    "build_predictor", "upscale_tensor",
    "run_pretrain", "run_train_predictor", "run_perceptual", "run_upscale",
    "run_evaluate", "run_fit_pristine", "run_ablation",
]

UPSCALE_PATHS = ("x4", "x2x2", "x8down")

PRETRAIN_CKPT = "pretrain.ckpt"
PERCEPTUAL_CKPT = "perceptual.ckpt"
PRISTINE_FILE = "pristine.npz"


def predictor_ckpt(kind: str) -> str:
    return f"predictor_{kind}.ckpt"


def _log(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def prepare_out(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(config, out / "config.resolved.ini")
    return out


def _write_log(path: Path, header: str, rows) -> None:
    path.write_text("\n".join([header, *rows]) + "\n")


# ------------------------------------------------------------- model factory

def build_generator(config: RunConfig, streams: RngStreams) -> EusrModel:
    arch = EusrConfig(channels=config.channels, shared_blocks=config.shared_blocks,
                      upscale_blocks=config.upscale_blocks,
                      residual_scaling=config.residual_scaling)
    return EusrModel(arch, streams.stream("init.gen"))


def build_discriminator(config: RunConfig, streams: RngStreams) -> DiscriminatorModel:
    return DiscriminatorModel(width=config.disc_width, input_size=4 * config.lr_patch,
                              fc_units=config.disc_fc_units,
                              rng=streams.stream("init.disc"))


def build_predictor(config: RunConfig, streams: RngStreams, kind: str) -> ScorePredictorModel:
    return ScorePredictorModel(repr_length=config.repr_length,
                               rng=streams.stream(f"init.{kind}"))


def _load_group(model_params, ckpt_path: Path, config: RunConfig, group: str,
                expect_kind: str | None = None):
    ckpt = load_checkpoint(ckpt_path, expect_kind=expect_kind,
                           expect_digest=config_digest(config))
    load_params_into(model_params, ckpt, group)
    return ckpt


# ------------------------------------------------------------------- phases

def run_pretrain(config: RunConfig) -> Path:
    out = prepare_out(config)
    streams = RngStreams(config.seed)
    gen = build_generator(config, streams)
    images = load_sr_images(config.dataset, config.synth_size)
    phase = PretrainConfig(steps=config.pretrain_steps, batch_size=config.pretrain_batch,
                           lr_patch=config.lr_patch, base_lr=config.pretrain_lr,
                           halving_interval=config.halving_interval,
                           scale_factor=config.scale_factor)
    _log(f"pretrain: {phase.schedule().steps} steps on {len(images)} images")
    adam = AdamState()
    result = pretrain_eusr(gen, images, phase, streams, adam=adam)
    ckpt_path = out / PRETRAIN_CKPT
    save_checkpoint(ckpt_path, kind="pretrain", step=result.steps_run,
                    groups={"gen": gen.named_parameters()}, adam={"gen": adam},
                    streams=streams, digest=config_digest(config))
    _write_log(out / "pretrain.log.csv", PRETRAIN_LOG_HEADER, result.log_rows)
    _log(f"pretrain: final loss {result.final_loss:.6e} -> {ckpt_path}")
    return ckpt_path


def run_train_predictor(config: RunConfig, kind: str) -> Path:
    out = prepare_out(config)
    streams = RngStreams(config.seed)
    model = build_predictor(config, streams, kind)
    scored = load_scored_images(config.scored_dataset, config.scored_size)
    if config.scored_val_count >= len(scored):
        raise TrainingError(
            f"scored_val_count {config.scored_val_count} leaves no training data "
            f"(dataset has {len(scored)} images)")
    train_set = scored[:-config.scored_val_count]
    val_set = scored[-config.scored_val_count:]
    phase = PredictorPhaseConfig.for_kind(kind, scale_factor=config.scale_factor)
    _log(f"predictor[{kind}]: {len(train_set)} train / {len(val_set)} val, "
         f"epochs {phase.epochs(1)}+{phase.epochs(2)}")
    result = train_predictor(model, train_set, val_set, phase, streams)
    ckpt_path = out / predictor_ckpt(kind)
    save_checkpoint(ckpt_path, kind=f"predictor_{kind}", step=0,
                    groups={"pred": model.named_parameters()},
                    streams=streams, digest=config_digest(config))
    _write_log(out / f"predictor_{kind}.log.csv", PREDICTOR_LOG_HEADER, result.log_rows)
    _log(f"predictor[{kind}]: val EMD^2 {result.untrained_val_emd:.4f} -> "
         f"{result.val_emd:.4f}, SROCC {result.srocc:.4f}")
    return ckpt_path


def _perceptual_phase_config(config: RunConfig) -> PerceptualConfig:
    return PerceptualConfig(
        steps=config.perceptual_steps, scale_factor=config.scale_factor,
        lr_patch=config.lr_patch, gen_lr=config.gen_lr, disc_lr=config.disc_lr,
        multipass=config.multipass,
        score_params=ScoreLossParams(alpha=config.alpha_aesthetic),
        subjective_score_params=ScoreLossParams(alpha=config.alpha_subjective))


def _load_perceptual_inputs(config: RunConfig, out: Path, streams: RngStreams):
    """Pretrained generator plus two frozen predictors, or refuse to start."""
    pretrain_path = out / PRETRAIN_CKPT
    missing = [p.name for p in
               [pretrain_path, out / predictor_ckpt("aesthetic"),
                out / predictor_ckpt("subjective")] if not p.is_file()]
    if missing:
        raise TrainingError(
            f"perceptual phase needs pretrain and both predictor checkpoints in "
            f"{out}; missing: {', '.join(missing)}")
    gen = build_generator(config, streams)
    _load_group(gen.named_parameters(), pretrain_path, config, "gen",
                expect_kind="pretrain")
    predictors = {}
    for kind in PredictorPhaseConfig.KINDS:
        model = build_predictor(config, streams, kind)
        _load_group(model.named_parameters(), out / predictor_ckpt(kind), config,
                    "pred", expect_kind=f"predictor_{kind}")
        model.freeze()
        predictors[kind] = model
    return gen, predictors


def run_perceptual(config: RunConfig) -> Path:
    out = prepare_out(config)
    streams = RngStreams(config.seed)
    gen, predictors = _load_perceptual_inputs(config, out, streams)
    disc = build_discriminator(config, streams)
    weights = LossWeights.from_preset(config.loss_weights)
    phase = _perceptual_phase_config(config)
    images = load_sr_images(config.dataset, config.synth_size)
    _log(f"perceptual: {phase.effective_steps} steps, weights {config.loss_weights}")
    gen_adam, disc_adam = AdamState(), AdamState()
    result = train_perceptual(gen, disc, predictors["aesthetic"],
                              predictors["subjective"], images, weights, phase,
                              streams, gen_adam=gen_adam, disc_adam=disc_adam)
    ckpt_path = out / PERCEPTUAL_CKPT
    save_checkpoint(ckpt_path, kind="perceptual", step=int(result.stats["steps"]),
                    groups={"gen": gen.named_parameters(),
                            "disc": disc.named_parameters()},
                    adam={"gen": gen_adam, "disc": disc_adam},
                    streams=streams, digest=config_digest(config))
    _write_log(out / "perceptual.log.csv", PERCEPTUAL_LOG_HEADER, result.log_rows)
    _log(f"perceptual: disc output range [{result.stats['disc_out_min']:.4f}, "
         f"{result.stats['disc_out_max']:.4f}] -> {ckpt_path}")
    return ckpt_path


# ------------------------------------------------------------------ inference

def upscale_tensor(model: EusrModel, x: Tensor, path: str) -> Tensor:
    """x4 is the native 4x head; x2x2 chains the 2x head twice; x8down runs
    the 8x head and bicubicly halves it. All produce 4x the input size."""
    if path not in UPSCALE_PATHS:
        raise ValueError(f"upscale path must be one of {UPSCALE_PATHS}, got {path!r}")
    with no_grad():
        if path == "x4":
            return model.forward(x, 4)
        if path == "x2x2":
            return model.forward(model.forward(x, 2), 2)
        t = model.forward(x, 8)
        m_h = resize_matrix(t.shape[2], t.shape[2] // 2)
        m_w = resize_matrix(t.shape[3], t.shape[3] // 2)
        return ad.resample_axis(ad.resample_axis(t, m_h, axis=2), m_w, axis=3)


def _resolve_generator_ckpt(config: RunConfig, out: Path, explicit) -> Path:
    if explicit is not None:
        return Path(explicit)
    for name in (PERCEPTUAL_CKPT, PRETRAIN_CKPT):
        candidate = out / name
        if candidate.is_file():
            return candidate
    raise TrainingError(f"no generator checkpoint in {out}; run pretrain first "
                        f"or pass one explicitly")


def run_upscale(config: RunConfig, input_path, path: str, *,
                output_path=None, checkpoint=None) -> Path:
    out = prepare_out(config)
    ckpt_path = _resolve_generator_ckpt(config, out, checkpoint)
    streams = RngStreams(config.seed)
    gen = build_generator(config, streams)
    _load_group(gen.named_parameters(), ckpt_path, config, "gen")
    image = load_image(input_path)
    result = upscale_tensor(gen, images_to_tensor([image]), path)
    sr = tensor_to_images(result)[0]
    if output_path is None:
        output_path = out / f"{Path(input_path).stem}_{path}.png"
    save_image(sr, output_path)
    _log(f"upscale[{path}]: {image.width}x{image.height} -> "
         f"{sr.width}x{sr.height} using {ckpt_path.name} -> {output_path}")
    return Path(output_path)


# ----------------------------------------------------------------- reporting

def run_evaluate(config: RunConfig, gt_dir, sr_dir, *,
                 sr_scores_path=None, pristine_path=None):
    out = prepare_out(config)
    pristine = load_pristine(pristine_path) if pristine_path else None
    sr_scores = read_sr_scores(sr_scores_path) if sr_scores_path else None
    report = quality_report(gt_dir, sr_dir, pristine=pristine, sr_scores=sr_scores)
    for warning in report.warnings:
        _log(f"evaluate: warning: {warning}")
    report_path = out / "report.csv"
    report.to_csv(report_path)
    def show(value):
        return "n/a" if value is None else f"{value:.4f}"
    _log(f"evaluate: {len(report.rows)} pairs, mean PSNR {show(report.means.psnr_db)} dB, "
         f"SSIM {show(report.means.ssim)}, NIQE {show(report.means.niqe)}, "
         f"PI {show(report.means.pi)} -> {report_path}")
    return report


def run_fit_pristine(config: RunConfig, *, corpus=None) -> Path:
    out = prepare_out(config)
    images = load_sr_images(corpus or config.dataset, config.synth_size)
    model = fit_pristine(images)
    path = out / PRISTINE_FILE
    save_pristine(model, path)
    _log(f"fit-pristine: {len(images)} images -> {path}")
    return path


# ------------------------------------------------------------------ ablation

def _evaluate_generator(gen: EusrModel, eval_images, gt_dir: Path, sr_dir: Path):
    """4x the bicubicly downscaled ground truths, then score against them."""
    gt_dir.mkdir(parents=True, exist_ok=True)
    sr_dir.mkdir(parents=True, exist_ok=True)
    for i, gt in enumerate(eval_images):
        name = f"img{i:02d}.png"
        if not (gt_dir / name).is_file():
            save_image(gt, gt_dir / name)
        lr = bicubic_resize(gt, 0.25)
        sr = tensor_to_images(upscale_tensor(gen, images_to_tensor([lr]), "x4"))[0]
        save_image(sr, sr_dir / name)
    report = quality_report(gt_dir, sr_dir)
    return {"psnr_db": f"{report.means.psnr_db:.6f}",
            "ssim": f"{report.means.ssim:.6f}"}


def run_ablation(config: RunConfig, grid: str):
    out = prepare_out(config)
    cells = ablation_grid(grid)
    base_phase = _perceptual_phase_config(config)
    images = load_sr_images(config.dataset, config.synth_size)
    eval_images = load_sr_images(config.eval_dataset, config.synth_size)
    grid_dir = out / "ablation" / grid

    def run_cell(cell):
        streams = RngStreams(config.seed)
        gen, predictors = _load_perceptual_inputs(config, out, streams)
        disc = build_discriminator(config, streams)
        phase = dataclasses.replace(base_phase, multipass=cell.multipass)
        _log(f"ablation[{grid}/{cell.name}]: {phase.effective_steps} steps")
        train_perceptual(gen, disc, predictors["aesthetic"],
                         predictors["subjective"], images, cell.weights, phase,
                         streams, gen_adam=AdamState(), disc_adam=AdamState())
        return _evaluate_generator(gen, eval_images, grid_dir / "gt",
                                   grid_dir / cell.name)

    rows = ablate(cells, run_cell)
    columns = ("cell", "psnr_db", "ssim", "error")
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(str(row.get(col, "")) for col in columns))
    table_path = out / f"ablation_{grid}.csv"
    table_path.write_text("\n".join(lines) + "\n")
    _log(f"ablation[{grid}]: {len(rows)} cells -> {table_path}")
    return rows

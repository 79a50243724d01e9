"""Focal-loss training: optimizer, schedule, augmentations, and the epoch loop.

Training is fully deterministic under a fixed seed: shuffling, augmentation
draws, and dropout masks all derive from per-epoch generators seeded from the
run seed, and the optimizer touches parameters in sorted-name order.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nd
from .checkpoint import save_checkpoint
from .data import DatasetHandle, SampleSequence
from .errors import ContractError, NumericError
from .metrics import DbaConfig, dba_score, evaluate_model
from .model import (
    ModelConfig,
    ModelParams,
    build_model_params,
    forward_batch,
    preprocess_samples,
)
from .preprocess import GpsReading, ScenarioCalibration


@dataclass
class FocalLossConfig:
    """Focusing exponent and per-class weights."""

    gamma: float = 2.0
    alpha: np.ndarray | None = None  # (M,) class weights; None = unweighted

    def __post_init__(self):
        if self.gamma < 0:
            raise ContractError(f"focal gamma must be >= 0, got {self.gamma}")
        if self.alpha is not None and (np.asarray(self.alpha) < 0).any():
            raise ContractError("focal alpha weights must be non-negative")


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 150
    batch_size: int = 4

    def __post_init__(self):
        if self.lr < 0:
            raise ContractError(f"lr must be >= 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")


@dataclass
class TrainState:
    """Optimizer step counter, moment buffers, seed, and best validation DBA."""

    seed: int = 0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    best_val_dba: float = -1.0


LOG_CLAMP = 1e-12


def focal_loss(probs: nd.Tensor, labels, cfg: FocalLossConfig) -> nd.Tensor:
    """Mean over the batch of -alpha_m (1 - p_m)^gamma log(p_m) at the true beam."""
    if probs.ndim != 2:
        raise ContractError(f"focal_loss: probs must be (B, M), got {tuple(probs.shape)}")
    labels = np.asarray(labels, dtype=np.int64)
    picked = nd.gather_labels(probs, labels)  # validates label range
    log_p = nd.log(picked, floor=LOG_CLAMP)
    one_minus = nd.add_scalar(nd.neg(picked), 1.0)
    weighted = nd.mul(nd.pow_const(one_minus, cfg.gamma), log_p)
    if cfg.alpha is not None:
        alpha = np.asarray(cfg.alpha, dtype=probs.dtype)
        if alpha.shape[0] != probs.shape[1]:
            raise ContractError(
                f"focal_loss: alpha has {alpha.shape[0]} classes, probs {probs.shape[1]}")
        weighted = nd.mul(weighted, nd.take_rows(nd.tensor(alpha), labels))
    return nd.neg(nd.reduce_mean(weighted))


def class_weights(labels, beams: int) -> np.ndarray:
    """Inverse-frequency weights with add-one smoothing, normalized to mean 1."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ContractError("class_weights: empty label set")
    counts = np.bincount(labels, minlength=beams).astype(np.float64)
    raw = labels.size / (beams * (counts + 1.0))
    return raw / raw.mean()


def cosine_lr(epoch: int, cfg: OptimizerConfig) -> float:
    """Cosine annealing from cfg.lr at epoch 0 to 0 at cfg.epochs."""
    if not 0 <= epoch <= cfg.epochs:
        raise ContractError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


def adamw_step(named_params: dict, state: TrainState, cfg: OptimizerConfig,
               lr_t: float) -> None:
    """Bias-corrected Adam update plus decoupled weight decay.

    Aborts (raises, mutating nothing) if any populated gradient is non-finite.
    Parameters without gradients are skipped entirely.
    """
    items = sorted(named_params.items())
    for name, p in items:
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NumericError(f"adamw_step: non-finite gradient in {name}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in items:
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        p.data = p.data - lr_t * update - lr_t * cfg.weight_decay * p.data


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        total += float((g.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm


# -- augmentations ------------------------------------------------------------------


def _mirror_theta(theta: float) -> float:
    mirrored = -theta
    return math.pi if mirrored <= -math.pi else mirrored


def flip_augment(sample: SampleSequence, beams: int) -> SampleSequence:
    """Horizontal world mirror with beam relabeling m -> M-1-m.

    Camera pixels flip left-right; LiDAR x negates; the radar cube reverses
    along the antenna axis (mirroring the azimuth spectrum); raw GPS dx
    negates with the calibration angle mirrored to match; applying the flip
    twice returns the original sample.
    """
    from .data import Frame  # local import to avoid a cycle at module load

    frames = [
        Frame(
            camera=np.ascontiguousarray(f.camera[:, ::-1, :]),
            lidar=np.column_stack([-f.lidar[:, 0], f.lidar[:, 1],
                                   f.lidar[:, 2], f.lidar[:, 3]]).astype(np.float32)
            if f.lidar.size else f.lidar,
            radar=np.ascontiguousarray(f.radar[::-1, :, :]),
        )
        for f in sample.frames
    ]
    return SampleSequence(
        seq_id=sample.seq_id,
        scenario_id=sample.scenario_id,
        frames=frames,
        gps=[GpsReading(-g.dx, g.dy) for g in sample.gps],
        label=beams - 1 - sample.label,
        calibration=ScenarioCalibration(_mirror_theta(sample.calibration.theta_offset)),
        beams=sample.beams,
    )


def photometric_augment(frame: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Brightness, contrast, and saturation jitter on a u8 camera frame.

    Each factor is drawn uniformly from [0.8, 1.2]; applied before
    normalization and clamped back to the valid pixel range.
    """
    brightness, contrast, saturation = rng.uniform(0.8, 1.2, size=3)
    x = frame.astype(np.float32)
    x = x * brightness
    mean = x.mean()
    x = mean + (x - mean) * contrast
    gray = x.mean(axis=2, keepdims=True)
    x = gray + (x - gray) * saturation
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def augment_sample(sample: SampleSequence, beams: int, rng: np.random.Generator,
                   flip_prob: float = 0.5, photometric: bool = True) -> SampleSequence:
    if rng.random() < flip_prob:
        sample = flip_augment(sample, beams)
    if photometric:
        from .data import Frame

        sample = replace(sample, frames=[
            Frame(camera=photometric_augment(f.camera, rng), lidar=f.lidar, radar=f.radar)
            for f in sample.frames
        ])
    return sample


# -- epoch loop ------------------------------------------------------------------------


def train_epoch(handle: DatasetHandle, train_indices, params: ModelParams,
                state: TrainState, opt_cfg: OptimizerConfig, focal_cfg: FocalLossConfig,
                lr_t: float, *, epoch: int, aug_rng: np.random.Generator,
                dropout_rng: np.random.Generator, flip_prob: float = 0.5,
                photometric: bool = True, ablation: str = "full",
                clip_norm: float = 5.0, dba_cfg: DbaConfig | None = None):
    """One pass over the shuffled training split; returns (mean loss, train DBA)."""
    dba_cfg = dba_cfg or DbaConfig()
    beams = params.config.beams
    indices = np.asarray(list(train_indices))
    indices = indices[aug_rng.permutation(len(indices))]
    total_loss = 0.0
    ranked_all, labels_all = [], []
    for start in range(0, len(indices), opt_cfg.batch_size):
        chunk = indices[start:start + opt_cfg.batch_size]
        batch_no = start // opt_cfg.batch_size
        try:
            samples = [
                augment_sample(handle.sample(int(i)), beams, aug_rng,
                               flip_prob=flip_prob, photometric=photometric)
                for i in chunk
            ]
            inputs = preprocess_samples(samples, params.config)
            with nd.Tape() as tape:
                dist = forward_batch(inputs, params, training=True, rng=dropout_rng,
                                     ablation=ablation)
                loss = focal_loss(dist.probs, inputs.labels, focal_cfg)
                tape.backward(loss)
            named = params.named_parameters()
            clip_gradients(named.values(), clip_norm)
            adamw_step(named, state, opt_cfg, lr_t)
            nd.zero_grads(named.values())
        except NumericError as exc:
            raise NumericError(f"epoch {epoch} batch {batch_no}: {exc}") from exc
        total_loss += float(loss.data) * len(chunk)
        ranked_all.append(dist.top_ranked(dba_cfg.k))
        labels_all.extend(inputs.labels)
    mean_loss = total_loss / len(indices)
    train_dba = dba_score(np.concatenate(ranked_all), labels_all, dba_cfg)
    return mean_loss, train_dba


@dataclass
class TrainResult:
    params: ModelParams
    state: TrainState
    history: list
    best_val_dba: float
    best_epoch: int
    checkpoint_path: Path | None
    wall_time_s: float


def fit(handle: DatasetHandle, train_idx, val_idx, model_cfg: ModelConfig,
        opt_cfg: OptimizerConfig, *, seed: int = 0, gamma: float = 2.0,
        use_class_weights: bool = True, flip_prob: float = 0.5,
        photometric: bool = True, ablation: str = "full", clip_norm: float = 5.0,
        dba_cfg: DbaConfig | None = None, early_stop_dba: float | None = None,
        log_path=None, checkpoint_path=None, run_meta: dict | None = None,
        eval_batch_size: int = 8, progress=None) -> TrainResult:
    """Full training loop with per-epoch validation and best-DBA checkpointing.

    The training log CSV holds only deterministic columns (epoch, lr,
    train_loss, train_dba, val_dba); wall time goes to the console/result.
    """
    dba_cfg = dba_cfg or DbaConfig()
    start_time = time.perf_counter()
    train_labels = [handle.entries[i][2] for i in train_idx]
    alpha = class_weights(train_labels, model_cfg.beams) if use_class_weights else None
    focal_cfg = FocalLossConfig(gamma=gamma, alpha=alpha)
    params = build_model_params(model_cfg, seed=seed)
    state = TrainState(seed=seed)
    history = []
    best_epoch = -1
    log_file = None
    writer = None
    if log_path is not None:
        log_file = open(log_path, "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(["epoch", "lr", "train_loss", "train_dba", "val_dba"])

    try:
        for epoch in range(opt_cfg.epochs):
            lr_t = cosine_lr(epoch, opt_cfg)
            # streams restart each epoch: with a frozen model (lr=0) every
            # epoch sees identical batches and reports an identical loss
            aug_rng = np.random.default_rng([seed, 17])
            dropout_rng = np.random.default_rng([seed, 23])
            mean_loss, train_dba = train_epoch(
                handle, train_idx, params, state, opt_cfg, focal_cfg, lr_t,
                epoch=epoch, aug_rng=aug_rng, dropout_rng=dropout_rng,
                flip_prob=flip_prob, photometric=photometric, ablation=ablation,
                clip_norm=clip_norm, dba_cfg=dba_cfg)
            val_report = evaluate_model(params, handle, val_idx, dba_cfg,
                                        batch_size=eval_batch_size, mode=ablation)
            val_dba = val_report.overall_dba
            row = {"epoch": epoch, "lr": lr_t, "train_loss": mean_loss,
                   "train_dba": train_dba, "val_dba": val_dba}
            history.append(row)
            if writer is not None:
                writer.writerow([epoch, repr(lr_t), repr(mean_loss),
                                 repr(train_dba), repr(val_dba)])
                log_file.flush()
            if progress is not None:
                progress(f"epoch {epoch:3d}  lr {lr_t:.2e}  loss {mean_loss:.4f}  "
                         f"train_dba {train_dba:.4f}  val_dba {val_dba:.4f}")
            # best_val_dba starts at -1, so epoch 0 always writes a checkpoint
            if val_dba > state.best_val_dba:
                state.best_val_dba = val_dba
                best_epoch = epoch
                if checkpoint_path is not None:
                    meta = {"best_val_dba": state.best_val_dba, "best_epoch": best_epoch,
                            "seed": seed, "ablation": ablation}
                    if run_meta:
                        meta["run"] = run_meta
                    save_checkpoint(checkpoint_path, params, state, meta)
            if early_stop_dba is not None and val_dba >= early_stop_dba:
                if progress is not None:
                    progress(f"early stop: val_dba {val_dba:.4f} >= {early_stop_dba}")
                break
    finally:
        if log_file is not None:
            log_file.close()

    return TrainResult(
        params=params,
        state=state,
        history=history,
        best_val_dba=state.best_val_dba,
        best_epoch=best_epoch,
        checkpoint_path=Path(checkpoint_path) if checkpoint_path is not None else None,
        wall_time_s=time.perf_counter() - start_time,
    )

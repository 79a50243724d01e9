"""Command-line interface: dataset generation, training, evaluation, prediction.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numeric failure,
5 checkpoint/config mismatch.  BEVBEAM_THREADS caps BLAS parallelism.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from .config import RunConfig
from .checkpoint import load_checkpoint
from .data import generate_synthetic, load_dataset, split_dataset
from .errors import (
    CheckpointMismatchError,
    ConfigError,
    ContractError,
    FormatError,
    NumericError,
)
from .metrics import (
    DbaConfig,
    ablation_run,
    build_report,
    read_predictions_csv,
    write_confusion_csv,
    write_predictions_csv,
    write_report_csv,
)
from .model import ABLATION_MODES, predict_ranked
from .training import fit

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_MISMATCH = 5


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, ContractError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (FormatError, FileNotFoundError, OSError) as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(EXIT_IO)
        except NumericError as exc:
            click.echo(f"numeric error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except CheckpointMismatchError as exc:
            click.echo(f"checkpoint mismatch: {exc}", err=True)
            sys.exit(EXIT_MISMATCH)
    return wrapper


def _merge_config(config_path, set_pairs, **flags) -> RunConfig:
    cfg = RunConfig.from_file(config_path) if config_path else RunConfig()
    overrides = {}
    for pair in set_pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key, value in flags.items():
        if value is not None:
            overrides[key] = value
    return cfg.updated(overrides)


def _split_indices(handle, cfg: RunConfig, which: str):
    train, val, test = split_dataset(handle, cfg.split_ratios(), seed=cfg.split_seed)
    return {"train": train, "val": val, "test": test,
            "all": sorted(train + val + test)}[which]


_config_option = click.option("--config", "config_path",
                              type=click.Path(dir_okay=False),
                              help="flat key=value config file")
_set_option = click.option("--set", "set_pairs", multiple=True, metavar="KEY=VALUE",
                           help="override any config key")


@click.group()
@click.version_option()
def main():
    """BEV-space multi-modal beam prediction."""


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_config_option
@_set_option
@click.option("--sequences", type=int)
@click.option("--beams", type=int)
@click.option("--seed", type=int)
@click.option("--scenarios", type=int)
@click.option("--grid-h", "grid_h", type=int)
@click.option("--grid-w", "grid_w", type=int)
@click.option("--cam-size", "cam_size", type=int)
@_exit_codes
def generate(out_dir, config_path, set_pairs, **flags):
    """Write a synthetic multi-modal dataset."""
    cfg = _merge_config(config_path, set_pairs, **flags)
    root = generate_synthetic(cfg.synthetic_config(), out_dir)
    cfg.to_file(root / "effective_config.cfg")
    handle = load_dataset(root)
    labels = handle.labels
    hist = np.bincount(labels, minlength=cfg.beams)
    click.echo(f"wrote {len(handle)} sequences to {root}")
    click.echo(f"label histogram: min {hist.min()} max {hist.max()} "
               f"covering {(hist > 0).sum()}/{cfg.beams} beams")


@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_config_option
@_set_option
@click.option("--epochs", type=int)
@click.option("--lr", type=float)
@click.option("--batch-size", "batch_size", type=int)
@click.option("--seed", type=int)
@click.option("--ablation", type=click.Choice(ABLATION_MODES))
@_exit_codes
def train(data_dir, out_dir, config_path, set_pairs, **flags):
    """Train the fusion model; writes best checkpoint and training log."""
    cfg = _merge_config(config_path, set_pairs, **flags)
    handle = load_dataset(data_dir)
    dataset_beams = handle.sample(0).beams
    if cfg.beams != dataset_beams:
        click.echo(f"note: adopting beams={dataset_beams} from dataset")
        cfg = cfg.updated({"beams": dataset_beams})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.to_file(out / "effective_config.cfg")
    train_idx, val_idx, _ = split_dataset(handle, cfg.split_ratios(), seed=cfg.split_seed)
    result = fit(
        handle, train_idx, val_idx, cfg.model_config(), cfg.optimizer_config(),
        seed=cfg.seed, gamma=cfg.gamma, use_class_weights=cfg.class_weighting,
        flip_prob=cfg.flip_prob, photometric=cfg.photometric, ablation=cfg.ablation,
        clip_norm=cfg.clip_norm, dba_cfg=cfg.dba_config(),
        early_stop_dba=cfg.early_stop_dba, log_path=out / "training_log.csv",
        checkpoint_path=out / "best.ckpt", run_meta=dataclasses.asdict(cfg),
        eval_batch_size=cfg.eval_batch_size, progress=click.echo)
    (out / "run_meta.json").write_text(json.dumps({
        "wall_time_s": result.wall_time_s,
        "best_val_dba": result.best_val_dba,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "dataset": str(data_dir),
        "n_train": len(train_idx),
        "n_val": len(val_idx),
    }, indent=2))
    click.echo(f"final validation DBA: {result.best_val_dba:.4f} "
               f"(epoch {result.best_epoch}, {result.wall_time_s:.1f}s)")


_STRUCTURE_KEYS = ("grid_h", "grid_w", "extent", "c_bev", "c_back", "cam_size",
                   "attn_layers", "attn_heads", "temporal_layers", "temporal_heads",
                   "head_hidden", "gps_mlp_hidden", "beams")


def _checkpoint_config(meta: dict, config_path, set_pairs, flags) -> RunConfig:
    """Rebuild the run config from the checkpoint, then apply overrides;
    structural overrides that contradict the checkpoint are mismatches."""
    stored = meta.get("run")
    base = RunConfig(**stored) if stored else RunConfig()
    cfg = base
    if config_path:
        cfg = RunConfig.from_file(config_path)
    overrides = {}
    for pair in set_pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key, value in flags.items():
        if value is not None:
            overrides[key] = value
    cfg = cfg.updated(overrides)
    for key in _STRUCTURE_KEYS:
        if getattr(cfg, key) != getattr(base, key):
            raise CheckpointMismatchError(
                f"key {key!r}: checkpoint has {getattr(base, key)}, "
                f"requested {getattr(cfg, key)}")
    return cfg


def _write_plots(report, out: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(report.confusion, cmap="viridis")
    ax.set_xlabel("predicted beam")
    ax.set_ylabel("true beam")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(out / "confusion.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3))
    scenarios = sorted(report.per_scenario)
    ax.bar([str(s) for s in scenarios], [report.per_scenario[s] for s in scenarios])
    ax.set_xlabel("scenario")
    ax.set_ylabel("DBA")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(out / "dba_by_scenario.png", dpi=120)
    plt.close(fig)


@main.command("eval")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(dir_okay=False))
@click.option("--data", "data_dir", type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--split", type=click.Choice(["train", "val", "test", "all"]), default="test")
@click.option("--ablation", type=click.Choice(ABLATION_MODES), default="full")
@click.option("--predictions", "predictions_path",
              type=click.Path(dir_okay=False),
              help="evaluate an external predictions CSV instead of a checkpoint")
@click.option("--plots", is_flag=True, help="also write confusion/DBA plot images")
@_config_option
@_set_option
@_exit_codes
def evaluate(checkpoint_path, data_dir, out_dir, split, ablation, predictions_path,
             plots, config_path, set_pairs):
    """Evaluate a checkpoint (or a predictions file) and write report CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if predictions_path:
        seq_ids, ranked, labels = read_predictions_csv(predictions_path)
        beams = int(max(ranked.max(), labels.max())) + 1
        report = build_report(ranked, labels, np.zeros(len(labels), dtype=np.int64),
                              beams, DbaConfig(), mode="predictions")
    else:
        if not checkpoint_path or not data_dir:
            raise ConfigError("eval needs --checkpoint and --data (or --predictions)")
        params, meta = load_checkpoint(checkpoint_path)
        cfg = _checkpoint_config(meta, config_path, set_pairs, {})
        handle = load_dataset(data_dir)
        dataset_beams = handle.sample(0).beams
        if dataset_beams != params.config.beams:
            raise CheckpointMismatchError(
                f"key 'beams': checkpoint has {params.config.beams}, "
                f"dataset has {dataset_beams}")
        indices = _split_indices(handle, cfg, split)
        report = ablation_run(params, handle, indices, ablation, cfg.dba_config(),
                              batch_size=cfg.eval_batch_size)
        cfg.to_file(out / "effective_config.cfg")
    write_report_csv(report, out / "report.csv")
    write_confusion_csv(report, out / "confusion.csv")
    if plots:
        _write_plots(report, out)
    click.echo(f"mode {report.mode}: overall DBA {report.overall_dba:.4f} "
               f"on {report.n_samples} samples")
    for k in sorted(report.top_k):
        click.echo(f"top-{k} accuracy: {report.top_k[k]:.4f}")


@main.command()
@click.option("--checkpoint", "checkpoint_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--split", type=click.Choice(["train", "val", "test", "all"]), default="test")
@_config_option
@_set_option
@_exit_codes
def predict(checkpoint_path, data_dir, out_path, split, config_path, set_pairs):
    """Write ranked beam predictions (seq_id, rank1..3, prob1..3)."""
    params, meta = load_checkpoint(checkpoint_path)
    cfg = _checkpoint_config(meta, config_path, set_pairs, {})
    handle = load_dataset(data_dir)
    indices = _split_indices(handle, cfg, split)
    seq_ids, ranked_rows, prob_rows = [], [], []
    for start in range(0, len(indices), cfg.eval_batch_size):
        chunk = indices[start:start + cfg.eval_batch_size]
        try:
            samples = handle.samples(chunk)
        except (FormatError, ContractError) as exc:
            bad = handle.entries[chunk[0]][0]
            raise FormatError(f"sample {bad}: {exc}") from exc
        ranked, probs = predict_ranked(samples, params, k=max(3, cfg.top_k))
        seq_ids.extend(s.seq_id for s in samples)
        ranked_rows.append(ranked)
        prob_rows.append(probs)
    write_predictions_csv(out_path, seq_ids,
                          np.concatenate(ranked_rows), np.concatenate(prob_rows))
    click.echo(f"wrote {len(seq_ids)} predictions to {out_path}")


if __name__ == "__main__":
    main()

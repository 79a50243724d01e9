"""Distance-based accuracy, top-k metrics, confusion matrices, and ablations.

DBA credits a ranked prediction list by the best normalized index distance
among the top k beams, averaged over k = 1..K:

    Y_k = 1 - (1/N) sum_n min_{j<=k} min(|pred_j - label| / delta, 1)
    DBA = (1/K) sum_k Y_k
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .model import ABLATION_MODES, ModelParams, forward_full


@dataclass
class DbaConfig:
    """Top-K depth and index-distance normalization for DBA."""

    k: int = 3
    delta: float = 5.0

    def __post_init__(self):
        if self.k < 1:
            raise ContractError(f"DBA needs k >= 1, got {self.k}")
        if self.delta < 1:
            raise ContractError(f"DBA delta must be >= 1, got {self.delta}")


@dataclass
class DbaReport:
    """Evaluation summary: overall and per-scenario DBA, top-k, confusion."""

    overall_dba: float
    per_scenario: dict
    top_k: dict           # {1: acc, 2: acc, 3: acc}
    confusion: np.ndarray  # (M, M) counts, rows = true beam
    n_samples: int
    mode: str = "full"
    config: DbaConfig = field(default_factory=DbaConfig)


def _as_pred_array(predictions, k: int) -> np.ndarray:
    preds = np.asarray(predictions, dtype=np.int64)
    if preds.ndim != 2:
        raise ContractError(f"predictions must be (N, >=k) ranked lists, got ndim {preds.ndim}")
    if preds.shape[1] < k:
        raise ContractError(
            f"prediction lists have length {preds.shape[1]} but k={k} requires at least {k}")
    return preds


def dba_score(predictions, labels, cfg: DbaConfig | None = None) -> float:
    """Distance-based accuracy of per-sample ranked beam lists."""
    cfg = cfg or DbaConfig()
    preds = _as_pred_array(predictions, cfg.k)
    labels = np.asarray(labels, dtype=np.int64)
    dist = np.minimum(np.abs(preds[:, :cfg.k] - labels[:, None]) / cfg.delta, 1.0)
    best_so_far = np.minimum.accumulate(dist, axis=1)
    y = 1.0 - best_so_far.mean(axis=0)
    return float(y.mean())


def dba_per_k(predictions, labels, cfg: DbaConfig | None = None) -> np.ndarray:
    """The Y_k curve (length K); non-decreasing in k."""
    cfg = cfg or DbaConfig()
    preds = _as_pred_array(predictions, cfg.k)
    labels = np.asarray(labels, dtype=np.int64)
    dist = np.minimum(np.abs(preds[:, :cfg.k] - labels[:, None]) / cfg.delta, 1.0)
    return 1.0 - np.minimum.accumulate(dist, axis=1).mean(axis=0)


def topk_accuracy(predictions, labels, k: int) -> float:
    """Fraction of samples whose true beam appears in the first k predictions."""
    preds = _as_pred_array(predictions, k)
    labels = np.asarray(labels, dtype=np.int64)
    return float((preds[:, :k] == labels[:, None]).any(axis=1).mean())


def confusion_matrix(top1_predictions, labels, beams: int) -> np.ndarray:
    """(M, M) counts; row = true beam, column = predicted beam."""
    preds = np.asarray(top1_predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if ((preds < 0) | (preds >= beams)).any() or ((labels < 0) | (labels >= beams)).any():
        raise ContractError(f"confusion_matrix: index outside [0, {beams})")
    matrix = np.zeros((beams, beams), dtype=np.int64)
    np.add.at(matrix, (labels, preds), 1)
    return matrix


def uniform_random_dba(labels, beams: int, cfg: DbaConfig | None = None) -> float:
    """Exact expected DBA of a uniformly random ranked predictor.

    The first k entries of a uniform random ranking form a uniform random
    k-subset, so E[min distance] follows from order statistics over the
    sorted per-beam distances.
    """
    cfg = cfg or DbaConfig()
    labels = np.asarray(labels, dtype=np.int64)
    total = np.zeros(cfg.k)
    denoms = [math.comb(beams, k) for k in range(1, cfg.k + 1)]
    for label in labels:
        dist = np.sort(np.minimum(np.abs(np.arange(beams) - label) / cfg.delta, 1.0))
        for ki in range(cfg.k):
            k = ki + 1
            weights = np.array([math.comb(beams - 1 - i, k - 1) for i in range(beams)])
            total[ki] += (dist * weights).sum() / denoms[ki]
    expected_min = total / len(labels)
    return float((1.0 - expected_min).mean())


# -- model evaluation -----------------------------------------------------------


def evaluate_model(params: ModelParams, handle, indices, cfg: DbaConfig | None = None,
                   batch_size: int = 8, mode: str = "full") -> DbaReport:
    """Forward the model over a split and assemble the DBA report."""
    cfg = cfg or DbaConfig()
    indices = list(indices)
    ranked_all, labels_all, scenarios_all = [], [], []
    for start in range(0, len(indices), batch_size):
        chunk = indices[start:start + batch_size]
        samples = handle.samples(chunk)
        dist = forward_full(samples, params, training=False, ablation=mode)
        ranked_all.append(dist.top_ranked(cfg.k))
        labels_all.extend(s.label for s in samples)
        scenarios_all.extend(s.scenario_id for s in samples)
    ranked = np.concatenate(ranked_all, axis=0)
    labels = np.asarray(labels_all, dtype=np.int64)
    scenarios = np.asarray(scenarios_all, dtype=np.int64)
    return build_report(ranked, labels, scenarios, params.config.beams, cfg, mode)


def build_report(ranked: np.ndarray, labels: np.ndarray, scenarios: np.ndarray,
                 beams: int, cfg: DbaConfig | None = None, mode: str = "full") -> DbaReport:
    cfg = cfg or DbaConfig()
    per_scenario = {}
    for s in sorted(set(int(v) for v in scenarios)):
        sel = scenarios == s
        per_scenario[s] = dba_score(ranked[sel], labels[sel], cfg)
    return DbaReport(
        overall_dba=dba_score(ranked, labels, cfg),
        per_scenario=per_scenario,
        top_k={k: topk_accuracy(ranked, labels, k) for k in range(1, cfg.k + 1)},
        confusion=confusion_matrix(ranked[:, 0], labels, beams),
        n_samples=len(labels),
        mode=mode,
        config=cfg,
    )


def ablation_run(params: ModelParams, handle, indices, mode: str,
                 cfg: DbaConfig | None = None, batch_size: int = 8) -> DbaReport:
    """Evaluate a trained checkpoint with one pathway disabled.

    Modality modes zero the corresponding BEV feature; mean_pool bypasses the
    temporal transformer with a plain time average; single_frame feeds only
    the t=5 observation; the gps_* modes disable one GPS pathway.
    """
    if mode not in ABLATION_MODES:
        raise ContractError(f"unknown ablation mode {mode!r}; choose from {ABLATION_MODES}")
    return evaluate_model(params, handle, indices, cfg, batch_size, mode=mode)


# -- report files -----------------------------------------------------------------


def write_report_csv(report: DbaReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scope", "mode", "n_samples", "dba", "top1", "top2", "top3"])
        writer.writerow(["overall", report.mode, report.n_samples,
                         f"{report.overall_dba:.6f}",
                         *(f"{report.top_k.get(k, float('nan')):.6f}" for k in (1, 2, 3))])
        for scenario, value in sorted(report.per_scenario.items()):
            writer.writerow([f"scenario_{scenario}", report.mode, "", f"{value:.6f}",
                             "", "", ""])


def write_confusion_csv(report: DbaReport, path) -> None:
    np.savetxt(path, report.confusion, fmt="%d", delimiter=",")


def write_predictions_csv(path, seq_ids, ranked: np.ndarray, probs: np.ndarray) -> None:
    """cmd_predict output: seq_id, rank1..3, prob1..3."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seq_id", "rank1", "rank2", "rank3", "prob1", "prob2", "prob3"])
        for sid, row, prow in zip(seq_ids, ranked, probs):
            writer.writerow([sid, *row[:3],
                             *(f"{p:.6f}" for p in prow[:3])])


def read_predictions_csv(path):
    """External prediction-file format: seq_id, rank1, rank2, rank3, label."""
    seq_ids, ranked, labels = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            seq_ids.append(row["seq_id"])
            ranked.append([int(row["rank1"]), int(row["rank2"]), int(row["rank3"])])
            labels.append(int(row["label"]))
    return seq_ids, np.asarray(ranked, dtype=np.int64), np.asarray(labels, dtype=np.int64)

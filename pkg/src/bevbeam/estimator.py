"""Scikit-learn style estimators over the beam prediction pipeline.

``BeamPredictor`` wraps dataset splitting, training, and ranked prediction
behind the familiar fit/predict/predict_proba/score surface so the model
composes with the wider ecosystem (pipelines, grid search over get_params).
``GpsOnlyBeamPredictor`` is the position-only MLP baseline with the same API.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import nd
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetHandle, SampleSequence, load_dataset, split_dataset
from .errors import ContractError
from .metrics import DbaConfig, dba_score
from .model import ModelConfig, forward_full
from .preprocess import calibrate_gps
from .training import (
    FocalLossConfig,
    OptimizerConfig,
    TrainState,
    adamw_step,
    class_weights,
    cosine_lr,
    fit as train_fit,
    focal_loss,
)


def _resolve_handle(X) -> DatasetHandle:
    if isinstance(X, DatasetHandle):
        return X
    return load_dataset(X)


def _as_samples(X) -> list:
    if isinstance(X, SampleSequence):
        return [X]
    if isinstance(X, DatasetHandle):
        return X.samples(range(len(X)))
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], SampleSequence):
        return list(X)
    raise ContractError("expected SampleSequence(s) or a DatasetHandle")


class BeamPredictor(BaseEstimator):
    """Multi-modal BEV-fusion beam predictor with an sklearn-style API.

    fit() takes a dataset handle (or path); predict()/score() take raw
    sample sequences.  All constructor arguments are hyperparameters exposed
    through get_params/set_params.
    """

    def __init__(self, grid_h=128, grid_w=128, extent=50.0, c_bev=256, c_back=512,
                 cam_size=256, attn_layers=3, attn_heads=4, temporal_layers=4,
                 temporal_heads=4, head_hidden=512, dropout=0.1, gps_mlp_hidden=128,
                 beams=64, lr=1e-4, weight_decay=1e-2, epochs=150, batch_size=4,
                 gamma=2.0, class_weighting=True, flip_prob=0.5, photometric=True,
                 clip_norm=5.0, delta=5.0, top_k=3, seed=0, val_fraction=0.1,
                 early_stop_dba=None, eval_batch_size=8, ablation="full",
                 verbose=False):
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.extent = extent
        self.c_bev = c_bev
        self.c_back = c_back
        self.cam_size = cam_size
        self.attn_layers = attn_layers
        self.attn_heads = attn_heads
        self.temporal_layers = temporal_layers
        self.temporal_heads = temporal_heads
        self.head_hidden = head_hidden
        self.dropout = dropout
        self.gps_mlp_hidden = gps_mlp_hidden
        self.beams = beams
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.gamma = gamma
        self.class_weighting = class_weighting
        self.flip_prob = flip_prob
        self.photometric = photometric
        self.clip_norm = clip_norm
        self.delta = delta
        self.top_k = top_k
        self.seed = seed
        self.val_fraction = val_fraction
        self.early_stop_dba = early_stop_dba
        self.eval_batch_size = eval_batch_size
        self.ablation = ablation
        self.verbose = verbose

    # -- sklearn plumbing ---------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this BeamPredictor is not fitted; call fit first")

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            grid_h=self.grid_h, grid_w=self.grid_w, extent=self.extent,
            c_bev=self.c_bev, c_back=self.c_back, cam_size=self.cam_size,
            attn_layers=self.attn_layers, attn_heads=self.attn_heads,
            temporal_layers=self.temporal_layers, temporal_heads=self.temporal_heads,
            head_hidden=self.head_hidden, dropout=self.dropout, beams=self.beams,
            gps_mlp_hidden=self.gps_mlp_hidden,
        )

    def _dba_config(self) -> DbaConfig:
        return DbaConfig(k=self.top_k, delta=self.delta)

    # -- estimator surface ----------------------------------------------------

    def fit(self, X, y=None, *, train_indices=None, val_indices=None,
            log_path=None, checkpoint_path=None):
        """Train on a dataset handle or path.

        Labels live inside the samples, so ``y`` is ignored (sklearn
        signature compatibility).  Without explicit index lists a stratified
        validation carve-out of ``val_fraction`` is made.
        """
        handle = _resolve_handle(X)
        if train_indices is None or val_indices is None:
            ratios = (1.0 - self.val_fraction, self.val_fraction, 0.0)
            train_indices, val_indices, _ = split_dataset(handle, ratios, seed=self.seed)
        opt = OptimizerConfig(lr=self.lr, weight_decay=self.weight_decay,
                              epochs=self.epochs, batch_size=self.batch_size)
        result = train_fit(
            handle, list(train_indices), list(val_indices), self._model_config(), opt,
            seed=self.seed, gamma=self.gamma, use_class_weights=self.class_weighting,
            flip_prob=self.flip_prob, photometric=self.photometric,
            ablation=self.ablation, clip_norm=self.clip_norm,
            dba_cfg=self._dba_config(), early_stop_dba=self.early_stop_dba,
            log_path=log_path, checkpoint_path=checkpoint_path,
            eval_batch_size=self.eval_batch_size,
            progress=print if self.verbose else None)
        self.params_ = result.params
        self.history_ = result.history
        self.best_val_dba_ = result.best_val_dba
        self.train_result_ = result
        return self

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        samples = _as_samples(X)
        out = []
        for start in range(0, len(samples), self.eval_batch_size):
            chunk = samples[start:start + self.eval_batch_size]
            out.append(forward_full(chunk, self.params_).probs.data)
        return np.concatenate(out, axis=0)

    def predict_topk(self, X, k=None) -> np.ndarray:
        k = k or self.top_k
        proba = self.predict_proba(X)
        return np.argsort(-proba, axis=1, kind="stable")[:, :k]

    def predict(self, X) -> np.ndarray:
        return self.predict_topk(X, k=1)[:, 0]

    def score(self, X, y=None) -> float:
        """Distance-based accuracy on labeled samples."""
        samples = _as_samples(X)
        ranked = self.predict_topk(samples)
        labels = np.asarray([s.label for s in samples]) if y is None else np.asarray(y)
        return dba_score(ranked, labels, self._dba_config())

    def save(self, path) -> None:
        self._check_fitted()
        save_checkpoint(path, self.params_, self.train_result_.state,
                        meta={"best_val_dba": self.best_val_dba_})

    def load_params(self, path) -> "BeamPredictor":
        params, meta = load_checkpoint(path)
        self.params_ = params
        self.history_ = []
        self.best_val_dba_ = meta.get("best_val_dba", float("nan"))
        return self


class GpsOnlyBeamPredictor(BaseEstimator):
    """Position-only MLP baseline: calibrated GPS readings -> beam distribution.

    Shares loss, optimizer, and schedule with the full model so the two are
    comparable when trained on the same data.
    """

    def __init__(self, beams=64, hidden=128, extent=50.0, lr=1e-3, weight_decay=1e-2,
                 epochs=40, batch_size=32, gamma=2.0, class_weighting=True,
                 delta=5.0, top_k=3, seed=0, verbose=False):
        self.beams = beams
        self.hidden = hidden
        self.extent = extent
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.gamma = gamma
        self.class_weighting = class_weighting
        self.delta = delta
        self.top_k = top_k
        self.seed = seed
        self.verbose = verbose

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("this GpsOnlyBeamPredictor is not fitted; call fit first")

    def _features(self, samples) -> np.ndarray:
        rows = []
        for s in samples:
            g1 = calibrate_gps(s.gps[0], s.calibration)
            g2 = calibrate_gps(s.gps[1], s.calibration)
            rows.append([g1.dx, g1.dy, g2.dx, g2.dy])
        return (np.asarray(rows, dtype=np.float32) / self.extent)

    def _forward(self, features: nd.Tensor) -> nd.Tensor:
        w1, b1, w2, b2, w3, b3 = self.weights_
        h = nd.relu(nd.affine(features, w1, b1))
        h = nd.relu(nd.affine(h, w2, b2))
        return nd.softmax(nd.affine(h, w3, b3), axis=-1)

    def fit(self, X, y=None, *, train_indices=None, val_indices=None):
        handle = _resolve_handle(X) if not isinstance(X, (list, tuple)) else None
        if handle is not None:
            indices = list(train_indices) if train_indices is not None \
                else list(range(len(handle)))
            samples = handle.samples(indices)
        else:
            samples = _as_samples(X)
        features = self._features(samples)
        labels = np.asarray([s.label for s in samples], dtype=np.int64)

        rng = np.random.default_rng(self.seed)
        self.weights_ = (
            nd.init.kaiming_normal((self.hidden, 4), 4, rng),
            nd.init.zeros(self.hidden),
            nd.init.kaiming_normal((self.hidden, self.hidden), self.hidden, rng),
            nd.init.zeros(self.hidden),
            nd.init.xavier_uniform((self.beams, self.hidden), self.hidden, self.beams, rng),
            nd.init.zeros(self.beams),
        )
        named = {f"p{i}": t for i, t in enumerate(self.weights_)}
        alpha = class_weights(labels, self.beams) if self.class_weighting else None
        focal_cfg = FocalLossConfig(gamma=self.gamma, alpha=alpha)
        opt = OptimizerConfig(lr=self.lr, weight_decay=self.weight_decay,
                              epochs=self.epochs, batch_size=self.batch_size)
        state = TrainState(seed=self.seed)
        order_rng = np.random.default_rng([self.seed, 5])
        for epoch in range(self.epochs):
            lr_t = cosine_lr(epoch, opt)
            order = order_rng.permutation(len(samples))
            total = 0.0
            for start in range(0, len(order), self.batch_size):
                chunk = order[start:start + self.batch_size]
                with nd.Tape() as tape:
                    probs = self._forward(nd.tensor(features[chunk]))
                    loss = focal_loss(probs, labels[chunk], focal_cfg)
                    tape.backward(loss)
                adamw_step(named, state, opt, lr_t)
                nd.zero_grads(named.values())
                total += float(loss.data) * len(chunk)
            if self.verbose:
                print(f"gps-only epoch {epoch}: loss {total / len(order):.4f}")
        return self

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        samples = _as_samples(X)
        return self._forward(nd.tensor(self._features(samples))).data

    def predict_topk(self, X, k=None) -> np.ndarray:
        k = k or self.top_k
        return np.argsort(-self.predict_proba(X), axis=1, kind="stable")[:, :k]

    def predict(self, X) -> np.ndarray:
        return self.predict_topk(X, k=1)[:, 0]

    def score(self, X, y=None) -> float:
        samples = _as_samples(X)
        ranked = self.predict_topk(samples)
        labels = np.asarray([s.label for s in samples]) if y is None else np.asarray(y)
        return dba_score(ranked, labels, DbaConfig(k=self.top_k, delta=self.delta))
